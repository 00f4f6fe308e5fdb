"""Symmetric quadrature rules on the reference triangle and Lagrange basis tabulation.

Rules are stored in barycentric coordinates with weights normalized to sum to
one, so an integral over a physical triangle K is ``area(K) * sum(w_q * f(x_q))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Point set on the reference triangle, exact for polynomials up to `order`."""

    order: int
    points: np.ndarray   # (nq, 3) barycentric coordinates
    weights: np.ndarray  # (nq,), sum to 1


def _sym3(a: float, b: float) -> list[tuple[float, float, float]]:
    # the three distinct cyclic placements of a multiplicity-2 barycentric point
    return [(a, b, b), (b, a, b), (b, b, a)]


def _sym6(a: float, b: float, c: float) -> list[tuple[float, float, float]]:
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _rule(order: int, groups: list[tuple[float, list]]) -> QuadratureRule:
    pts: list[tuple[float, float, float]] = []
    wts: list[float] = []
    for w, placements in groups:
        for p in placements:
            pts.append(p)
            wts.append(w)
    points = np.array(pts, dtype=float)
    weights = np.array(wts, dtype=float)
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(order=order, points=points, weights=weights)


# Degree-2 rule: edge-midpoint companion (3 interior points).
_RULE_ORDER_2 = _rule(2, [(1.0 / 3.0, _sym3(2.0 / 3.0, 1.0 / 6.0))])

# Degree-4 rule, 6 points.
_RULE_ORDER_4 = _rule(4, [
    (0.22338158967801146570, _sym3(0.10810301816807022736, 0.44594849091596488632)),
    (0.10995174365532186764, _sym3(0.81684757298045851308, 0.09157621350977074346)),
])

# Degree-6 rule, 12 points.
_RULE_ORDER_6 = _rule(6, [
    (0.050844906370206816921, _sym3(0.87382197101699554332, 0.063089014491502228340)),
    (0.11678627572637936603, _sym3(0.50142650965817915742, 0.24928674517091042129)),
    (0.082851075618373575194,
     _sym6(0.053145049844816947353, 0.31035245103378440542, 0.63650249912139864723)),
])

_RULES = (_RULE_ORDER_2, _RULE_ORDER_4, _RULE_ORDER_6)


def triangle_rule(order: int) -> QuadratureRule:
    """Smallest bundled rule exact for polynomials of degree `order`."""
    for rule in _RULES:
        if rule.order >= order:
            return rule
    raise ValueError(f"no bundled triangle rule of order {order} (max {_RULES[-1].order})")


def shape_functions(degree: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tabulate Lagrange basis values and reference gradients at barycentric points.

    Local ordering: the three vertices, then (for degree 2) the midpoints of the
    local edges (0,1), (1,2), (2,0). Reference coordinates are (xi, eta) with
    barycentric (1-xi-eta, xi, eta).

    Returns (phi, dphi) with shapes (nq, nl) and (nq, nl, 2).
    """
    lam = np.asarray(points, dtype=float)  # (nq, 3)
    nq = lam.shape[0]
    # gradients of the barycentric coordinates w.r.t. (xi, eta)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        phi = lam.copy()
        dphi = np.broadcast_to(dlam, (nq, 3, 2)).copy()
        return phi, dphi
    if degree == 2:
        edges = ((0, 1), (1, 2), (2, 0))
        phi = np.empty((nq, 6))
        dphi = np.empty((nq, 6, 2))
        for i in range(3):
            phi[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
            dphi[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * dlam[i]
        for k, (i, j) in enumerate(edges):
            phi[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
            dphi[:, 3 + k, :] = 4.0 * (lam[:, i][:, None] * dlam[j] + lam[:, j][:, None] * dlam[i])
        return phi, dphi
    raise ValueError(f"unsupported element degree {degree} (expected 1 or 2)")

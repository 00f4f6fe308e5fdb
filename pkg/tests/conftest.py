import os

# keep BLAS pools quiet so runs are single-threaded and timing checks are stable
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

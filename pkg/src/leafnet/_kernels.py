"""Matrix-multiply kernels with a pinned floating-point summation order.

The deterministic kernel accumulates sequentially over the inner dimension:
for every output element ``C[i, j]`` the products ``A[i, k] * B[k, j]`` are
rounded once and added in increasing ``k`` order, exactly like the scalar
triple-loop definition. This makes the result bit-identical to a naive loop
oracle in any dtype, independent of how the work is vectorized.

When numba is importable the kernel is JIT-compiled (no fastmath, so LLVM may
not reassociate the accumulation); otherwise a vectorized numpy loop over k
produces the same bits, only slower.
"""

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


if _HAVE_NUMBA:

    @njit(cache=True)
    def _mm_seq(a, b, out):
        m, kk = a.shape
        n = b.shape[1]
        for i in range(m):
            for k in range(kk):
                aik = a[i, k]
                for j in range(n):
                    out[i, j] += aik * b[k, j]


def _mm_seq_numpy(a, b, out):
    # k-outer accumulation: per element this is mul-round then add-round,
    # the same sequence as the scalar loop.
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]


def matmul_pinned(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(M,K) @ (K,N) with sequential-k accumulation in the input dtype."""
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    if _HAVE_NUMBA:
        _mm_seq(a, b, out)
    else:
        _mm_seq_numpy(a, b, out)
    return out


def matmul_fast(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """BLAS matmul; summation order unspecified (still run-to-run stable)."""
    return a @ b

"""Hot numeric kernels, each with a numba loop version and a numpy version.

The public names dispatch on :data:`cone_sampler._accel.BACKEND`. Both
versions are always importable so tests and the benchmark can compare them.
Every kernel reduces each output element in a fixed sequential order, so the
result does not depend on how many threads run it.
"""
import numpy as np

from ._accel import BACKEND, njit, prange

# Residual norm below which a projected normal counts as parallel to its center.
DEGENERATE_NORM = 1e-12

_PAIR_CHUNK = 8192
_GEMM_CHUNK = 1024


@njit(parallel=True)
def _rotate_rows_numba(centers, normals, cosines, out, bad):
    n, d = centers.shape
    for r in prange(n):
        dot = 0.0
        for k in range(d):
            dot += normals[r, k] * centers[r, k]
        sq = 0.0
        for k in range(d):
            t = normals[r, k] - dot * centers[r, k]
            sq += t * t
        norm = np.sqrt(sq)
        if norm < DEGENERATE_NORM:
            bad[r] = True
            continue
        bad[r] = False
        s = min(1.0, max(-1.0, cosines[r]))
        theta = np.arccos(s)
        a = np.cos(theta)
        b = np.sin(theta) / norm
        for k in range(d):
            out[r, k] = a * centers[r, k] + b * (normals[r, k] - dot * centers[r, k])


def _rotate_rows_numpy(centers, normals, cosines, out, bad):
    dot = np.einsum("ij,ij->i", normals, centers)
    resid = normals - dot[:, None] * centers
    norm = np.sqrt(np.einsum("ij,ij->i", resid, resid))
    bad[:] = norm < DEGENERATE_NORM
    theta = np.arccos(np.clip(cosines, -1.0, 1.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(bad, 0.0, np.sin(theta) / np.where(bad, 1.0, norm))
    out[:] = np.cos(theta)[:, None] * centers + b[:, None] * resid
    out[bad] = 0.0


def rotate_rows(centers, normals, cosines, backend=None):
    """Rotate each center toward its projected normal by ``arccos(cosine)``.

    Row ``r`` of the result is ``cos(t) c + sin(t) u`` with ``t = arccos(s_r)``
    and ``u`` the unit residual of ``normals[r]`` after removing its component
    along ``centers[r]``. Returns ``(out, bad)``; rows whose residual norm is
    below :data:`DEGENERATE_NORM` are flagged in ``bad`` and left as zeros.
    """
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    normals = np.ascontiguousarray(normals, dtype=np.float64)
    cosines = np.ascontiguousarray(cosines, dtype=np.float64)
    if centers.shape != normals.shape or centers.ndim != 2:
        raise ValueError(f"centers {centers.shape} and normals {normals.shape} must be equal 2-D shapes")
    if cosines.shape != (centers.shape[0],):
        raise ValueError(f"cosines must have shape ({centers.shape[0]},), got {cosines.shape}")
    out = np.zeros_like(centers)
    bad = np.zeros(centers.shape[0], dtype=np.bool_)
    if centers.shape[0]:
        kernel = _rotate_rows_numba if (backend or BACKEND) == "numba" else _rotate_rows_numpy
        kernel(centers, normals, cosines, out, bad)
    return out, bad


@njit(parallel=True)
def _pair_dots_numba(x, ia, ib, out):
    d = x.shape[1]
    for p in prange(ia.shape[0]):
        i = ia[p]
        j = ib[p]
        acc = 0.0
        for k in range(d):
            acc += x[i, k] * x[j, k]
        out[p] = acc


def _pair_dots_numpy(x, ia, ib, out):
    for lo in range(0, ia.shape[0], _PAIR_CHUNK):
        hi = lo + _PAIR_CHUNK
        out[lo:hi] = np.einsum("ij,ij->i", x[ia[lo:hi]], x[ib[lo:hi]])


def pair_dots(x, ia, ib, backend=None):
    """Inner products ``<x[ia[p]], x[ib[p]]>`` for every index pair ``p``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    ia = np.ascontiguousarray(ia, dtype=np.int64)
    ib = np.ascontiguousarray(ib, dtype=np.int64)
    if ia.shape != ib.shape or ia.ndim != 1:
        raise ValueError("index arrays must be 1-D and of equal length")
    out = np.empty(ia.shape[0], dtype=np.float64)
    if ia.shape[0]:
        kernel = _pair_dots_numba if (backend or BACKEND) == "numba" else _pair_dots_numpy
        kernel(x, ia, ib, out)
    return out


def nearest_neighbor_cosine(vectors):
    """Largest off-diagonal cosine per row of a unit-row matrix.

    Uses blocked BLAS products on both backends; a single row returns -inf.
    """
    v = np.ascontiguousarray(vectors, dtype=np.float64)
    c = v.shape[0]
    best = np.full(c, -np.inf)
    for lo in range(0, c, _GEMM_CHUNK):
        hi = min(c, lo + _GEMM_CHUNK)
        block = v[lo:hi] @ v.T
        block[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
        best[lo:hi] = block.max(axis=1) if c > 1 else -np.inf
    return best

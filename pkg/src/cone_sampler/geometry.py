"""Angular perturbation of unit identity embeddings on the hypersphere.

A perturbed embedding is built by drawing a target cosine ``s`` uniformly on
``[lb, 1]``, projecting a Gaussian draw onto the tangent hyperplane of the
reference ``v`` to get a unit direction ``u``, and rotating::

    v_tilde = cos(theta) v + sin(theta) u,   theta = arccos(s)

so ``|v_tilde| = 1`` and ``<v_tilde, v> = s``. Within a reference set the lower
bound is raised to ``cos(angle(v_i, v_nn) / 2)`` so every sample stays at
least as close to its own identity as to any other.

All math runs in float64 regardless of input dtype.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateInputError, SamplingError
from .rng import as_generator

MAX_REDRAWS = 16
UNIT_TOL = 1e-9
ORTHO_TOL = 1e-6


def _as_vector(v, name="v"):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DegenerateInputError("not-a-vector", f"{name} must be 1-D, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise DegenerateInputError("dimension-too-small", f"{name} has d={arr.shape[0]}, need d >= 2")
    if not np.all(np.isfinite(arr)):
        raise DegenerateInputError("non-finite", f"{name} has non-finite components")
    return arr


def _check_unit(v, name="v"):
    arr = _as_vector(v, name)
    err = abs(np.linalg.norm(arr) - 1.0)
    if err > UNIT_TOL:
        raise DegenerateInputError("not-unit-norm", f"|{name}| deviates from 1 by {err:.3e}")
    return arr


def normalize(v):
    """Return ``v / |v|``; zero-norm or non-finite input raises."""
    arr = _as_vector(v)
    norm = np.linalg.norm(arr)
    if norm == 0.0:
        raise DegenerateInputError("zero-norm", "cannot normalize a zero vector")
    return arr / norm


def normalize_rows(x):
    """Row-wise :func:`normalize` for an ``(n, d)`` array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DegenerateInputError("not-a-matrix", f"expected a 2-D array, got shape {arr.shape}")
    if arr.shape[1] < 2:
        raise DegenerateInputError("dimension-too-small", f"d={arr.shape[1]}, need d >= 2")
    if not np.all(np.isfinite(arr)):
        raise DegenerateInputError("non-finite", "array has non-finite components")
    norms = np.linalg.norm(arr, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError("zero-norm", f"row {zero[0]} has zero norm")
    return arr / norms[:, None]


@dataclass(frozen=True)
class ConeSpec:
    """Spherical cap ``{x : <x, v> >= lower_bound}`` around a center."""

    lower_bound: float

    def __post_init__(self):
        lb = float(self.lower_bound)
        if not (0.0 <= lb <= 1.0):
            raise DegenerateInputError("invalid-cone", f"lower bound must lie in [0, 1], got {lb}")
        object.__setattr__(self, "lower_bound", lb)

    @property
    def max_angle(self):
        return float(np.arccos(self.lower_bound))


@dataclass(frozen=True)
class PerturbationDraw:
    cosine: float
    angle: float
    tangent: np.ndarray


class IdentitySet:
    """Reference identity embeddings with cached nearest-neighbor cosines.

    Arrays are read-only; build a new set instead of mutating one, which keeps
    ``nn_cos`` consistent with ``vectors``.
    """

    def __init__(self, vectors, ids=None):
        v = np.array(vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise DegenerateInputError("empty-identity-set", f"need a non-empty (C, d) array, got shape {v.shape}")
        if v.shape[1] < 2:
            raise DegenerateInputError("dimension-too-small", f"d={v.shape[1]}, need d >= 2")
        if not np.all(np.isfinite(v)):
            raise DegenerateInputError("non-finite", "identity vectors have non-finite components")
        err = np.abs(np.linalg.norm(v, axis=1) - 1.0)
        if err.max() > UNIT_TOL:
            raise DegenerateInputError(
                "not-unit-norm", f"row {int(err.argmax())} deviates from unit norm by {err.max():.3e}"
            )
        ids = np.arange(v.shape[0]) if ids is None else np.array(ids, dtype=np.int64)
        if ids.shape != (v.shape[0],):
            raise DegenerateInputError("id-count-mismatch", f"{ids.shape[0]} ids for {v.shape[0]} vectors")
        if np.unique(ids).size != ids.size:
            raise DegenerateInputError("duplicate-ids", "identity ids must be distinct")
        nn = kernels.nearest_neighbor_cosine(v)
        for arr in (v, ids, nn):
            arr.setflags(write=False)
        self.vectors = v
        self.ids = ids
        self.nn_cos = nn

    @classmethod
    def from_raw(cls, vectors, ids=None):
        """Normalize rows first, then build the set."""
        return cls(normalize_rows(vectors), ids)

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __repr__(self):
        return f"IdentitySet(C={len(self)}, d={self.dim})"


def project_tangent(v, n):
    """Unit residual of ``n`` after removing its component along unit ``v``.

    Returns None when the residual norm falls below the degeneracy threshold.
    """
    v = np.asarray(v, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    resid = n - np.dot(n, v) * v
    norm = np.linalg.norm(resid)
    if norm < kernels.DEGENERATE_NORM:
        return None
    return resid / norm


def sample_tangent(v, rng=None):
    """Uniformly distributed unit vector orthogonal to unit ``v``."""
    v = _check_unit(v)
    rng = as_generator(rng)
    for _ in range(MAX_REDRAWS):
        u = project_tangent(v, rng.standard_normal(v.shape[0]))
        if u is not None:
            return u
    raise SamplingError("tangent-redraw-exhausted", f"{MAX_REDRAWS} normal draws were parallel to v")


def rotate_toward(v, u, theta):
    """``cos(theta) v + sin(theta) u`` for orthonormal ``v, u``, theta in [0, pi/2]."""
    v = _check_unit(v)
    u = _check_unit(u, "u")
    if u.shape != v.shape:
        raise DegenerateInputError("shape-mismatch", f"u has d={u.shape[0]}, v has d={v.shape[0]}")
    ortho = abs(float(np.dot(u, v)))
    if ortho > ORTHO_TOL:
        raise DegenerateInputError("not-orthogonal", f"|<u, v>| = {ortho:.3e} exceeds {ORTHO_TOL}")
    theta = float(theta)
    if not (0.0 <= theta <= np.pi / 2):
        raise DegenerateInputError("angle-out-of-range", f"theta={theta} outside [0, pi/2]")
    return np.cos(theta) * v + np.sin(theta) * u


def sample_cosine(cone, rng=None, size=None):
    """Draw ``s ~ U[lb, 1]`` and return ``(s, arccos(s))``."""
    rng = as_generator(rng)
    s = rng.uniform(cone.lower_bound, 1.0, size)
    return s, np.arccos(np.clip(s, -1.0, 1.0))


def draw_perturbation(v, cone, rng=None):
    """One full draw: cosine, angle and tangent direction for unit ``v``."""
    rng = as_generator(rng)
    s, theta = sample_cosine(cone, rng)
    return PerturbationDraw(float(s), float(theta), sample_tangent(v, rng))


def adjusted_lower_bound(i, identity_set, base):
    """Raise ``base`` so samples of identity ``i`` cannot cross a bisector.

    Returns ``max(lb, cos(angle(v_i, v_nn) / 2))``; a one-identity set has no
    competitor and keeps ``base``.
    """
    if len(identity_set) == 1:
        return base
    nn = float(np.clip(identity_set.nn_cos[i], -1.0, 1.0))
    half = float(np.cos(np.arccos(nn) / 2.0))
    return ConeSpec(min(1.0, max(base.lower_bound, half)))


def adjusted_lower_bounds(identity_set, base):
    """Vectorized :func:`adjusted_lower_bound` over every identity."""
    if len(identity_set) == 1:
        return np.array([base.lower_bound])
    half = np.cos(np.arccos(np.clip(identity_set.nn_cos, -1.0, 1.0)) / 2.0)
    return np.minimum(1.0, np.maximum(base.lower_bound, half))


def rotate_with_redraw(centers, cosines, normals, rng, backend=None):
    """Run :func:`kernels.rotate_rows`, redrawing normals for degenerate rows."""
    out, bad = kernels.rotate_rows(centers, normals, cosines, backend)
    for _ in range(MAX_REDRAWS):
        if not bad.any():
            return out
        idx = np.flatnonzero(bad)
        fresh = rng.standard_normal((idx.size, centers.shape[1]))
        fixed, still = kernels.rotate_rows(centers[idx], fresh, cosines[idx], backend)
        out[idx] = fixed
        bad[idx] = still
    if bad.any():
        raise SamplingError("tangent-redraw-exhausted", f"{MAX_REDRAWS} normal draws were parallel to the center")
    return out


def perturb_identity(i, identity_set, base, k, rng=None, backend=None):
    """``k`` perturbed copies of identity ``i`` inside its adjusted cone.

    The generator is consumed in a fixed order: ``k`` uniforms for the target
    cosines, then a ``(k, d)`` block of normals.
    """
    if k < 1:
        raise DegenerateInputError("invalid-count", f"k must be >= 1, got {k}")
    rng = as_generator(rng)
    cone = adjusted_lower_bound(i, identity_set, base)
    v = identity_set.vectors[i]
    s, _ = sample_cosine(cone, rng, k)
    normals = rng.standard_normal((k, v.shape[0]))
    centers = np.broadcast_to(v, (k, v.shape[0]))
    return rotate_with_redraw(centers, s, normals, rng, backend)


def noise_perturb(v, sigma, rng=None, size=None, noise=None):
    """Euclidean baseline: ``normalize(v + sigma * eps)`` with ``eps ~ N(0, I)``.

    Unlike the angular sampler this gives no bound on the angle to ``v``.
    Pass ``noise`` to inject ``eps`` directly (shape ``(d,)`` or ``(size, d)``).
    """
    v = _check_unit(v)
    sigma = float(sigma)
    if not sigma > 0.0 or not np.isfinite(sigma):
        raise DegenerateInputError("invalid-sigma", f"sigma must be a positive finite number, got {sigma}")
    if noise is not None:
        out = np.asarray(v + sigma * np.asarray(noise, dtype=np.float64))
        norms = np.linalg.norm(out, axis=-1, keepdims=True)
        if np.any(norms == 0.0):
            raise DegenerateInputError("zero-norm", "injected noise cancels v exactly")
        return out / norms
    rng = as_generator(rng)
    n = 1 if size is None else int(size)
    out = v + sigma * rng.standard_normal((n, v.shape[0]))
    norms = np.linalg.norm(out, axis=1)
    for _ in range(MAX_REDRAWS):
        bad = np.flatnonzero(norms < kernels.DEGENERATE_NORM)
        if not bad.size:
            break
        out[bad] = v + sigma * rng.standard_normal((bad.size, v.shape[0]))
        norms[bad] = np.linalg.norm(out[bad], axis=1)
    else:
        if np.any(norms < kernels.DEGENERATE_NORM):
            raise SamplingError("noise-redraw-exhausted", f"{MAX_REDRAWS} noise draws cancelled v")
    out /= norms[:, None]
    return out[0] if size is None else out


def cfg_combine(cond, uncond, scale):
    """Classifier-free guidance: ``(1 + w) cond - w uncond``.

    Evaluated as ``cond + w (cond - uncond)`` so that ``w = 0`` and
    ``cond == uncond`` both return ``cond`` bit for bit.
    """
    cond = np.asarray(cond, dtype=np.float64)
    uncond = np.asarray(uncond, dtype=np.float64)
    if cond.shape != uncond.shape:
        raise DegenerateInputError("length-mismatch", f"cond {cond.shape} vs uncond {uncond.shape}")
    if cond.size < 1:
        raise DegenerateInputError("empty-prediction", "noise predictions must have at least one component")
    if not (np.all(np.isfinite(cond)) and np.all(np.isfinite(uncond))):
        raise DegenerateInputError("non-finite", "noise predictions must be finite")
    w = float(scale)
    if not np.isfinite(w) or w < 0.0:
        raise DegenerateInputError("invalid-guidance-scale", f"omega must be finite and >= 0, got {w}")
    return cond + w * (cond - uncond)

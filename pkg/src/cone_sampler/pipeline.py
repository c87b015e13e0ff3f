"""Synthetic labeled embedding datasets built by angular sampling.

The image-synthesis and re-embedding roundtrip of a real generator is
replaced by an observation model: every generated embedding is jittered once
more inside a small cone of cosine ``observation_cone`` (1 = noiseless).

Identity ``i`` draws everything from ``rng.substream(base_seed, i)`` in a
fixed order (perturbation cosines, perturbation normals, observation
cosines, observation normals), so outputs are independent of thread count.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry, kernels, metrics
from ._accel import thread_cap
from .errors import DegenerateInputError, InfeasibleConfigError, SamplingError
from .rng import as_generator, substream

log = logging.getLogger(__name__)

DEFAULT_OBSERVATION_CONE = 0.95
_ROWS_PER_CHUNK = 16384
_REFGEN_BLOCK = 256


@dataclass(frozen=True)
class LabeledEmbeddingSet:
    embeddings: np.ndarray
    labels: np.ndarray
    class_count: int | None = None

    def __post_init__(self):
        x = np.asarray(self.embeddings)
        labels = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DegenerateInputError("not-a-matrix", f"embeddings must be 2-D, got shape {x.shape}")
        if x.shape[1] < 2:
            raise DegenerateInputError("dimension-too-small", f"d={x.shape[1]}, need d >= 2")
        if labels.shape != (x.shape[0],):
            raise DegenerateInputError("label-count-mismatch", f"{labels.size} labels for {x.shape[0]} embeddings")
        if labels.size and labels.min() < 0:
            raise DegenerateInputError("negative-label", "labels must be non-negative")
        c = self.class_count
        if c is None:
            c = int(labels.max()) + 1 if labels.size else 0
        elif labels.size and labels.max() >= c:
            raise DegenerateInputError("label-out-of-range", f"label {labels.max()} >= class_count {c}")
        object.__setattr__(self, "embeddings", x)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_count", int(c))

    def __len__(self):
        return self.embeddings.shape[0]

    @property
    def dim(self):
        return self.embeddings.shape[1]

    @property
    def samples_per_class(self):
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass(frozen=True)
class GenerationConfig:
    lower_bound: float
    samples_per_identity: int = 50
    base_seed: int = 1337
    dimension: int | None = None
    observation_cone: float = DEFAULT_OBSERVATION_CONE

    def __post_init__(self):
        geometry.ConeSpec(self.lower_bound)
        if self.samples_per_identity < 1:
            raise DegenerateInputError("invalid-count", "samples_per_identity must be >= 1")
        if self.dimension is not None and self.dimension < 2:
            raise DegenerateInputError("dimension-too-small", f"d={self.dimension}, need d >= 2")
        if not (0.0 < self.observation_cone <= 1.0):
            raise DegenerateInputError("invalid-cone", f"observation_cone must lie in (0, 1], got {self.observation_cone}")
        if not (0 <= int(self.base_seed) < 2 ** 64):
            raise DegenerateInputError("invalid-seed", "base_seed must fit in an unsigned 64-bit integer")

    @property
    def cone(self):
        return geometry.ConeSpec(self.lower_bound)


def generate_reference_set(count, dim, max_pairwise_cos, rng=None):
    """``count`` uniform unit vectors whose pairwise cosines stay under a cap.

    Candidates are accepted in draw order, each checked against every vector
    already accepted. ``1000 * count`` consecutive rejections mean the cap is
    too tight for the dimension and raise :class:`InfeasibleConfigError`.
    """
    if count < 1:
        raise DegenerateInputError("invalid-count", f"need at least one identity, got {count}")
    if dim < 2:
        raise DegenerateInputError("dimension-too-small", f"d={dim}, need d >= 2")
    cap = float(max_pairwise_cos)
    if not (-1.0 <= cap < 1.0):
        raise DegenerateInputError("invalid-cap", f"max_pairwise_cos must lie in [-1, 1), got {cap}")
    rng = as_generator(rng)
    accepted = np.empty((count, dim))
    n = 0
    rejections = 0
    limit = 1000 * count
    while n < count:
        block = rng.standard_normal((_REFGEN_BLOCK, dim))
        block /= np.linalg.norm(block, axis=1)[:, None]
        prior = (block @ accepted[:n].T).max(axis=1) if n else np.full(_REFGEN_BLOCK, -np.inf)
        start = n
        for b in range(_REFGEN_BLOCK):
            cand = block[b]
            ok = prior[b] <= cap
            if ok and n > start:
                ok = (accepted[start:n] @ cand).max() <= cap
            if ok:
                accepted[n] = cand
                n += 1
                rejections = 0
                if n == count:
                    break
            else:
                rejections += 1
                if rejections >= limit:
                    raise InfeasibleConfigError(
                        "reference-cap-infeasible",
                        f"{rejections} consecutive rejections after accepting {n}/{count} vectors; "
                        f"pairwise cosine cap {cap} is too tight for d={dim}",
                    )
    return geometry.IdentitySet(accepted)


def observe(e, observation_cone, rng=None):
    """Jitter one embedding inside the cone ``<out, e> >= observation_cone``."""
    oc = float(observation_cone)
    if not (0.0 < oc <= 1.0):
        raise DegenerateInputError("invalid-cone", f"observation_cone must lie in (0, 1], got {oc}")
    e = geometry.normalize(e)
    if oc == 1.0:
        return e
    rng = as_generator(rng)
    s, _ = geometry.sample_cosine(geometry.ConeSpec(oc), rng)
    return geometry.rotate_toward(e, geometry.sample_tangent(e, rng), float(np.arccos(min(1.0, s))))


@dataclass
class _Draws:
    rng: np.random.Generator
    s: np.ndarray
    n: np.ndarray
    so: np.ndarray | None = None
    no: np.ndarray | None = None


def _draw_identity(base_seed, i, lb, k, d, oc):
    rng = substream(base_seed, i)
    s = rng.uniform(lb, 1.0, k)
    n = rng.standard_normal((k, d))
    if oc == 1.0:
        return _Draws(rng, s, n)
    so = rng.uniform(oc, 1.0, k)
    no = rng.standard_normal((k, d))
    return _Draws(rng, s, n, so, no)


def _rotate_chunk(centers, cosines, normals, rngs, k, backend):
    """Kernel call over a chunk; degenerate rows redraw from their own stream."""
    out, bad = kernels.rotate_rows(centers, normals, cosines, backend)
    for _ in range(geometry.MAX_REDRAWS):
        if not bad.any():
            return out
        for r in np.flatnonzero(bad):
            fresh = rngs[r // k].standard_normal((1, centers.shape[1]))
            row, still = kernels.rotate_rows(centers[r:r + 1], fresh, cosines[r:r + 1], backend)
            out[r] = row[0]
            bad[r] = still[0]
    if bad.any():
        raise SamplingError("tangent-redraw-exhausted", f"{geometry.MAX_REDRAWS} normal draws were parallel to the center")
    return out


def generate_dataset(identity_set, cfg, dtype=np.float64, threads=None, backend=None):
    """``K`` observed angular perturbations per reference identity.

    Labels are identity indices ``0..C-1``. Computation is float64; ``dtype``
    only sets the storage type of the returned embeddings.
    """
    c, d = len(identity_set), identity_set.dim
    if cfg.dimension is not None and cfg.dimension != d:
        raise DegenerateInputError("dimension-mismatch", f"config d={cfg.dimension}, identity set d={d}")
    k = cfg.samples_per_identity
    oc = float(cfg.observation_cone)
    lbs = geometry.adjusted_lower_bounds(identity_set, cfg.cone)
    out = np.empty((c * k, d), dtype=dtype)
    workers = threads or thread_cap() or 1
    per_chunk = max(1, _ROWS_PER_CHUNK // k)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for lo in range(0, c, per_chunk):
            ids = range(lo, min(c, lo + per_chunk))
            draws = list(pool.map(lambda i: _draw_identity(cfg.base_seed, i, lbs[i], k, d, oc), ids))
            rngs = [dr.rng for dr in draws]
            centers = np.repeat(identity_set.vectors[lo:lo + len(draws)], k, axis=0)
            x = _rotate_chunk(centers, np.concatenate([dr.s for dr in draws]),
                              np.concatenate([dr.n for dr in draws]), rngs, k, backend)
            if oc < 1.0:
                x = _rotate_chunk(x, np.concatenate([dr.so for dr in draws]),
                                  np.concatenate([dr.no for dr in draws]), rngs, k, backend)
            out[lo * k:(lo + len(draws)) * k] = x
    labels = np.repeat(np.arange(c, dtype=np.int64), k)
    return LabeledEmbeddingSet(out, labels, c)


@dataclass(frozen=True)
class SweepPoint:
    setting: float
    report: metrics.VerificationReport
    c_intra: float | None = None
    d_intra: float | None = None


@dataclass(frozen=True)
class SweepResult:
    parameter: str
    points: tuple = field(default_factory=tuple)

    def __post_init__(self):
        settings = [p.setting for p in self.points]
        if settings != sorted(set(settings)):
            raise ValueError("sweep settings must be distinct and sorted ascending")

    @property
    def settings(self):
        return [p.setting for p in self.points]

    def series(self, name):
        """Per-setting values of a report field, e.g. ``"eer"`` or ``"g_mean"``."""
        out = []
        for p in self.points:
            if name in ("c_intra", "d_intra"):
                out.append(getattr(p, name))
            elif hasattr(p.report.stats, name):
                out.append(getattr(p.report.stats, name))
            else:
                out.append(getattr(p.report, name))
        return out


def run_lb_sweep(identity_set, cfg, lbs, policy=None, r=0.3, threads=None, backend=None):
    """Generate and evaluate one dataset per lower bound.

    Every setting reuses ``cfg.base_seed`` so only the lower bound varies.
    Impostor pairs default to 10x the genuine count, seeded with the base seed.
    """
    values = sorted({float(lb) for lb in lbs})
    if not values:
        raise DegenerateInputError("empty-sweep", "need at least one lower bound")
    policy = policy or metrics.PairingPolicy(seed=cfg.base_seed)
    points = []
    for lb in values:
        data = generate_dataset(identity_set, replace(cfg, lower_bound=lb), threads=threads, backend=backend)
        report = metrics.verification_report(metrics.build_score_set(data, policy, backend))
        c_intra = metrics.intra_class_consistency(data, r)
        d_intra = metrics.intra_class_diversity(data) if cfg.samples_per_identity >= 2 else None
        log.info("lb=%.3f eer=%s g_mean=%s", lb, report.eer, report.stats.g_mean)
        points.append(SweepPoint(lb, report, c_intra, d_intra))
    return SweepResult("lower_bound", tuple(points))

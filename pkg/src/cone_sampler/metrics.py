"""Identity-separability and intra-class diversity/consistency metrics.

Conventions, fixed so results are reproducible to the bit:

* FMR(t) is the fraction of impostor scores ``>= t``; FNMR(t) the fraction
  of genuine scores ``< t``. Thresholds range over the merged score support.
* EER is ``(FMR + FNMR) / 2`` at the lowest threshold minimizing
  ``|FMR - FNMR|``.
* Standard deviations use the population convention (divide by ``n``).
* FDR is ``(mu_G - mu_I)**2 / (sigma_G**2 + sigma_I**2)``.

Metrics that cannot be computed raise :class:`UndefinedMetricError`;
:func:`verification_report` turns those into named flags.
"""
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateInputError, UndefinedMetricError


class MetricWarning(UserWarning):
    pass


SCORE_SLACK = 1e-6
FMR100_TARGET = 0.01


@dataclass(frozen=True)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        for name in ("genuine", "impostor"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if not np.all(np.isfinite(arr)):
                raise DegenerateInputError("non-finite-score", f"{name} scores contain non-finite values")
            if arr.size and (arr.min() < -1 - SCORE_SLACK or arr.max() > 1 + SCORE_SLACK):
                raise DegenerateInputError("score-out-of-range", f"{name} scores must lie in [-1, 1]")
            object.__setattr__(self, name, np.clip(arr, -1.0, 1.0))

    @property
    def counts(self):
        return int(self.genuine.size), int(self.impostor.size)


@dataclass(frozen=True)
class DistributionStats:
    g_mean: float | None
    g_std: float | None
    i_mean: float | None
    i_std: float | None


@dataclass(frozen=True)
class VerificationReport:
    eer: float | None
    fmr100: float | None
    stats: DistributionStats
    fdr: float | None
    pair_counts: tuple
    flags: tuple = ()

    def to_dict(self):
        out = {"eer": self.eer, "fmr100": self.fmr100}
        out.update(asdict(self.stats))
        out["fdr"] = self.fdr
        out["pair_counts"] = {"genuine": self.pair_counts[0], "impostor": self.pair_counts[1]}
        out["flags"] = list(self.flags)
        return out


@dataclass(frozen=True)
class PairingPolicy:
    """How genuine and impostor pairs are chosen.

    ``genuine`` and ``impostor`` are either ``"all"`` or a pair count. An
    impostor count of None means ``impostor_mult`` times the genuine count.
    """

    genuine: object = "all"
    impostor: object = None
    impostor_mult: int = 10
    seed: int = 1337

    def __post_init__(self):
        for name in ("genuine", "impostor"):
            mode = getattr(self, name)
            if mode == "all" or (name == "impostor" and mode is None):
                continue
            if isinstance(mode, bool) or not isinstance(mode, (int, np.integer)) or mode < 1:
                raise DegenerateInputError("invalid-pairing", f"{name} must be 'all' or a count >= 1, got {mode!r}")
        if self.impostor_mult < 1:
            raise DegenerateInputError("invalid-pairing", f"impostor_mult must be >= 1, got {self.impostor_mult}")


def _labels_of(data):
    labels = getattr(data, "labels", data)
    return np.asarray(labels, dtype=np.int64)


def _class_groups(labels):
    """Indices grouped by label, as ``(classes, order, starts, sizes)``."""
    order = np.argsort(labels, kind="stable")
    classes, starts, sizes = np.unique(labels[order], return_index=True, return_counts=True)
    return classes, order, starts, sizes


def _genuine_all(labels):
    _, order, starts, sizes = _class_groups(labels)
    ia, ib = [], []
    for start, m in zip(starts, sizes):
        if m < 2:
            continue
        members = order[start:start + m]
        r, c = np.triu_indices(m, 1)
        ia.append(members[r])
        ib.append(members[c])
    if not ia:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(ia), np.concatenate(ib)


def _genuine_sampled(labels, n, rng):
    _, order, starts, sizes = _class_groups(labels)
    pos = np.empty(labels.size, dtype=np.int64)
    pos[order] = np.arange(labels.size)
    eligible = order[np.repeat(sizes >= 2, sizes)]
    if eligible.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    group_of = np.repeat(np.arange(sizes.size), sizes)
    a = eligible[rng.integers(0, eligible.size, n)]
    g = group_of[pos[a]]
    offset = rng.integers(0, sizes[g] - 1)
    own = pos[a] - starts[g]
    offset = offset + (offset >= own)
    return a, order[starts[g] + offset]


def _impostor_all(labels):
    ia, ib = [], []
    for i in range(labels.size - 1):
        j = np.flatnonzero(labels[i + 1:] != labels[i]) + i + 1
        ia.append(np.full(j.size, i, dtype=np.int64))
        ib.append(j)
    if not ia:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(ia), np.concatenate(ib)


def _impostor_sampled(labels, n, rng):
    a = rng.integers(0, labels.size, n)
    b = rng.integers(0, labels.size, n)
    clash = np.flatnonzero(labels[a] == labels[b])
    while clash.size:
        a[clash] = rng.integers(0, labels.size, clash.size)
        b[clash] = rng.integers(0, labels.size, clash.size)
        clash = clash[labels[a[clash]] == labels[b[clash]]]
    return a, b


def pair_indices(labels, policy=None):
    """Genuine and impostor index pairs chosen by ``policy``.

    Returns ``((ga, gb), (ia, ib))``. Sampled modes draw from a generator
    seeded with ``policy.seed``; genuine pairs are drawn before impostors.
    """
    policy = policy or PairingPolicy()
    labels = _labels_of(labels)
    rng = np.random.default_rng(policy.seed)
    if policy.genuine == "all":
        genuine = _genuine_all(labels)
    else:
        genuine = _genuine_sampled(labels, int(policy.genuine), rng)
    if np.unique(labels).size < 2:
        impostor = (np.empty(0, np.int64), np.empty(0, np.int64))
    elif policy.impostor == "all":
        impostor = _impostor_all(labels)
    else:
        n = policy.impostor if policy.impostor is not None else policy.impostor_mult * genuine[0].size
        impostor = _impostor_sampled(labels, int(n), rng) if n else (np.empty(0, np.int64),) * 2
    return genuine, impostor


def build_score_set(data, policy=None, backend=None):
    """Cosine-similarity genuine/impostor scores for a labeled embedding set."""
    x = np.asarray(data.embeddings, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    x = x / norms[:, None]
    (ga, gb), (ia, ib) = pair_indices(data.labels, policy)
    if ia.size == 0:
        warnings.warn("fewer than two identities: impostor scores are empty", MetricWarning, stacklevel=2)
    return ScoreSet(kernels.pair_dots(x, ga, gb, backend), kernels.pair_dots(x, ia, ib, backend))


def _require_both(scores, metric):
    g, i = scores.counts
    if g == 0 or i == 0:
        raise UndefinedMetricError(f"{metric}-undefined", f"needs genuine and impostor scores, got {g} and {i}")


def error_rates(scores):
    """``(thresholds, fmr, fnmr)`` over the sorted merged score support."""
    gen = np.sort(scores.genuine)
    imp = np.sort(scores.impostor)
    thresholds = np.unique(np.concatenate([gen, imp]))
    fnmr = np.searchsorted(gen, thresholds, side="left") / gen.size
    fmr = (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
    return thresholds, fmr, fnmr


def compute_eer(scores):
    _require_both(scores, "eer")
    _, fmr, fnmr = error_rates(scores)
    k = int(np.argmin(np.abs(fmr - fnmr)))
    return float((fmr[k] + fnmr[k]) / 2)


def _fmr100(scores):
    _require_both(scores, "fmr100")
    _, fmr, fnmr = error_rates(scores)
    feasible = np.flatnonzero(fmr <= FMR100_TARGET)
    if feasible.size == 0:
        return float(fnmr[-1]), False
    return float(fnmr[feasible].min()), True


def compute_fmr100(scores):
    """Lowest FNMR over thresholds with FMR <= 1%.

    Warns when fewer than 100 impostor scores exist, and when no threshold in
    the support reaches the target (the strictest threshold's FNMR is
    returned in that case).
    """
    if 0 < scores.impostor.size < 100:
        warnings.warn("fewer than 100 impostor scores; FMR100 is coarse", MetricWarning, stacklevel=2)
    value, feasible = _fmr100(scores)
    if not feasible:
        warnings.warn("no threshold reaches FMR <= 1%", MetricWarning, stacklevel=2)
    return value


def score_stats(scores):
    def side(arr):
        if arr.size == 0:
            return None, None
        return float(arr.mean()), float(arr.std())

    g_mean, g_std = side(scores.genuine)
    i_mean, i_std = side(scores.impostor)
    return DistributionStats(g_mean, g_std, i_mean, i_std)


def compute_fdr(stats):
    if None in (stats.g_mean, stats.g_std, stats.i_mean, stats.i_std):
        raise UndefinedMetricError("fdr-undefined", "both score distributions must be present")
    denom = stats.g_std ** 2 + stats.i_std ** 2
    if denom <= 0.0:
        raise UndefinedMetricError("fdr-undefined", "both score distributions have zero variance")
    return (stats.g_mean - stats.i_mean) ** 2 / denom


def verification_report(scores):
    """All separability metrics for one score set, with undefined ones flagged."""
    flags = []
    try:
        eer = compute_eer(scores)
    except UndefinedMetricError:
        eer = None
        flags.append("eer-undefined")
    try:
        fmr100, feasible = _fmr100(scores)
        if not feasible:
            flags.append("fmr100-target-unreachable")
        if scores.impostor.size < 100:
            flags.append("fmr100-few-impostors")
    except UndefinedMetricError:
        fmr100 = None
        flags.append("fmr100-undefined")
    stats = score_stats(scores)
    if stats.g_mean is None:
        flags.append("genuine-empty")
    if stats.i_mean is None:
        flags.append("impostor-empty")
    try:
        fdr = compute_fdr(stats)
    except UndefinedMetricError:
        fdr = None
        flags.append("fdr-undefined")
    return VerificationReport(eer, fmr100, stats, fdr, scores.counts, tuple(flags))


def _grouped(data):
    x = np.asarray(data.embeddings, dtype=np.float64)
    classes, order, starts, sizes = _class_groups(_labels_of(data))
    return x, classes, order, starts, sizes


def intra_class_consistency(data, r=0.3):
    """Class-averaged fraction of samples with cosine to the class mean ``>= r``.

    The class mean is the raw average of member embeddings (not renormalized).
    Classes whose mean is the zero vector are skipped with a warning.
    """
    x, classes, order, starts, sizes = _grouped(data)
    xs = x[order]
    centers = np.add.reduceat(xs, starts, axis=0) / sizes[:, None]
    cnorm = np.linalg.norm(centers, axis=1)
    owner = np.repeat(np.arange(classes.size), sizes)
    sims = np.einsum("ij,ij->i", xs, centers[owner])
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = sims / (np.linalg.norm(xs, axis=1) * cnorm[owner])
    hits = np.add.reduceat((sims >= r).astype(np.float64), starts) / sizes
    ok = cnorm > 0
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} class(es) have a zero-norm center and are excluded",
                      MetricWarning, stacklevel=2)
    if not ok.any():
        raise UndefinedMetricError("c-intra-undefined", "every class center has zero norm")
    return float(hits[ok].mean())


def cosine_distance(a, b):
    return 1.0 - float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def intra_class_diversity(data, dissimilarity=None):
    """Class-averaged mean dissimilarity over unordered same-class pairs.

    ``dissimilarity(a, b)`` defaults to cosine distance. Classes with fewer
    than two members are skipped with a warning.
    """
    x, classes, order, starts, sizes = _grouped(data)
    per_class = []
    for start, m in zip(starts, sizes):
        if m < 2:
            continue
        members = x[order[start:start + m]]
        r, c = np.triu_indices(m, 1)
        if dissimilarity is None:
            unit = members / np.linalg.norm(members, axis=1)[:, None]
            d = 1.0 - (unit @ unit.T)[r, c]
        else:
            d = np.array([dissimilarity(members[p], members[q]) for p, q in zip(r, c)], dtype=np.float64)
        per_class.append(d.mean())
    skipped = classes.size - len(per_class)
    if skipped:
        warnings.warn(f"{skipped} class(es) with fewer than 2 samples excluded", MetricWarning, stacklevel=2)
    if not per_class:
        raise UndefinedMetricError("d-intra-undefined", "no class has two or more samples")
    return float(np.mean(per_class))


@dataclass
class AttributeTable:
    """Per-sample attribute channels aligned by index with an embedding set."""

    columns: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {name: len(col) for name, col in self.columns.items()}
        if len(set(lengths.values())) > 1:
            raise DegenerateInputError("ragged-attributes", f"channel lengths differ: {lengths}")
        self.columns = {name: np.asarray(col) for name, col in self.columns.items()}

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def is_continuous(self, name):
        return np.issubdtype(self.columns[name].dtype, np.number)

    @property
    def channels(self):
        return list(self.columns)


def _aligned(data, attrs, channel):
    labels = _labels_of(data)
    if channel not in attrs.columns:
        raise DegenerateInputError("unknown-channel", f"no attribute channel {channel!r}")
    col = attrs.columns[channel]
    if col.shape[0] != labels.shape[0]:
        raise DegenerateInputError("attribute-misaligned", f"{col.shape[0]} attribute rows for {labels.shape[0]} samples")
    return labels, col


def bin_values(values, bins, value_range=None):
    """Uniform-bin indices for continuous values; out-of-range values clamp."""
    values = np.asarray(values, dtype=np.float64)
    if np.ndim(bins) == 0:
        if value_range is None:
            raise DegenerateInputError("missing-range", "an integer bin count needs an explicit value range")
        lo, hi = map(float, value_range)
        edges = np.linspace(lo, hi, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
    nb = edges.size - 1
    if nb < 1 or not np.all(np.diff(edges) > 0):
        raise DegenerateInputError("invalid-bins", "bin edges must be strictly increasing with at least one bin")
    return np.clip(np.searchsorted(edges, values, side="right") - 1, 0, nb - 1)


def attribute_entropy(data, attrs, channel, bins=None, value_range=None):
    """Class-averaged Shannon entropy (nats) of one attribute channel.

    Values are treated as discrete labels unless ``bins`` is given, in which
    case they are binned with :func:`bin_values` first.
    """
    labels, col = _aligned(data, attrs, channel)
    symbols = col if bins is None else bin_values(col, bins, value_range)
    _, codes = np.unique(symbols, return_inverse=True)
    codes = codes.ravel()
    entropies = []
    for cls in np.unique(labels):
        counts = np.bincount(codes[labels == cls])
        p = counts[counts > 0] / counts.sum()
        entropies.append(float(-(p * np.log(p)).sum()))
    return float(np.mean(entropies))


def attribute_std(data, attrs, channels=None):
    """Class-averaged population STD for each continuous channel."""
    channels = channels or [c for c in attrs.channels if attrs.is_continuous(c)]
    out = {}
    for channel in channels:
        labels, col = _aligned(data, attrs, channel)
        if not attrs.is_continuous(channel):
            raise DegenerateInputError("not-continuous", f"channel {channel!r} is not numeric")
        col = col.astype(np.float64)
        out[channel] = float(np.mean([col[labels == cls].std() for cls in np.unique(labels)]))
    return out


@dataclass(frozen=True)
class ScoreHistogram:
    edges: np.ndarray
    genuine: np.ndarray
    impostor: np.ndarray


def _bin_counts(values, edges):
    return np.bincount(bin_values(values, edges), minlength=edges.size - 1)


def score_histogram(scores, bins=100, value_range=(-1.0, 1.0)):
    """Genuine/impostor counts over uniform bins; outliers land in edge bins.

    A value on an interior edge belongs to the upper bin.
    """
    lo, hi = map(float, value_range)
    if bins < 1 or not lo < hi:
        raise DegenerateInputError("invalid-bins", f"need bins >= 1 and lo < hi, got {bins}, [{lo}, {hi}]")
    edges = np.linspace(lo, hi, bins + 1)
    return ScoreHistogram(edges, _bin_counts(scores.genuine, edges), _bin_counts(scores.impostor, edges))


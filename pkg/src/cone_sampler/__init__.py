"""Cone-constrained angular perturbation of identity embeddings, plus the
separability and intra-class metrics used to evaluate the resulting datasets."""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConeSamplerError,
    DegenerateInputError,
    InfeasibleConfigError,
    InputFormatError,
    SamplingError,
    UndefinedMetricError,
)
from .geometry import (  # noqa: E402
    ConeSpec,
    IdentitySet,
    PerturbationDraw,
    adjusted_lower_bound,
    cfg_combine,
    noise_perturb,
    normalize,
    perturb_identity,
    rotate_toward,
    sample_cosine,
    sample_tangent,
)
from .metrics import (  # noqa: E402
    AttributeTable,
    DistributionStats,
    PairingPolicy,
    ScoreSet,
    VerificationReport,
    attribute_entropy,
    attribute_std,
    build_score_set,
    compute_eer,
    compute_fdr,
    compute_fmr100,
    intra_class_consistency,
    intra_class_diversity,
    score_histogram,
    score_stats,
    verification_report,
)
from .pipeline import (  # noqa: E402
    GenerationConfig,
    LabeledEmbeddingSet,
    SweepResult,
    generate_dataset,
    generate_reference_set,
    observe,
    run_lb_sweep,
)

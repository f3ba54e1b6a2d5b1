from .der import (  # noqa
    DEFAULT_COLLAR,
    DerBreakdown,
    compute_der,
    compute_der_per_recording,
    merge_intervals,
)
from .verification import (  # noqa
    DcfParams,
    OperatingPoint,
    compute_eer,
    compute_min_dcf,
    eer_from_scores,
    min_dcf_from_scores,
)

from .normalization import (  # noqa
    MeanVector,
    apply_mean_norm,
    compute_mean,
    length_norm,
    length_norm_set,
)
from .plda import (  # noqa
    PldaModel,
    PldaScorer,
    PldaTrainResult,
    plda_adapt,
    plda_llr,
    plda_loglik,
    plda_train,
)
from .scoring import (  # noqa
    CosineBackend,
    PldaBackend,
    ScoringBackend,
    cosine_score,
    fuse_scores,
    score_trials,
)

"""PLDA and neural discriminant analysis (NDA) for open-set verification.

The package provides a classical two-covariance PLDA back-end, an invertible
coupling-flow Gaussianizer with exact log-determinant accounting, the NDA
model that couples the two, preprocessing (length normalization, LDA),
detection metrics (EER, minDCF), Gaussianality diagnostics, and a synthetic
corpus generator with a ground-truth oracle scorer.
"""

from ndakit.vecstore import (
    EmbeddingSet,
    SpeakerBatch,
    Trial,
    TrialList,
    partition_speaker_batches,
    read_embedding_set,
    read_trial_list,
    write_embedding_set,
    write_trial_list,
)
from ndakit.plda import (
    PldaModel,
    fit_plda,
    gaussian_marginal_log_density,
    marginal_log_density,
    score_trial,
    truncate_dims,
)
from ndakit.flow import (
    CouplingLayer,
    FlowModel,
    backprop,
    forward,
    init_flow,
    inverse_with_logdet,
)
from ndakit.nda import (
    NdaModel,
    TrainConfig,
    fit_nda,
    nda_log_marginal,
    nda_score_trial,
    transform_set,
)
from ndakit.preprocess import (
    LdaTransform,
    apply_lda,
    fit_lda,
    length_normalize,
)
from ndakit.metrics import (
    GaussReport,
    ScoreSet,
    compute_eer,
    compute_min_dcf,
    gaussianality_report,
    operating_points,
)
from ndakit.synth import (
    OracleModel,
    SynthSpec,
    generate_corpus,
    oracle_score,
)

__version__ = "0.1.0"

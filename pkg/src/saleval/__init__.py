"""Model-agnostic faithfulness evaluation for saliency-map explanations.

The engine perturbs an image along a saliency map's importance order,
tracks a black-box model's score through the perturbations, and condenses
the response into seven metrics. Agreement tooling (tie-aware Kendall tau,
a log-based rank distance, Mask/Highlight group ranks, and a t-SNE view)
quantifies how much those metrics disagree with each other.
"""

from .agreement import (
    MetricTable,
    RankVector,
    TauMatrix,
    TauStats,
    group_average_ranks,
    kendall_tau,
    rank_with_ties,
    tau_distance,
    tau_distance_matrix,
)
from .embedding import Embedding2D, TsneConfig, joint_probabilities, kl_gradient, tsne_fit
from .metrics import (
    METRIC_GROUPS,
    METRIC_NAMES,
    ORIENTATIONS,
    DropSeries,
    EvalConfig,
    MetricRow,
    ScoreCurve,
    average_drop,
    average_drop_deletion,
    curve_auc,
    dauc,
    deletion_correlation,
    deletion_curve,
    evaluate_all,
    iauc,
    iic,
    insertion_correlation,
    insertion_curve,
    pearson_correlation,
)
from .perturb import (
    BlurConfig,
    MaskSequence,
    MaskStep,
    apply_inverse_saliency_mask,
    apply_saliency_mask,
    deletion_mask_sequence,
    gaussian_blur,
)
from .rise import RiseConfig, generate_rise_masks, rise_saliency
from .scorer import (
    ConstantScorer,
    LinearScorer,
    Logistic2Scorer,
    ProtocolScorer,
    ScorerSpec,
    predicted_category,
    softmax,
)
from .tensors import (
    ImageTensor,
    SaliencyMap,
    image_load,
    minmax_normalize,
    parse_tnsr,
    read_tnsr,
    tnsr_bytes,
    upsample_block,
    write_tnsr,
)

__version__ = "0.1.0"

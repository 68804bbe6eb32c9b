"""Language-embedded Gaussian splatting with LLM-guided segmentation."""

from .scene import (
    Camera,
    ClassSpec,
    Gaussian3D,
    Scene,
    SyntheticSceneSpec,
    covariance,
    make_synthetic_scene,
    scene_from_json,
    scene_to_json,
)
from .render import (
    RenderedImage,
    SemanticDistributionMap,
    Splat2D,
    composite,
    contribution_weights,
    project,
    render_color,
    render_semantic_distribution,
)
from .quantize import Codebook, assign, assign_all, build_codebook, quantization_error
from .mlp import DecoderMLP, SmoothingMLP, decode, positional_encoding, smooth_features
from .train import (
    TrainConfig,
    TrainResult,
    finite_diff_check,
    loss_ce,
    loss_smoothing,
    loss_uncertainty,
    total_loss,
    train_semantics,
)
from .relevancy import (
    PREDEFINED_CANONICALS,
    EmbeddingTable,
    FeatureMap,
    QuerySpec,
    RelevancyMap,
    SegMask,
    feature_map,
    relevancy_score,
    score_query,
    segment,
)
from .query_gen import (
    ChatExchange,
    LlmClientConfig,
    PromptContext,
    build_prompt,
    format_response,
    generate_query,
    parse_response,
)
from .metrics import (
    ClassEval,
    ConfusionCounts,
    MetricsReport,
    accuracy,
    average_precision,
    confusion,
    evaluate,
    iou,
    precision,
    recall,
)

__version__ = "0.1.0"

"""Sub-attention chains and channel-count gating for channel-attention CNNs.

The package splits into a float64 functional core (:mod:`lsas.chain`),
trainable torch operators (:mod:`lsas.attention`), ResNet backbones with
exact parameter accounting (:mod:`lsas.resnet`), Grad-CAM based
interpretability (:mod:`lsas.gradcam`), attention-efficiency scoring
(:mod:`lsas.ae`) and a training/benchmark harness (:mod:`lsas.train`).
"""

from .ae import (
    AEAnnotationRecord,
    AEReport,
    ae_aggregate,
    aes_score,
    build_report,
    load_annotations,
    relative_improvement,
    synth_annotations,
    write_annotations,
)
from .attention import (
    ATTENTION_KINDS,
    LSAS,
    ChannelAttention,
    ConfigurationError,
    ConvBlockAttention,
    EfficientChannelAttention,
    SqueezeExcite,
    StyleRecalibration,
    gated_attention,
    make_attention,
)
from .chain import (
    GateConfig,
    LSASModule,
    SubAttentionChain,
    chain_compose,
    chain_forward,
    chain_gradients,
    global_average_pool,
    lsas_forward,
    selection_gate,
    sigmoid,
)
from .gradcam import Heatmap, RegionMask, focused_region, gradcam, save_heatmap
from .resnet import (
    ModelConfig,
    build_model,
    count_parameters,
    load_checkpoint,
    parameter_breakdown,
    save_checkpoint,
)
from .train import (
    BenchResult,
    DatasetUnavailableError,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    benchmark_fps,
    evaluate_checkpoint,
    evaluate_model,
    load_dataset,
    train,
)

__version__ = "0.1.0"

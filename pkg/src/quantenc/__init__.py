"""CPU W8A8 post-training-quantized transformer encoder inference engine."""

from .calibration import CalibrationTable, Observer, ObserverBank, finalize
from .container import read_batches, read_container, write_batches, write_container
from .errors import (
    BadMagicError,
    CalibrationError,
    ContainerError,
    EngineError,
    InputError,
    ManifestError,
    ModeError,
    ShapeError,
    TruncatedPayloadError,
    UnknownDtypeError,
)
from .kernels import (
    Epilogue,
    EpilogueKind,
    apply_epilogue,
    attn_scores,
    gelu_quant,
    gemm_i8_accum_i32,
    ln_quant_embed,
    ln_quant_residual,
    softmax_quant,
)
from .layers import (
    EmbeddingParams,
    LayerParams,
    ModeConfig,
    OpTrace,
    QuantizedLayer,
    fold_attn_out_weight,
    fold_fc2_weight,
    fold_qkv_weight,
    mode_from_name,
)
from .model import (
    CompareStats,
    FpModel,
    HeadParams,
    ModelConfig,
    QuantizedModel,
    compare,
    forward,
    load_checkpoint,
    quantize_model,
    run_calibration,
    save_checkpoint,
)
from .schemes import (
    QScheme,
    QuantTensor,
    QuantizedWeight,
    compute_scale,
    dequantize,
    quantize,
    quantize_weight_per_column,
    round_half_even,
)
from .tensor import gelu_f32, layernorm_f32, matmul_f32, softmax_f32
from .traffic import Fmt, TrafficEntry, TrafficReport, model_traffic, op_traffic

__version__ = "0.1.0"

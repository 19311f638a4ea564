"""Fixed-point weight quantization benchmarks for small neural networks."""

from .errors import (
    ConfigError,
    DataFormatError,
    DimensionError,
    DivergenceError,
    QuantbenchError,
    UsageError,
)
from .nn import (
    ForwardCache,
    LayerSpec,
    Network,
    NetworkSpec,
    WeightGroup,
    backward,
    build_cnn,
    build_ffdnn,
    build_from_spec,
    count_params,
    count_weight_bits,
    cross_entropy,
    forward,
    set_dropout_rate,
)
from .quantizer import (
    QuantizationReport,
    QuantizerSpec,
    apply,
    bits_to_levels,
    codes,
    direct_quantize,
    l2_error,
    optimize_delta,
    write_reports,
)
from .tensor import Rng, Tensor, conv2d, derive_seed, matmul, maxpool2

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataFormatError",
    "DimensionError",
    "DivergenceError",
    "ForwardCache",
    "LayerSpec",
    "Network",
    "NetworkSpec",
    "QuantbenchError",
    "QuantizationReport",
    "QuantizerSpec",
    "Rng",
    "Tensor",
    "UsageError",
    "WeightGroup",
    "apply",
    "backward",
    "bits_to_levels",
    "build_cnn",
    "build_ffdnn",
    "build_from_spec",
    "codes",
    "conv2d",
    "count_params",
    "count_weight_bits",
    "cross_entropy",
    "derive_seed",
    "direct_quantize",
    "forward",
    "l2_error",
    "matmul",
    "maxpool2",
    "optimize_delta",
    "set_dropout_rate",
    "write_reports",
]

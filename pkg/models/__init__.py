from .analysis import (
    BoundReport,
    Prop2Report,
    alpha_min_receptive,
    prop2_bound,
    theorem1_bound,
    total_receptive,
    total_stride,
    vgg_effective_B,
)
from .constructions import (
    ConstructionConfig,
    claim3_params,
    claim4_compile,
    random_params,
    theorem1_params,
    theorem3_params,
)
from .errors import ConvACError
from .grid import (
    build_grid_tensor,
    custom_partition,
    left_right_partition,
    top_bottom_partition,
)
from .network import LayerParams, LayerSpec, NetworkParams, NetworkSpec, forward_layer, forward_network
from .tensor_core import (
    DenseTensor,
    IndexPartition,
    Matrix,
    apply_operator,
    kronecker,
    matricize,
    rank_exact,
    rank_numeric,
)


__all__ = [
    "BoundReport",
    "ConstructionConfig",
    "ConvACError",
    "DenseTensor",
    "IndexPartition",
    "LayerParams",
    "LayerSpec",
    "Matrix",
    "NetworkParams",
    "NetworkSpec",
    "Prop2Report",
    "alpha_min_receptive",
    "apply_operator",
    "build_grid_tensor",
    "claim3_params",
    "claim4_compile",
    "custom_partition",
    "forward_layer",
    "forward_network",
    "kronecker",
    "left_right_partition",
    "matricize",
    "prop2_bound",
    "random_params",
    "rank_exact",
    "rank_numeric",
    "theorem1_bound",
    "theorem1_params",
    "theorem3_params",
    "top_bottom_partition",
    "total_receptive",
    "total_stride",
    "vgg_effective_B",
]

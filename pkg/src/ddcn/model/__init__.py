from ddcn.model.config import REDUCED, ModelConfig
from ddcn.model.network import (
    TemporalGroups,
    Trace,
    build_groups,
    ddcn_inner_2d,
    ddcn_inner_3d,
    ddcn_outer,
    extract_group_features,
    extract_reference_features,
    forward,
    fuse_groups,
    reconstruct,
    temporal_attention,
)
from ddcn.model.params import (
    count_parameters,
    init_params,
    is_trainable,
    manifest,
    manifest_lines,
)

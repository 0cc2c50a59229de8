from tilegraph.cronet.build import CapacityError, build_cronet, case_inputs
from tilegraph.cronet.fit import fit_config_to_table
from tilegraph.cronet.model import (
    SIZES,
    LayerSpec,
    MaterialCase,
    ModelConfig,
    init_weights,
    layer_infos,
    load_config,
    make_case,
    reference_forward,
)

__all__ = [
    "SIZES",
    "CapacityError",
    "LayerSpec",
    "MaterialCase",
    "ModelConfig",
    "build_cronet",
    "case_inputs",
    "fit_config_to_table",
    "init_weights",
    "layer_infos",
    "load_config",
    "make_case",
    "reference_forward",
]

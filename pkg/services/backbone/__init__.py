from services.backbone.checkpoint import Checkpoint, CheckpointService
from services.backbone.contracts import VelocityModel
from services.backbone.network import (
    BackboneService,
    DiffusionTransformer,
    init_params,
    parameter_count,
    timestep_features,
)

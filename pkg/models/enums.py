from enum import Enum


class ProceduralKind(str, Enum):
    GRADIENT = "gradient"
    CHECKER = "checker"
    STRIPES = "stripes"
    BLOBS = "blobs"
    GLYPHS = "glyphs"
    MIXED = "mixed"


class ResizeMode(str, Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"
    AREA = "area"


class CondKind(str, Enum):
    FULL = "full"
    PARTIAL = "partial"
    NO_SEMANTIC = "no_semantic"
    UNCONDITIONAL = "unconditional"


class GuidanceStyle(str, Enum):
    RESTORATION = "restoration"
    T2I_BASELINE = "t2i_baseline"
    STANDARD_CFG = "standard_cfg"
    NONE = "none"


class AuxBranch(str, Enum):
    """Auxiliary branch mixed into training alongside the full condition."""

    PARTIAL = "partial"
    UNCONDITIONAL = "unconditional"


class DistillVariant(str, Enum):
    SHORTCUT = "shortcut"
    RC = "rc"


class RcCoefficients(str, Enum):
    TIME_WEIGHTED = "time_weighted"
    CONSTANT = "constant"


class AblationAxis(str, Enum):
    GUIDANCE_SCALE = "guidance_scale"
    SEMANTIC_ON_OFF = "semantic_on_off"
    GUIDANCE_STYLE = "guidance_style"
    AUX_BRANCH = "aux_branch"


class CheckpointKind(str, Enum):
    TEACHER = "teacher"
    STUDENT = "student"


# Constants
MIN_PROCEDURAL_SIZE = 16
PROCEDURAL_SIZE_MULTIPLE = 16
DEFAULT_SCALE = 4
DEFAULT_SAMPLING_STEPS = 25
LUMA_BT601 = (0.299, 0.587, 0.114)
PPM_MAXVAL = 255

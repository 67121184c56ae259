"""msface: depth-gated multi-spectral face pipeline.

Head pose is estimated from depth with a random regression forest; a
frontal-view gate selects frames worth running face detection, recognition,
and IR temperature reading on.  A synthetic sequence generator, verification
metrics, and a benchmark harness round out the package.
"""

__version__ = "0.1.0"

from .geometry import (
    CameraIntrinsics,
    GateDecision,
    HeadPose,
    Vec3,
    backproject,
    euler_to_direction,
    gate,
    offset_angle,
)

__all__ = [
    "CameraIntrinsics",
    "GateDecision",
    "HeadPose",
    "Vec3",
    "backproject",
    "euler_to_direction",
    "gate",
    "offset_angle",
    "__version__",
]

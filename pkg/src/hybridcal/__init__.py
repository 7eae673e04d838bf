"""hybridcal: camera calibration with model-free global extrinsics,
pose-ambiguity resolution, and parametric/generic intrinsic fitting."""

__version__ = "0.1.0"

from .homography import Homography, apply_homography, dlt_homography, homography_dlt_ransac, warp_by_homography
from .lm import CalibEstimate, LMOptions, huber, refine_lm, valley_profile
from .pnp import PoseEstimate, RansacConfig, epnp, ransac_pnp, reprojection_errors

__all__ = [
    "CalibEstimate", "Homography", "LMOptions", "PoseEstimate", "RansacConfig",
    "apply_homography", "dlt_homography", "epnp", "homography_dlt_ransac", "huber",
    "ransac_pnp", "refine_lm", "reprojection_errors", "valley_profile", "warp_by_homography",
]

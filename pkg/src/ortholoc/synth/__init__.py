from .pairing import (
    DEFAULT_INTRINSICS, PERTURBATION_PRESETS, SceneRasters, anonymize, domain_shift, draw_anonymization_offset,
    footprint_quad, generate_dataset, generate_samples, pair_sample, random_view,
)
from .render import ViewSpec, camera_rays, raster_georef, rasterize_dsm, render_dop, render_query
from .scene import LATTICE, Box, SceneSpec, TerrainSpec, TextureSpec, quantize, random_scene

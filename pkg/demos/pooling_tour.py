"""A guided look at the two ways of cutting a parking space out of an image.

Run it with ``python demos/pooling_tour.py [OUT_DIR]``. It builds one synthetic
lot, pools a single space both ways, checks the crop identity that anchors the
sampling convention, and shows which pyramid level each space lands on.
"""

import sys
from pathlib import Path

import numpy as np

from quadpool.geometry import Quadrilateral, min_bounding_square, quad_area
from quadpool.imaging import ImageBuffer, build_pyramid, draw_polyline, write_ppm
from quadpool.pooling import LevelAssignConfig, assign_level, pool_quadrilateral, pool_square, scale_quad
from quadpool.synth import LotSpec, generate_scene

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# A small oblique lot: two rows of spaces seen at a tilt, some with vehicles.
scene = generate_scene(LotSpec("tour", seed=4, occupancy_rate=0.5, occlusion_strength=0.3,
                               image_width=320, image_height=240, space_width=28, space_depth=56))
spaces = scene.annotation.spaces
print(f"generated {len(spaces)} spaces, {sum(s.occupied for s in spaces)} occupied")

# Quadrilateral pooling samples only the annotated outline, rectified by a
# homography. Square pooling samples the smallest axis-aligned square around
# it, so neighbouring context (and any vehicle leaning in) comes along.
space = spaces[3]
quad_patch = pool_quadrilateral(scene.image, space.quad, 64)
square_patch = pool_square(scene.image, space.quad, 64)
write_ppm(ImageBuffer(quad_patch.data), out / "space_quadrilateral.ppm")
write_ppm(ImageBuffer(square_patch.data), out / "space_square.ppm")
print(f"space 3 occupied={space.occupied}: outline area {quad_area(space.quad):.1f} px^2, "
      f"bounding square area {quad_area(min_bounding_square(space.quad)):.1f} px^2")

overlay = draw_polyline(scene.image, space.quad.vertices, (1.0, 0.0, 0.0))
overlay = draw_polyline(overlay, min_bounding_square(space.quad).vertices, (0.0, 0.4, 1.0))
write_ppm(overlay, out / "scene_with_outlines.ppm")

# Pixel centers sit on integer coordinates, so a rectangle whose edges lie on
# half-integers covers whole pixels and pooling it at its own size is a copy.
rng = np.random.default_rng(0)
raw = rng.random((32, 32, 3))
block = Quadrilateral([(4.5, 2.5), (12.5, 2.5), (12.5, 10.5), (4.5, 10.5)])
same = np.array_equal(pool_quadrilateral(ImageBuffer(raw), block, 8).data, raw[3:11, 5:13])
print(f"8x8 pixel block pooled at S=8 equals the raw crop bit for bit: {same}")

# The pyramid model routes each space to a level by its apparent size:
# small outlines read from the fine level, large ones from coarse levels.
# Every space in this small image is small, so all of them use level 0.
# Seen from closer (the same outline scaled up), the choice moves down the pyramid.
cfg = LevelAssignConfig()
pyramid = build_pyramid(scene.image, 4)
print(f"pyramid sizes {[(lvl.width, lvl.height) for lvl in pyramid.levels]}")
print(f"levels for the {len(spaces)} spaces: {[assign_level(s.quad, cfg) for s in spaces]}")
for zoom in (1, 4, 8, 16, 32):
    q = scale_quad(space.quad, zoom)
    print(f"  space 3 at {zoom:>2}x: side ~{quad_area(q) ** 0.5:7.1f} px -> level {assign_level(q, cfg)}")
print(f"wrote images to {out}/")

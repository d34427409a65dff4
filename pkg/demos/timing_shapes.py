"""How inference time grows with the number of parking spaces.

Run it with ``python demos/timing_shapes.py``. The patch model pools and
classifies every space at full resolution, so its cost is linear in the
count. The pyramid model pays once for resizing and building the pyramid and
then only a tiny per-space head, so its curve stays nearly flat.
"""

from quadpool.evalbench import benchmark_inference, check_curve, linear_fit, spread
from quadpool.pipeline import PatchModelConfig, PyramidModelConfig, initial_params
from quadpool.synth import LotSpec, generate_scene

scene = generate_scene(LotSpec("bench", seed=0, image_width=1024, image_height=768,
                               space_width=88, space_depth=176))
params = initial_params(0)
counts = list(range(10, 101, 10))

patch = benchmark_inference(PatchModelConfig("square", 64), params, scene.image,
                            scene.annotation.quads, counts, repeats=9)
pyramid = benchmark_inference(PyramidModelConfig("square", smaller_edge=1440), params, scene.image,
                              scene.annotation.quads, counts, repeats=15)

print(f"{'spaces':>6}  {'patch [ms]':>10}  {'pyramid [ms]':>12}")
for (n, tp), (_, tq) in zip(patch.points, pyramid.points):
    print(f"{n:>6}  {1000 * tp:>10.1f}  {1000 * tq:>12.1f}")

fit = linear_fit(patch)
print(f"\npatch: {1000 * fit.slope:.2f} ms per space, R^2 {fit.r2:.4f}")
print(f"pyramid: spread (max - min) / median = {spread(pyramid):.3f}")
for curve in (patch, pyramid):
    ok, msg = check_curve(curve)
    print(f"{'PASS' if ok else 'FAIL'} {msg}")

"""
Recovering a sphere from images
===============================

Renders a small sphere from a ring of cameras, fits a random grid to the
images with the light held fixed, and reports the fit. This is a reduced
version of the full-size round trip (about a minute on one core).
"""

import numpy as np

from microflake import OptimizeConfig, TrainView, compute_visibility_field, make_preset, optimize, render_image
from microflake.inverse import render_views_psnr

grid, decoder, env, cams = make_preset("sphere", n_views=12, image_size=24, resolution=12)
config = OptimizeConfig(iterations=300, stage1_iterations=60, visibility_refresh=100, resolution=(12, 12, 12),
                        learn_light=False, batch_rays=512, steps_per_ray=24)
settings = config.render_settings()
vis = compute_visibility_field(grid, settings.specular_directions(env))
views = [TrainView(c, render_image(grid, decoder, c, env, vis, settings)) for c in cams]


def report(it, loss):
    if it % 50 == 0:
        print(f"iter {it:4d}  L_c {loss.L_c:.5f}  total {loss.total:.5f}")


g, d, e, v, history = optimize(views, config, env_init=env, callback=report)
print(f"training PSNR: {render_views_psnr(g, d, e, v, views, settings):.2f} dB")

# the recovered opacity should sit where the true sphere is
occ_true = grid.density() > 1.0
occ_fit = g.density() > 1.0
print("occupied voxels, truth vs fit:", int(occ_true.sum()), int(occ_fit.sum()))
print("agreement:", float(np.mean(occ_true == occ_fit)))

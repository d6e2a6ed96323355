"""Regenerate the frozen golden render. Only run after an intentional renderer change."""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from microflake.lighting import compute_visibility_field  # noqa: E402
from microflake.scenes import make_preset  # noqa: E402

import test_renderer  # noqa: E402

if __name__ == "__main__":
    grid, decoder, env, cams = make_preset("sphere", n_views=4)
    vis = compute_visibility_field(grid, env.axes)
    img = test_renderer.golden_render((grid, decoder, env, vis, cams))
    test_renderer.DATA.mkdir(exist_ok=True)
    np.save(test_renderer.GOLDEN, img)
    print(f"wrote {test_renderer.GOLDEN} max={img.max():.4f}")

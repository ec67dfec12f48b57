"""Build a flared night frame from a clean one and look at its pieces.

Run:  python demos/01_flare_formation.py --out demo_out
"""

import argparse
from pathlib import Path

import numpy as np

from nightflare import formation, raster, scenes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    clean, lamps = scenes.night_scene(128, seed=args.seed)
    print(f"clean frame: 128x128, lamps at {lamps}")

    cfg = formation.OpticalConfig()
    k = formation.scatter_kernel(cfg)
    print(f"scatter kernel {k.shape[0]}x{k.shape[0]}: center weight {k[15, 15]:.3f}, "
          f"mass beyond 5 px {k.sum() - k[10:21, 10:21].sum():.3f}")

    flared, gt, scene = formation.synth_pair(clean, cfg, args.seed)
    print(f"tone exponent gamma = {scene.meta['gamma']:.3f} (drawn with {scene.meta['rng']})")
    print(f"glow energy  {scene.glow.sum():8.1f}")
    print(f"ghost energy {scene.ghost.sum():8.1f}")
    print(f"source px {int(scene.source_mask.sum())}, ghost region px {int(scene.ghost_mask.sum())}")
    print(f"PSNR flared vs clean: {raster.psnr(flared, gt):.2f} dB, SSIM {raster.ssim(flared, gt):.4f}")

    # The ghost sits opposite each lamp through the frame center.
    c = (127 / 2.0, 127 / 2.0)
    for x, y in lamps:
        mx, my = 2 * c[0] - x, 2 * c[1] - y
        print(f"lamp ({x:.0f}, {y:.0f}) -> ghost near ({mx:.1f}, {my:.1f}), "
              f"ghost value there {scene.ghost[int(round(my)), int(round(mx))].mean():.3f}")

    raster.save_image(gt, out / "clean.png")
    raster.save_image(flared, out / "flared.png")
    raster.save_image(np.clip(scene.glow, 0, 1), out / "glow.png")
    raster.save_image(np.clip(scene.ghost, 0, 1), out / "ghost.png")
    raster.save_mask(scene.source_mask, out / "source_mask.png")
    print(f"images written to {out}/")


if __name__ == "__main__":
    main()

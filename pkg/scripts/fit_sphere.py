"""Fit the sphere preset and print holdout PSNR, mask IoU and wall time."""
import argparse
import json
import logging

from nerfaug.experiments import sphere_fit
from nerfaug.field import save_field
from nerfaug.parallel import default_threads


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--views", type=int, default=24)
    ap.add_argument("--res", type=int, default=64)
    ap.add_argument("--iters", type=int, default=4000)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", default=None, help="save the fitted field here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    res = sphere_fit(args.views, args.res, args.iters, args.threads)
    if args.out:
        save_field(res.field, args.out)
    print(json.dumps({
        "holdout_psnr_db": res.holdout_psnr_db,
        "mask_iou": res.mask_iou,
        "wall_seconds": res.wall_seconds,
        "hardware_threads": default_threads(),
        "checkpoints": res.checkpoints,
    }, indent=2))


if __name__ == "__main__":
    main()

"""Render throughput of a 64^3 field at 128x128 and 128 samples/ray, with a thread-scaling curve."""
import argparse
import json

from nerfaug.cli import bench_field, bench_render
from nerfaug.field import load_field
from nerfaug.geometry import PinholeCamera


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--field", default=None, help="field file; default is a synthetic 64^3 sphere")
    ap.add_argument("--frames", type=int, default=30)
    ap.add_argument("--threads", type=int, default=8)
    ap.add_argument("--thread-counts", default="1,2,4,8")
    args = ap.parse_args()

    fld = load_field(args.field) if args.field else bench_field(64)
    counts = [int(c) for c in args.thread_counts.split(",")]
    rep = bench_render(fld, PinholeCamera.from_fov(128, 128, 50), args.frames, args.threads, 128, counts)
    print(json.dumps(rep, indent=2))


if __name__ == "__main__":
    main()

"""Command-line interface: convert | export."""

from __future__ import annotations

import argparse
import sys

from .convert import ConversionManifest, build_manifest, convert_images
from .export import ZeroTeacher, export_teacher_logits, read_glds_samples
from .formats import BridgeError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="teacher-bridge",
        description="Image-folder to GLDS converter and GLTL logit exporter")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("convert", help="directory-per-class tree -> GLDS")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True, help="output .glds path")
    p.add_argument("--manifest", required=True, help="manifest JSON path")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export", help="teacher logits over a GLDS -> GLTL")
    p.add_argument("--glds", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .gltl path")
    p.add_argument("--teacher", default="zero-stub",
                   help="teacher name recorded in the GLTL header")

    try:
        args = parser.parse_args(argv)
        if args.verb == "convert":
            manifest = build_manifest(args.src, args.size, args.seed)
            manifest = convert_images(args.src, args.out, manifest,
                                      manifest_path=args.manifest)
            print(f"wrote {args.out}: n={len(manifest.samples)} "
                  f"k={len(manifest.class_to_label)}")
            return 0
        manifest = ConversionManifest.load(args.manifest)
        _, _, k = read_glds_samples(args.glds)
        logits = export_teacher_logits(
            ZeroTeacher(k), args.teacher, args.glds, args.out,
            expected_n=len(manifest.samples))
        print(f"wrote {args.out}: n={logits.shape[0]} k={logits.shape[1]} "
              f"teacher={args.teacher}")
        return 0
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

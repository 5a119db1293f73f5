"""Command-line entry point: ``vitsplice {train,detect,eval,gen-data,post-process}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys

from ..errors import ConfigError, DataError, NumericError, ShapeError, TilingError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="override the config seed (u64)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--deterministic", action="store_true", help="single-threaded bit-exact mode")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="vitsplice", description="ViT reconstruction splicing detector")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train on pristine images")
    t.add_argument("--data", help="directory of pristine PNGs (overrides data.train_dir)")

    d = sub.add_parser("detect", parents=[common], help="heatmap and masks for images")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("images", nargs="+")

    e = sub.add_parser("eval", parents=[common], help="score predicted masks against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--pred-suffix", default="", help="e.g. _mask_v2 for detect outputs")

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic splice dataset")
    g.add_argument("--n-pristine", type=int, default=8)
    g.add_argument("--n-spliced", type=int, default=20)
    g.add_argument("--image-size", type=int, default=512)
    g.add_argument("--sizes", default="16,32,64,128,256")
    g.add_argument("--blend", default="hard", choices=("hard", "feather"))
    g.add_argument("--contrast", type=float, default=0.35)

    pp = sub.add_parser("post-process", parents=[common], help="apply V1 or V2 post-processing to masks")
    pp.add_argument("--variant", choices=("v1", "v2"), default="v2")
    pp.add_argument("masks", nargs="+")
    return p


def _config(args):
    from .config import load_config

    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def _run(args) -> None:
    from . import workflows as wf
    from .synth import SpliceSpec, generate_synthetic_dataset

    if args.command == "gen-data":
        seed = args.seed if args.seed is not None else (_config(args).seed if args.config else 0)
        spec = SpliceSpec(sizes=tuple(int(s) for s in args.sizes.split(",")), blend=args.blend, contrast=args.contrast)
        generate_synthetic_dataset(seed, args.n_pristine, args.n_spliced, spec, args.out, args.image_size)
        return
    if args.command == "post-process":
        cfg = _config(args) if (args.config or args.seed is not None or args.set) else None
        wf.cmd_post_process(args.masks, args.out, args.variant, cfg)
        return
    cfg = _config(args)
    if args.command == "train":
        print(wf.cmd_train(cfg, args.out, args.data))
    elif args.command == "detect":
        wf.cmd_detect(cfg, args.checkpoint, args.images, args.out)
    elif args.command == "eval":
        report = wf.cmd_eval(cfg, args.pred, args.gt, args.out, args.pred_suffix)
        print(report.table(), end="")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    limit = contextlib.nullcontext()
    if args.deterministic:
        from threadpoolctl import threadpool_limits

        limit = threadpool_limits(limits=1)
    try:
        with limit:
            _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TilingError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

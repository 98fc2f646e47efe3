"""Command-line entry point: ``hinas synth|search|derive|train|eval|export-dot``.

Exit codes: 0 success, 1 configuration error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import derive
from .config import SearchConfig, SynthConfig, TrainConfig, load_config
from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors count as configuration errors
        raise ConfigError(message)


def _config(cls, args):
    cfg = load_config(cls, args.config) if args.config else cls()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.data.seed = args.seed
    return cfg.validate()


def _out_dir(args) -> Path:
    if not args.out_dir:
        raise ConfigError("--out-dir is required")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _architecture(args):
    """(genotypes, path) from --arch (file or 'random') or a search --checkpoint."""
    if args.arch == "random":
        if args.nodes <= 0 or args.layers <= 0:
            raise ConfigError("--nodes and --layers must be positive")
        return derive.random_genotype(args.seed or 0, args.nodes, args.layers)
    if args.arch:
        try:
            return derive.load_architecture(args.arch)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read architecture {args.arch}: {exc}") from exc
    if args.checkpoint:
        from .search import derive_from_checkpoint

        return derive_from_checkpoint(args.checkpoint)
    raise ConfigError("give --arch FILE or --checkpoint SEARCH_CKPT")


def cmd_synth(args):
    from . import data as D
    from .engine import MetricsLog, write_config_echo

    cfg = _config(SynthConfig, args)
    out = _out_dir(args)
    write_config_echo(out, cfg, {"command": "synth"})
    task = cfg.task.build()
    clean = D.synth_dataset(cfg.data.kind, cfg.data.count, cfg.data.size, cfg.data.seed)
    pairs = D.make_pairs(clean, task, seed=cfg.data.seed + 7919, sigma=cfg.task.sigma)
    path = D.write_manifest(out, pairs, task, cfg.task.sigma if task.kind == "denoise" else None)
    MetricsLog(out / "metrics.jsonl").write(step=0, split="synth", count=len(pairs),
                                            psnr=sum(_pair_psnr(p, task) for p in pairs) / len(pairs),
                                            ssim=None, loss=None)
    print(path)


def _pair_psnr(p, task):
    from .losses import psnr
    from .train import _bicubic_up

    ref = p.degraded if task.kind == "denoise" else _bicubic_up(p.degraded, task.scale)
    return psnr(ref, p.clean)


def cmd_search(args):
    from .search import run_search

    cfg = _config(SearchConfig, args)
    result = run_search(cfg, _out_dir(args), resume=args.checkpoint)
    print(json.dumps(result.to_json(), indent=2))


def cmd_derive(args):
    from .engine import MetricsLog

    if not args.checkpoint:
        raise ConfigError("derive needs --checkpoint SEARCH_CKPT")
    from .search import derive_from_checkpoint

    out = _out_dir(args)
    genotypes, path = derive_from_checkpoint(args.checkpoint)
    (out / "config_echo.json").write_text(json.dumps(
        {"command": "derive", "checkpoint": str(args.checkpoint)}, indent=2) + "\n")
    derive.save_architecture(out / "architecture.json", genotypes, path)
    _write_dots(out, genotypes)
    MetricsLog(out / "metrics.jsonl").write(step=0, split="derive", path=list(path.levels),
                                            psnr=None, ssim=None, loss=None)
    print((out / "architecture.json").read_text())


def _write_dots(out: Path, genotypes):
    for l, g in enumerate(genotypes):
        (out / f"cell_{l}.dot").write_text(derive.genotype_to_dot(g, name=f"cell_{l}"))


def cmd_train(args):
    from .train import run_train

    cfg = _config(TrainConfig, args)
    genotypes, path = _architecture(args)
    result = run_train(genotypes, path, cfg, _out_dir(args))
    print(json.dumps({"params": result.params, "best_val_psnr": result.best_val_psnr,
                      "final_val_psnr": result.final_val["psnr"],
                      "final_val_ssim": result.final_val["ssim"]}, indent=2))


def cmd_eval(args):
    from .config import from_dict
    from .data import load_manifest
    from .engine import MetricsLog, load_pairs
    from .train import load_trained, run_eval

    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint TRAIN_CKPT")
    out = _out_dir(args)
    net, meta = load_trained(args.checkpoint)
    tcfg = from_dict(TrainConfig, meta["config"])
    if args.data:
        _, pairs = load_manifest(args.data)
    else:
        # held-out synthetic images, disjoint from the training and validation seeds
        seed = args.seed if args.seed is not None else tcfg.data.seed
        tcfg.data.seed = seed
        pairs = load_pairs(tcfg.data, tcfg.task, seed_offset=200_003, count=args.count)
    (out / "config_echo.json").write_text(json.dumps(
        {"command": "eval", "checkpoint": str(args.checkpoint), "data": args.data,
         "count": len(pairs), "train_config": meta["config"]}, indent=2, sort_keys=True) + "\n")
    report = run_eval(net, pairs, tile=tcfg.val_tile)
    (out / "eval_report.json").write_text(json.dumps(report, indent=2) + "\n")
    MetricsLog(out / "metrics.jsonl").write(step=meta["iteration"], split="test", psnr=report["psnr"],
                                            ssim=report["ssim"], loss=None)
    print(json.dumps({k: v for k, v in report.items() if k != "images"}, indent=2))


def cmd_export_dot(args):
    out = _out_dir(args)
    genotypes, _ = _architecture(args)
    _write_dots(out, genotypes)
    for l in range(len(genotypes)):
        print(out / f"cell_{l}.dot")


COMMANDS = {"synth": cmd_synth, "search": cmd_search, "derive": cmd_derive, "train": cmd_train,
            "eval": cmd_eval, "export-dot": cmd_export_dot}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hinas", description="Hierarchical architecture search for image restoration")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--out-dir")
        s.add_argument("--checkpoint")
        if name in ("train", "export-dot"):
            s.add_argument("--arch", help="architecture.json, or 'random'")
            s.add_argument("--nodes", type=int, default=4, help="nodes per cell for --arch random")
            s.add_argument("--layers", type=int, default=3, help="layers for --arch random")
        if name == "eval":
            s.add_argument("--data", help="dataset manifest.json")
            s.add_argument("--count", type=int, default=10, help="held-out synthetic images")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigError("missing command; choose from " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"hinas: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"hinas: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, ValueError) as exc:
        print(f"hinas: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

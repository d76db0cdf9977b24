"""Command-line front end.

    rig train  --preset P [--config F.yaml] [--set k=v ...] --seed S --out DIR
    rig ablate --preset P --seeds 1..5 --out DIR
    rig eval   --checkpoint C --episodes E
    rig plot   --in DIR [DIR ...] --out FILE.svg

Exit status: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from . import presets
from .config import ConfigError, ExperimentConfig, config_from_dict, merge, to_dict
from .experiment import evaluate, load_checkpoint, run_rig
from .nn import make_rng
from .plot import aggregate, find_progress_files, render_svg

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("rig")


def parse_seeds(text: str) -> list[int]:
    """``3``, ``1,2,5`` or ``1..5`` (inclusive)."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            seeds.extend(range(int(a), int(b) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError("seeds", f"no seeds in {text!r}")
    return seeds


def parse_set(pairs: list[str]) -> dict:
    """``a.b=value`` pairs into a nested dict; values are parsed as YAML scalars/lists."""
    out: dict = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(pair, "expected key=value")
        key, raw = pair.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError("config", str(exc)) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return data


def parse_config(preset: str | None = None, path: str | None = None, sets: list[str] | None = None,
                 variant: str | None = None) -> ExperimentConfig:
    """Preset, then file, then ``--set`` flags; later sources win."""
    data: dict = {}
    if preset:
        try:
            data = presets.preset_dict(preset)
        except KeyError as exc:
            raise ConfigError("preset", str(exc.args[0])) from None
        if variant is not None:
            data = merge(data, presets.variants(preset)[variant])
    data = merge(data, load_config_file(path))
    data = merge(data, parse_set(sets or []))
    return config_from_dict(data)


def _with(cfg: ExperimentConfig, seed: int, out: Path) -> ExperimentConfig:
    return config_from_dict(merge(to_dict(cfg), {"seed": seed, "output_dir": str(out)}))


def _run_one(cfg: ExperimentConfig) -> tuple[int, str]:
    try:
        report = run_rig(cfg)
        f = report.final
        return EXIT_OK, f"ok final mean={f.mean_final_distance:.4f} median={f.median_final_distance:.4f}"
    except Exception as exc:  # reported per seed, the batch keeps going
        log.debug(traceback.format_exc())
        return EXIT_RUNTIME, f"failed: {type(exc).__name__}: {exc}"


def _run_all(jobs: list[tuple[str, ExperimentConfig]], workers: int) -> int:
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [c for _, c in jobs]))
    else:
        results = [_run_one(c) for _, c in jobs]
    status = EXIT_OK
    for (label, _), (code, msg) in zip(jobs, results):
        print(f"{label}: {msg}")
        status = max(status, code)
    return status


def cmd_train(args) -> int:
    base = parse_config(args.preset, args.config, args.set)
    out = Path(args.out)
    jobs = [(f"seed {s}", _with(base, s, out / f"seed_{s}")) for s in parse_seeds(args.seed)]
    return _run_all(jobs, args.jobs)


def cmd_ablate(args) -> int:
    if not args.preset:
        raise ConfigError("preset", "ablate needs --preset")
    out = Path(args.out)
    jobs = []
    for name in presets.variants(args.preset):
        variant_cfg = parse_config(args.preset, args.config, args.set, variant=name)
        for s in parse_seeds(args.seeds):
            jobs.append((f"{name} seed {s}", _with(variant_cfg, s, out / name / f"seed_{s}")))
    return _run_all(jobs, args.jobs)


def cmd_eval(args) -> int:
    try:
        cfg, agent, space = load_checkpoint(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        print(f"cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    rng = make_rng([cfg.seed if args.seed is None else args.seed, 104729])
    if cfg.variable_object_eval and args.variable_objects:
        row = evaluate(cfg, agent, space, args.episodes, rng, variable_objects=True)
    else:
        row = evaluate(cfg, agent, space, args.episodes, rng)
    print(json.dumps({"episodes": args.episodes, "mean_final_distance": row.mean_final_distance,
                      "median_final_distance": row.median_final_distance,
                      "success_rate": row.success_rate}))
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        curves = [aggregate(find_progress_files(d), Path(d).name or str(d), args.column) for d in args.inputs]
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    Path(args.out).write_text(render_svg(curves, args.title, args.column.replace("_", " ")))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rig", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("--preset", choices=sorted(presets.PRESETS))
        sp.add_argument("--config", help="YAML file with config overrides")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override, e.g. vae.beta=2 (repeatable)")
        sp.add_argument("--out", required=True)
        sp.add_argument("--jobs", type=int, default=1, help="seed runs in parallel processes")

    t = sub.add_parser("train", help="train one config for one or more seeds")
    config_args(t)
    t.add_argument("--seed", default="0", help="seed, list or range such as 1..5")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="run every variant of a preset's grid")
    config_args(a)
    a.add_argument("--seeds", default="1..5")
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="evaluate a saved checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=30)
    e.add_argument("--seed", type=int)
    e.add_argument("--variable-objects", action="store_true")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="SVG learning curves with 95%% bands across seeds")
    pl.add_argument("--in", dest="inputs", nargs="+", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--column", default="mean_final_distance")
    pl.add_argument("--title", default="")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

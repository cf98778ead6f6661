"""Command-line entry point.

    weakfine run <config> [--out DIR] [--override k=v ...]
    weakfine sweep-cost <config> --values 1/20,1/50,1/100 [--out DIR]
    weakfine validate <config>
    weakfine gen-data <synth-config> --out FILE

Exit status 0 on success, 1 for configuration errors, 2 for runtime errors.
Failures print a single JSON line on stderr.  ``WEAKFINE_MAX_WORKERS`` caps
the number of replicates run in parallel.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import report
from .config import ConfigError, apply_overrides, config_hash, emit_config, parse_config, \
    parse_rational, tomllib
from .harness import MIXED, run_experiment, sweep_weak_cost
from .labels import (ConfigError as DataConfigError, SynthConfig, save_features,
                     save_label_space, synth_generate)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _load(args):
    cfg = parse_config(args.config)
    if getattr(args, "override", None):
        cfg = apply_overrides(cfg, args.override)
    return cfg


def write_run(cfg, result, out, overrides=(), started=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    agg = result.aggregate()
    report.write_metrics(result, out / "metrics.csv")
    report.write_aggregate(agg, out / "aggregate.csv")
    report.write_ratios(result, out / "ratios.csv")
    report.write_audit(result, out / "audit")
    report.render_chart(agg, out / "chart.svg")
    if MIXED in result.replicates:
        report.render_ratio_chart(result, out / "ratios.svg", MIXED)
    (out / "config.toml").write_text(emit_config(cfg), encoding="utf-8")
    report.write_manifest(out / "manifest.json", {
        "config_hash": config_hash(cfg),
        "version": __version__,
        "seeds": list(cfg.seeds),
        "methods": list(cfg.methods),
        "overrides": list(overrides),
        "started": started or _now(),
        "finished": _now(),
        "layout": {
            "metrics": "metrics.csv", "aggregate": "aggregate.csv", "ratios": "ratios.csv",
            "audit": "audit/<method>/seed<seed>_round<round>.jsonl",
            "chart": "chart.svg", "config": "config.toml",
        },
    })
    return out


def cmd_run(args):
    cfg = _load(args)
    started = _now()
    result = run_experiment(cfg)
    out = write_run(cfg, result, args.out, args.override or (), started)
    for method, rows in result.aggregate().items():
        _, mean, std = rows[-1]
        print(f"{method}: round {rows[-1][0]} accuracy {mean:.4f} +/- {std:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load(args)
    values = [parse_rational(v.strip(), "--values") for v in args.values.split(",") if v.strip()]
    if not values or any(v <= 0 for v in values):
        raise ConfigError("weak costs must be positive", "--values")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweep = sweep_weak_cost(cfg, values)
    for cw, res in sweep.items():
        sub = out / f"cw_{cw.numerator}_{cw.denominator}"
        write_run(res.config, res, sub, args.override or ())
    report.write_sweep(sweep, out / "sweep.csv")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_validate(args):
    cfg = _load(args)
    print(f"ok {config_hash(cfg)}")
    return EXIT_OK


def cmd_gen_data(args):
    try:
        raw = tomllib.loads(Path(args.config).read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    block = dict(raw.get("synth", raw))
    seed = block.pop("seed", 0)
    try:
        ds, _ = synth_generate(SynthConfig(**block), seed)
    except TypeError as exc:
        raise ConfigError(str(exc), "synth") from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_features(ds, out)
    labels = Path(args.labels) if args.labels else out.with_suffix(".labels.json")
    save_label_space(ds.space, labels)
    print(f"wrote {out} ({len(ds)} rows, d={ds.dim}) and {labels}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="weakfine", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every method x seed and write tables and charts")
    r.add_argument("config")
    r.add_argument("--out", default="results")
    r.add_argument("--override", action="append", metavar="KEY=VALUE")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep-cost", help="repeat the experiment for several weak costs")
    s.add_argument("config")
    s.add_argument("--values", default="1/20,1/50,1/100")
    s.add_argument("--out", default="sweep")
    s.add_argument("--override", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="parse and check a config file")
    v.add_argument("config")
    v.add_argument("--override", action="append", metavar="KEY=VALUE")
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("gen-data", help="write a synthetic feature CSV and label space")
    g.add_argument("config")
    g.add_argument("--out", required=True)
    g.add_argument("--labels", help="label-space JSON path (default: next to --out)")
    g.set_defaults(func=cmd_gen_data)
    return p


def _fail(kind, exc, code):
    payload = {"error": kind, "message": str(exc)}
    for attr in ("key", "line"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataConfigError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except FileNotFoundError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        return _fail("runtime", exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``python -m orbitmatch <command> [options]``.

Commands ``lcs``, ``mindist``, ``dim``, ``entropy`` and ``rotation`` run the
matching experiment kind (default desk-scale config unless ``--config``
is given); ``experiment`` runs any config or reruns a manifest;
``simulate`` writes one sample sequence or orbit cloud.

Exit codes: 0 success, 1 other error, 2 config error, 3 numeric
degeneracy, 4 failed verdict or checksum mismatch under ``--strict``.
Errors are reported as one JSON object on stderr (also saved as
``error.json`` in the output directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..core import Rng
from ..errors import ConfigError, DegenerateError, NonConvergenceError, OrbitMatchError
from ..orbits import write_cloud
from ..processes import sample_process
from . import config as cfgmod
from . import experiments as ex
from .report import emit_plot_data

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_STRICT = 0, 1, 2, 3, 4

COMMAND_KIND = {"lcs": "lcs", "mindist": "mindist", "dim": "dimension",
                "entropy": "entropy", "rotation": "rotation"}


def _common(p):
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--seed", type=lambda s: int(s, 0), help="override the master seed")
    p.add_argument("--out", help="output directory (default $ORBITMATCH_OUT/<kind>)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for trials")
    p.add_argument("--strict", action="store_true", help="exit 4 when a verdict fails")
    p.add_argument("--trials", type=int, help="override the trial count")
    p.add_argument("--n-max", type=int, help="override schedule.n_max")
    p.add_argument("--figures", action="store_true",
                   help="also write plot-ready columns and PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orbitmatch", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", *COMMAND_KIND, "experiment"):
        p = sub.add_parser(name)
        _common(p)
        if name == "experiment":
            p.add_argument("--manifest", help="rerun the config stored in a manifest")
        if name == "simulate":
            p.add_argument("--kind", default="mindist", choices=cfgmod.KINDS,
                           help="default config to take the source from")
    return parser


class _Failure(Exception):
    def __init__(self, code, exc):
        super().__init__(str(exc))
        self.code = code
        self.exc = exc


def _exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DegenerateError, NonConvergenceError)):
        return EXIT_DEGENERATE
    return EXIT_ERROR


def _load_config(args, kind=None) -> cfgmod.ExperimentConfig:
    if args.config:
        cfg = cfgmod.load(args.config)
        if kind is not None and cfg.kind != kind:
            raise ConfigError(f"config kind {cfg.kind!r} does not match command {kind!r}")
    elif kind is not None:
        cfg = cfgmod.default_config(kind)
    else:
        raise ConfigError("--config or --manifest is required")
    cfg = cfg.with_overrides(seed=args.seed, trials=args.trials)
    if args.n_max is not None:
        cfg = cfgmod.ExperimentConfig(cfg.kind, cfg.source, {**cfg.schedule, "n_max": args.n_max},
                                      cfg.params, cfg.tolerance, cfg.seed, cfg.trials, cfg.output)
    return cfg


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output:
        return Path(cfg.output)
    return ex.default_out_dir(cfg.kind if cfg is not None else "run")


def _print_summary(manifest, out):
    print(f"# {manifest.kind}: {len(manifest.trial_seeds)} trial(s), "
          f"{manifest.wall_clock_seconds:.2f} s -> {out}")
    print(ex.render_csv(ex.SUMMARY_COLUMNS, manifest.summary), end="")


def _simulate(args) -> int:
    cfg = _load_config(args, None if args.config else args.kind)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    n = cfg.build_schedule().max
    rng = Rng(cfg.seed)
    if cfg.source_type in cfgmod.PROCESS_TYPES:
        seq = sample_process(cfgmod.process_spec(cfg), n, rng)
        path = out / "sequence.txt"
        if seq.alphabet_size <= 10:
            text = "".join(map(str, seq.symbols.tolist()))
        else:
            text = ",".join(map(str, seq.symbols.tolist()))
        ex._write(path, text + "\n")
    else:
        cloud = ex.build_cloud(cfg, n, rng, cfg.seed)
        path = out / "orbit.orbc"
        write_cloud(path, cloud)
    print(path)
    return EXIT_OK


def _run(args, kind) -> int:
    if getattr(args, "manifest", None):
        old = ex.load_manifest(args.manifest)
        cfg = cfgmod.parse(old.config_text)
        out = _out_dir(args, cfg)
        manifest, diff = ex.rerun_manifest(args.manifest, out, args.workers)
        _print_summary(manifest, out)
        if diff:
            print(json.dumps({"checksum_mismatch": diff}), file=sys.stderr)
            return EXIT_STRICT if args.strict else EXIT_OK
        print("# rerun reproduced every result file byte for byte")
    else:
        cfg = _load_config(args, kind)
        out = _out_dir(args, cfg)
        manifest = ex.run_experiment(cfg, out, args.workers)
        _print_summary(manifest, out)
    if args.figures:
        for p in emit_plot_data(cfg, out):
            print(f"# wrote {p}")
    if args.strict and not manifest.passed:
        return EXIT_STRICT
    return EXIT_OK


def _error_record(exc, code, out):
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code,
           "diagnostics": getattr(exc, "diagnostics", {})}
    text = json.dumps(rec, sort_keys=True, default=str)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if args.command == "simulate":
            return _simulate(args)
        return _run(args, COMMAND_KIND.get(args.command))
    except OrbitMatchError as exc:
        code = _exit_code(exc)
        out = Path(args.out) if args.out else None
        _error_record(exc, code, out)
        return code

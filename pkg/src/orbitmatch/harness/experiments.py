"""Experiment orchestration: trials, series CSVs, summaries and manifests.

Every experiment writes three files into its output directory:

``<kind>_series.csv``
    one row per measured point of every trial (fixed columns per kind,
    see :data:`SERIES_COLUMNS`);
``<kind>_summary.csv``
    ``quantity,target,fitted,lo,hi,verdict``, computed only from the
    series file and the config so it can be recomputed offline;
``manifest.json``
    the config text and its SHA-256, the package version, per-trial seeds,
    wall-clock time and SHA-256 of both CSVs.

Reals are written with 17 significant digits, integers verbatim, and
lines end in ``\\n``.  Trial ``t`` draws from ``Rng(derive_seed(seed, t))``
regardless of how trials are distributed over workers, so the CSVs depend
only on the config.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..core import Rng, derive_seed, upper_half
from ..errors import ConfigError, DegenerateError, MissingSeriesError
from ..estimators import (
    CorrelationCurve,
    ball_moment_check,
    correlation_dimension,
    correlation_sum,
    default_radii,
    fit_line,
)
from ..matching import lcs_fast, renyi_collision_estimate
from ..mindist import bridge_check, check_duality, mindist_values
from ..orbits import (
    OrbitGenConfig,
    correlation_dimension_of,
    generate_orbit,
    uniform_cloud,
)
from ..processes import exact_h2, sample_process
from ..rotation import (
    cf_expand,
    convergent_probes,
    eta_estimate,
    rotation_trial,
)
from . import config as cfgmod
from .config import ExperimentConfig

SERIES_COLUMNS = {
    "lcs": ("trial", "seed", "n", "log_n", "M_n"),
    "mindist": ("trial", "seed", "n", "neg_log_n", "m_n", "log_m_n"),
    "dimension": ("trial", "seed", "r", "log_r", "C", "log_C", "pairs", "total_pairs"),
    "entropy": ("trial", "seed", "k", "h2_hat", "collision_fraction", "plug_in", "windows"),
    "rotation": ("trial", "seed", "series", "n", "m_n", "exponent"),
    "bridge": ("trial", "seed", "n", "M_n", "neglog_m_n", "M_2n", "applies", "holds"),
    "duality": ("trial", "seed", "n", "r", "m_n", "wait_forward", "wait_backward",
                "forward_applies", "forward_ok", "converse_applies", "converse_ok"),
    "moments": ("trial", "seed", "r", "first", "second", "ratio"),
}
SUMMARY_COLUMNS = ("quantity", "target", "fitted", "lo", "hi", "verdict")
TEXT_COLUMNS = {"series"}

PROCESS_KINDS = {"lcs", "entropy", "bridge"}


def series_name(kind: str) -> str:
    return f"{kind}_series.csv"


def summary_name(kind: str) -> str:
    return f"{kind}_summary.csv"


# ---------------------------------------------------------------------------
# formatting


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return "nan"
    return "%.17g" % float(v)


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def parse_rows(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for rec in reader:
        out.append({k: (v if k in TEXT_COLUMNS else float(v)) for k, v in rec.items()})
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# sources


def _param_int(cfg, section, key, default):
    raw = getattr(cfg, section).get(key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc


def build_cloud(cfg: ExperimentConfig, n: int, rng: Rng, seed: int):
    metric = cfg.metric()
    if cfg.source_type == "uniform":
        return uniform_cloud(n, _param_int(cfg, "source", "dim", 1), rng, metric)
    spec = cfgmod.map_spec(cfg)
    gen = OrbitGenConfig(n, seed, _param_int(cfg, "source", "burn_in", 1000),
                         _param_int(cfg, "source", "digit_depth", 96))
    return generate_orbit(spec, gen, rng, metric)


def cloud_dimension(cfg: ExperimentConfig) -> float:
    if cfg.source_type == "uniform":
        return float(_param_int(cfg, "source", "dim", 1))
    return correlation_dimension_of(cfgmod.map_spec(cfg))


def _check_source(cfg: ExperimentConfig):
    t = cfg.source_type
    if cfg.kind in PROCESS_KINDS and t not in cfgmod.PROCESS_TYPES:
        raise ConfigError(f"{cfg.kind} needs a process source, got {t!r}")
    if cfg.kind not in PROCESS_KINDS and t not in cfgmod.MAP_TYPES:
        raise ConfigError(f"{cfg.kind} needs a map source, got {t!r}")
    if cfg.kind == "rotation" and t != "rotation":
        raise ConfigError("rotation experiments need a rotation source")
    if t in cfgmod.PROCESS_TYPES:
        cfgmod.process_spec(cfg)
    elif t != "uniform":
        cfgmod.map_spec(cfg)
    cfg.build_schedule()


# ---------------------------------------------------------------------------
# trials


def _trial_lcs(cfg, t, seed, rng):
    spec = cfgmod.process_spec(cfg)
    sched = cfg.build_schedule()
    burn = cfg.param("burn_in", 0, int)
    x = sample_process(spec, sched.max, rng.split(0), burn)
    y = sample_process(spec, sched.max, rng.split(1), burn)
    return [(t, seed, n, math.log(n), lcs_fast(x, y, n)) for n in sched.values.tolist()]


def _trial_mindist(cfg, t, seed, rng):
    sched = cfg.build_schedule()
    X = build_cloud(cfg, sched.max, rng.split(0), seed)
    Y = build_cloud(cfg, sched.max, rng.split(1), seed)
    m = mindist_values(X, Y, sched.values)
    rows = []
    for n, v in zip(sched.values.tolist(), m.tolist()):
        lv = math.log(v) if v > 0 else -math.inf
        rows.append((t, seed, n, -math.log(n), v, lv))
    return rows


def _trial_dimension(cfg, t, seed, rng):
    n = cfg.build_schedule().max
    cloud = build_cloud(cfg, n, rng, seed)
    radii = (cfgmod.float_list(cfg.params["radii"]) if "radii" in cfg.params
             else default_radii(cloud))
    radii = np.sort(radii)[::-1]
    curve = correlation_sum(cloud, radii, cfg.param("theiler", 0, int))
    rows = []
    for r, c, k in zip(curve.radii.tolist(), curve.c_values.tolist(), curve.pair_counts.tolist()):
        lc = math.log(c) if c > 0 else -math.inf
        rows.append((t, seed, r, math.log(r), c, lc, k, curve.total_pairs))
    return rows


def _entropy_ks(cfg):
    if "ks" in cfg.params:
        ks = sorted({int(v) for v in cfgmod.float_list(cfg.params["ks"])})
    else:
        ks = [cfg.param("k", 10, int)]
    return ks


def _trial_entropy(cfg, t, seed, rng):
    spec = cfgmod.process_spec(cfg)
    n = cfg.build_schedule().max
    seq = sample_process(spec, n, rng, cfg.param("burn_in", 0, int))
    rows = []
    for k in _entropy_ks(cfg):
        est = renyi_collision_estimate(seq, k)
        rows.append((t, seed, k, est.h2, est.extra["collision_fraction"],
                     est.extra["plug_in"], est.extra["windows"]))
    return rows


def _rotation_setup(cfg):
    theta = cfgmod.map_spec(cfg).theta
    sched = cfg.build_schedule()
    cf = cf_expand(theta)
    n_lo = int(sched.values[upper_half(sched.values)][0])
    return theta, sched, cf, convergent_probes(cf, n_lo, sched.max)


def _trial_rotation(cfg, t, seed, rng):
    theta, sched, cf, probes = _rotation_setup(cfg)
    words = rng.next_u64(2)
    delta = (int(words[0]) << 64) | int(words[1])
    tr = rotation_trial(theta, cf, delta, sched.max, sched, probes)
    if tr.excluded:
        return []
    rows = [(t, seed, "schedule", n, m, e) for n, m, e in
            zip(sched.values.tolist(), tr.schedule_m.tolist(), tr.schedule_exponents.tolist())]
    rows += [(t, seed, "probe", n, m, e) for n, m, e in
             zip(tr.probe_n.tolist(), tr.probe_m.tolist(), tr.probe_exponents.tolist())]
    return rows


def _trial_bridge(cfg, t, seed, rng):
    spec = cfgmod.process_spec(cfg)
    sched = cfg.build_schedule()
    x = sample_process(spec, 2 * sched.max, rng.split(0))
    y = sample_process(spec, 2 * sched.max, rng.split(1))
    rows = []
    for n in sched.values.tolist():
        rep = bridge_check(x, y, n)
        rows.append((t, seed, n, rep.lcs_n, rep.neglog_m_n, rep.lcs_2n, rep.applies, rep.holds))
    return rows


def _trial_duality(cfg, t, seed, rng):
    sched = cfg.build_schedule()
    X = build_cloud(cfg, sched.max, rng.split(0), seed)
    Y = build_cloud(cfg, sched.max, rng.split(1), seed)
    iso = cfg.source_type == "rotation"
    radii = cfgmod.float_list(cfg.params.get("radii", "0.1, 0.01, 0.001"))
    rows = []
    for n in sched.values.tolist():
        for r in radii.tolist():
            rep = check_duality(X, Y, n, r, isometric=iso)
            rows.append((t, seed, n, r, rep.m_n, float(rep.wait_forward),
                         math.nan if rep.wait_backward is None else float(rep.wait_backward),
                         rep.forward_applies, rep.forward_ok,
                         rep.converse_applies, rep.converse_ok))
    return rows


def _trial_moments(cfg, t, seed, rng):
    cloud = build_cloud(cfg, cfg.build_schedule().max, rng, seed)
    radii = cfgmod.float_list(cfg.params.get("radii", "0.1, 0.01"))
    rows = []
    for r in radii.tolist():
        rep = ball_moment_check(cloud, r)
        rows.append((t, seed, r, rep.first, rep.second, rep.ratio))
    return rows


TRIALS = {
    "lcs": _trial_lcs,
    "mindist": _trial_mindist,
    "dimension": _trial_dimension,
    "entropy": _trial_entropy,
    "rotation": _trial_rotation,
    "bridge": _trial_bridge,
    "duality": _trial_duality,
    "moments": _trial_moments,
}


def trial_seeds(cfg: ExperimentConfig) -> list[int]:
    return [derive_seed(cfg.seed, t) for t in range(cfg.trials)]


def run_trial(cfg: ExperimentConfig, t: int) -> list[tuple]:
    seed = derive_seed(cfg.seed, t)
    return TRIALS[cfg.kind](cfg, t, seed, Rng(seed))


def _trial_entry(args):
    text, t = args
    return run_trial(cfgmod.parse(text), t)


# ---------------------------------------------------------------------------
# summaries: pure functions of (config, series rows)


def _by_trial(rows):
    groups = {}
    for r in rows:
        groups.setdefault(int(r["trial"]), []).append(r)
    return [groups[t] for t in sorted(groups)]


def _col(rows, key):
    return np.array([r[key] for r in rows], dtype=np.float64)


def _fit_upper(n, x, y):
    mask = upper_half(n)
    return fit_line(x[mask], y[mask])


def trial_fits(cfg: ExperimentConfig, rows: list[dict]) -> dict:
    """Per-trial log-log fit for the kinds that have one."""
    fits = {}
    for group in _by_trial(rows):
        t = int(group[0]["trial"])
        if cfg.kind == "lcs":
            fits[t] = _fit_upper(_col(group, "n"), _col(group, "log_n"), _col(group, "M_n"))
        elif cfg.kind == "mindist":
            keep = [r for r in group if r["m_n"] > 0]
            if len(keep) >= 4:
                fits[t] = _fit_upper(_col(keep, "n"), _col(keep, "neg_log_n"), _col(keep, "log_m_n"))
        elif cfg.kind == "dimension":
            curve = CorrelationCurve(_col(group, "r"), _col(group, "C"),
                                     _col(group, "pairs").astype(np.int64),
                                     int(group[0]["total_pairs"]))
            try:
                fits[t] = correlation_dimension(curve, min_pairs=cfg.param("min_pairs", 100, int),
                                                ceiling=cfg.param("ceiling", 0.2, float))
            except DegenerateError:
                continue
    return fits


def _band(cfg, target, prefix="", rel_default=None, abs_default=None):
    lo = cfg.tolerance.get(prefix + "lo")
    hi = cfg.tolerance.get(prefix + "hi")
    if lo is not None or hi is not None:
        return (float(lo) if lo is not None else -math.inf,
                float(hi) if hi is not None else math.inf)
    if not math.isfinite(target):
        return math.nan, math.nan
    if "rel" in cfg.tolerance or abs_default is None:
        rel = cfg.tol("rel", rel_default if rel_default is not None else 0.15)
        return target * (1 - rel), target * (1 + rel)
    a = cfg.tol("abs", abs_default)
    return target - a, target + a


def _verdict(fitted, lo, hi):
    if math.isnan(lo) and math.isnan(hi):
        return "n/a"
    if not math.isfinite(fitted):
        return "fail"
    return "pass" if lo <= fitted <= hi else "fail"


def _row(quantity, target, fitted, lo, hi):
    return (quantity, target, fitted, lo, hi, _verdict(fitted, lo, hi))


def _median(values, what):
    values = [v for v in values if math.isfinite(v)]
    if not values:
        raise DegenerateError(f"no trial produced a usable {what}")
    return float(np.median(values))


def _process_target(cfg, scale):
    if "target" in cfg.tolerance:
        return cfg.tol("target", math.nan)
    h = exact_h2(cfgmod.process_spec(cfg))
    if h is None:
        return math.nan
    return scale(h.h2)


def summarize(cfg: ExperimentConfig, rows: list[dict]) -> list[tuple]:
    kind = cfg.kind
    if not rows:
        raise DegenerateError("series file holds no rows")
    if kind in ("lcs", "mindist", "dimension"):
        fits = trial_fits(cfg, rows)
        slope = _median([f.slope for f in fits.values()], "slope")
        if kind == "lcs":
            target = _process_target(cfg, lambda h: 2.0 / h)
            lo, hi = _band(cfg, target, rel_default=0.15)
            return [_row("lcs_slope", target, slope, lo, hi)]
        if kind == "mindist":
            target = 2.0 / cloud_dimension(cfg)
            lo, hi = _band(cfg, target, rel_default=0.2)
            return [_row("mindist_slope", target, slope, lo, hi)]
        target = cloud_dimension(cfg)
        lo, hi = _band(cfg, target, abs_default=0.1)
        return [_row("correlation_dimension", target, slope, lo, hi)]
    if kind == "entropy":
        ks = _entropy_ks(cfg)
        k = cfg.param("k", ks[-1], int)
        vals = [r["h2_hat"] for r in rows if int(r["k"]) == k]
        if not vals:
            raise ConfigError(f"params.k = {k} is not among the measured block lengths")
        target = _process_target(cfg, lambda h: h)
        if math.isnan(target):
            # no closed form (renewal): report the spread over k, claim no limit
            per_k = [_median([r["h2_hat"] for r in rows if int(r["k"]) == kk], "estimate")
                     for kk in ks]
            return [_row("h2_bracket_lo", math.nan, min(per_k), math.nan, math.nan),
                    _row("h2_bracket_hi", math.nan, max(per_k), math.nan, math.nan)]
        lo, hi = _band(cfg, target, rel_default=0.05)
        return [_row(f"h2_k{k}", target, _median(vals, "estimate"), lo, hi)]
    if kind == "rotation":
        theta, *_ = _rotation_setup(cfg)
        eta = eta_estimate(cf_expand(theta)).eta
        mx, mn = [], []
        for group in _by_trial(rows):
            sch = [r for r in group if r["series"] == "schedule"]
            prb = [r for r in group if r["series"] == "probe"]
            n = _col(sch, "n")
            mx.append(float(np.max(_col(sch, "exponent")[upper_half(n)])))
            mn.append(float(np.min(_col(prb, "exponent"))) if prb else math.nan)
        t_inf, t_sup = 1.0 / eta, 1.0
        lo1 = cfg.tol("liminf_lo", t_inf - 0.2)
        hi1 = cfg.tol("liminf_hi", t_inf + 0.2)
        lo2 = cfg.tol("limsup_lo", t_sup - 0.2)
        hi2 = cfg.tol("limsup_hi", t_sup + 0.2)
        return [_row("liminf_exponent", t_inf, _median(mn, "probe minimum"), lo1, hi1),
                _row("limsup_exponent", t_sup, _median(mx, "schedule maximum"), lo2, hi2)]
    if kind == "bridge":
        bad = sum(1 for r in rows if r["applies"] and not r["holds"])
        return [_row("sandwich_failures", 0.0, float(bad), 0.0, 0.0)]
    if kind == "duality":
        fwd = sum(1 for r in rows if r["forward_applies"] and not r["forward_ok"])
        conv = sum(1 for r in rows if r["converse_applies"] and not r["converse_ok"])
        return [_row("forward_failures", 0.0, float(fwd), 0.0, 0.0),
                _row("converse_failures", 0.0, float(conv), 0.0, 0.0)]
    if kind == "moments":
        # no theoretical constant: report the empirical K only
        return [_row("empirical_K", math.nan, float(max(r["ratio"] for r in rows)),
                     math.nan, math.nan)]
    raise ConfigError(f"unknown kind {kind!r}")


def read_series(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise MissingSeriesError(f"series file not found: {path}")
    return parse_rows(path.read_text(encoding="utf-8"))


def recompute_summary(cfg: ExperimentConfig, out_dir) -> list[tuple]:
    """Summary rows from the series file on disk."""
    return summarize(cfg, read_series(Path(out_dir) / series_name(cfg.kind)))


# ---------------------------------------------------------------------------
# running


@dataclass
class RunManifest:
    kind: str
    config_text: str
    config_sha256: str
    version: str
    master_seed: int
    trial_seeds: list
    wall_clock_seconds: float
    files: dict
    summary: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return all(row[5] != "fail" for row in self.summary)

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "config": self.config_text,
            "config_sha256": self.config_sha256,
            "version": self.version,
            "master_seed": self.master_seed,
            "trial_seeds": self.trial_seeds,
            "wall_clock_seconds": self.wall_clock_seconds,
            "files": self.files,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            doc = json.loads(text)
            return cls(doc["kind"], doc["config"], doc["config_sha256"], doc["version"],
                       int(doc["master_seed"]), list(doc["trial_seeds"]),
                       float(doc["wall_clock_seconds"]), dict(doc["files"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"unreadable manifest: {exc}") from exc


def _collect(cfg: ExperimentConfig, workers: int) -> list[tuple]:
    if workers <= 1 or cfg.trials == 1:
        per_trial = [run_trial(cfg, t) for t in range(cfg.trials)]
    else:
        text = cfgmod.serialize(cfg)
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            per_trial = list(pool.map(_trial_entry, [(text, t) for t in range(cfg.trials)]))
    rows = []
    for chunk in per_trial:  # already in trial order
        rows.extend(chunk)
    return rows


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int = 1) -> RunManifest:
    """Run every trial, write the series, summary and manifest files and
    return the manifest (with the summary rows attached)."""
    _check_source(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    rows = _collect(cfg, max(1, int(workers)))
    if not rows:
        raise DegenerateError("no trial produced any rows")
    series_path = out / series_name(cfg.kind)
    _write(series_path, render_csv(SERIES_COLUMNS[cfg.kind], rows))
    summary = recompute_summary(cfg, out)
    summary_path = out / summary_name(cfg.kind)
    _write(summary_path, render_csv(SUMMARY_COLUMNS, summary))
    text = cfgmod.serialize(cfg)
    manifest = RunManifest(
        cfg.kind, text, hashlib.sha256(text.encode("utf-8")).hexdigest(), __version__,
        cfg.seed, trial_seeds(cfg), round(time.perf_counter() - start, 3),
        {p.name: sha256_file(p) for p in (series_path, summary_path)}, summary)
    _write(out / "manifest.json", manifest.to_json())
    return manifest


def load_manifest(path) -> RunManifest:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    return RunManifest.from_json(path.read_text(encoding="utf-8"))


def rerun_manifest(path, out_dir, workers: int = 1) -> tuple[RunManifest, list]:
    """Rerun the config stored in a manifest; returns the new manifest and
    the names of result files whose checksums differ from the recorded ones."""
    old = load_manifest(path)
    if hashlib.sha256(old.config_text.encode("utf-8")).hexdigest() != old.config_sha256:
        raise ConfigError("manifest config does not match its recorded hash")
    new = run_experiment(cfgmod.parse(old.config_text), out_dir, workers)
    diff = sorted(name for name, digest in old.files.items() if new.files.get(name) != digest)
    return new, diff


def default_out_dir(kind: str) -> Path:
    return Path(os.environ.get("ORBITMATCH_OUT", "orbitmatch_out")) / kind

"""Experiment runner: JSON configs, seeded sweeps, CSV output, plot scripts.

A config is one JSON document with top-level keys {system, solver, sweep,
schemes, seeds}; system/solver entries map onto SystemConfig fields and
unknown keys are rejected. One CSV row is written per (sweep point, seed,
scheme), deterministically: RNG streams are counter-based (Philox) and keyed
by purpose + sweep point + seed (+ scheme for solver randomness), so serial
and parallel runs produce identical bytes.
"""

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields as dc_fields, replace

import numpy as np

from .ao import StageError, run_ao
from .channel import (SystemConfig, build_csit, estimate_sigma,
                      sample_channels, without_irs)

SCHEMES = ("proposed", "no_irs", "noma")
CSV_FIELDS = ("seed", "snr_db", "M", "N", "K", "I", "L_groups", "csit_mode",
              "scheme", "iter_count", "r_min_final", "r_min_trace",
              "wall_time_ms", "status")

_PURPOSE_CHANNEL = 0
_PURPOSE_CSIT = 1
_PURPOSE_SOLVER = 2
_PURPOSE_SIGMA = 3

_CONFIG_FIELDS = {f.name for f in dc_fields(SystemConfig)}
_sigma_cache = {}


class ConfigError(ValueError):
    """Config file failed to parse or validate."""


@dataclass
class ExperimentRecord:
    seed: int
    snr_db: float
    M: int
    N: int
    K: int
    I: int
    L_groups: int
    csit_mode: str
    scheme: str
    iter_count: int
    r_min_final: float
    r_min_trace: list
    wall_time_ms: float
    status: str = "ok"


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _record_row(rec):
    return [_fmt(rec.seed), _fmt(rec.snr_db), _fmt(rec.M), _fmt(rec.N),
            _fmt(rec.K), _fmt(rec.I), _fmt(rec.L_groups), rec.csit_mode,
            rec.scheme, _fmt(rec.iter_count), _fmt(rec.r_min_final),
            ";".join(f"{t:.6g}" for t in rec.r_min_trace),
            _fmt(rec.wall_time_ms), rec.status]


def _line_of(key, text):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return lineno
    return None


def load_config(path):
    """Parse and validate a config file; raises ConfigError with a line hint."""
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")

    known_top = {"system", "solver", "sweep", "schemes", "seeds"}
    for key in doc:
        if key not in known_top:
            line = _line_of(key, text)
            raise ConfigError(f"{path}:{line}: unknown top-level key '{key}'")
    merged = {}
    for section in ("system", "solver"):
        for key, val in doc.get(section, {}).items():
            if key not in _CONFIG_FIELDS:
                line = _line_of(key, text)
                raise ConfigError(f"{path}:{line}: unknown {section} key '{key}'")
            merged[key] = val
    if "path_count_range" in merged:
        merged["path_count_range"] = tuple(merged["path_count_range"])

    sweep = doc.get("sweep", {})
    if sweep:
        if "param" in sweep:
            params = [sweep["param"]]
            values = [[v] for v in sweep["values"]]
        elif "params" in sweep:
            params = list(sweep["params"])
            values = [list(v) for v in sweep["values"]]
        else:
            line = _line_of("sweep", text)
            raise ConfigError(f"{path}:{line}: sweep needs 'param' or 'params'")
        for prm in params:
            if prm not in _CONFIG_FIELDS:
                line = _line_of(prm, text)
                raise ConfigError(f"{path}:{line}: unknown sweep parameter '{prm}'")
    else:
        params, values = [], [[]]

    schemes = doc.get("schemes", ["proposed"])
    for sch in schemes:
        if sch not in SCHEMES:
            line = _line_of(sch, text)
            raise ConfigError(f"{path}:{line}: unknown scheme '{sch}'")
    seeds = doc.get("seeds", [0])
    try:
        base_cfg_kwargs = dict(merged)
        SystemConfig(**base_cfg_kwargs)  # fail fast on invalid base values
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid system config: {exc}") from exc
    return {"base": base_cfg_kwargs, "sweep_params": params,
            "sweep_values": values, "schemes": list(schemes),
            "seeds": [int(s) for s in seeds]}


def _stream(purpose, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(
        [purpose, *[int(k) for k in key]])))


def _device_sigmas(cfg, no_irs):
    """Per-device channel covariances; cached per dimension tuple."""
    key = (cfg.M, cfg.N, cfg.K, cfg.B_s, cfg.path_count_range, cfg.sigma_draws, no_irs)
    if key in _sigma_cache:
        return _sigma_cache[key]
    rng = _stream(_PURPOSE_SIGMA, cfg.M, cfg.N, cfg.K, cfg.sigma_draws, int(no_irs))
    if no_irs:
        sampler = lambda r: without_irs(sample_channels(cfg, r))
    else:
        sampler = None
    sig = [estimate_sigma(cfg, k, rng, sampler=sampler) for k in range(cfg.K)]
    _sigma_cache[key] = sig
    return sig


def run_trial(base_kwargs, sweep_params, assignment, sweep_index, seed, scheme):
    """One (sweep point, seed, scheme) cell; never raises, reports status."""
    kwargs = dict(base_kwargs)
    kwargs.update(dict(zip(sweep_params, assignment)))
    kwargs["seed"] = seed
    if scheme == "noma":
        kwargs["I"] = 1
    try:
        cfg = SystemConfig(**kwargs)
    except ValueError as exc:
        return ExperimentRecord(seed=seed, snr_db=kwargs.get("snr_db", 0.0),
                                M=kwargs.get("M", 0), N=kwargs.get("N", 0),
                                K=kwargs.get("K", 0), I=kwargs.get("I", 0),
                                L_groups=kwargs.get("L_groups", 0),
                                csit_mode=str(kwargs.get("csit_mode", "")),
                                scheme=scheme, iter_count=0, r_min_final=0.0,
                                r_min_trace=[], wall_time_ms=0.0,
                                status=f"error:config:{exc}")
    rec = ExperimentRecord(seed=seed, snr_db=cfg.snr_db, M=cfg.M, N=cfg.N,
                           K=cfg.K, I=cfg.I, L_groups=cfg.L_groups,
                           csit_mode=cfg.csit_mode, scheme=scheme, iter_count=0,
                           r_min_final=0.0, r_min_trace=[], wall_time_ms=0.0)
    try:
        channels = sample_channels(cfg, _stream(_PURPOSE_CHANNEL, sweep_index, seed))
        if scheme == "no_irs":
            channels = without_irs(channels)
        csit = None
        if cfg.csit_mode == "estimated":
            sigma = _device_sigmas(cfg, scheme == "no_irs")
            csit = build_csit(cfg, channels, sigma,
                              _stream(_PURPOSE_CSIT, sweep_index, seed))
        scheme_id = SCHEMES.index(scheme)
        t0 = time.perf_counter()
        result = run_ao(cfg, channels, csit=csit,
                        rng=_stream(_PURPOSE_SOLVER, sweep_index, seed, scheme_id))
        wall = (time.perf_counter() - t0) * 1000.0 if cfg.timing else 0.0
        rec.iter_count = result.iterations
        rec.r_min_final = result.trace[-1]
        rec.r_min_trace = list(result.trace)
        rec.wall_time_ms = wall
    except StageError as exc:
        rec.status = f"error:{exc.stage}"
    except Exception as exc:  # keep the sweep alive; the row records the failure
        rec.status = f"error:{type(exc).__name__}"
    return rec


def _trial_star(args):
    return run_trial(*args)


def run_experiment(config_path, out_path, parallelism=1):
    """Run every trial of a config and write the CSV; returns #failed rows."""
    conf = load_config(config_path)
    tasks = []
    for sweep_index, assignment in enumerate(conf["sweep_values"]):
        for seed in conf["seeds"]:
            for scheme in conf["schemes"]:
                tasks.append((conf["base"], conf["sweep_params"], assignment,
                              sweep_index, seed, scheme))
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(_trial_star, tasks))
    else:
        records = [run_trial(*t) for t in tasks]

    order = {s: i for i, s in enumerate(SCHEMES)}
    keyed = sorted(zip(tasks, records),
                   key=lambda tr: (tr[0][3], tr[0][4], order[tr[0][5]]))
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for _, rec in keyed:
            writer.writerow(_record_row(rec))
    return sum(1 for _, rec in keyed if rec.status != "ok")


# --- presets ---

def _preset_doc(system, params, values, seeds, schemes=("proposed",)):
    return {"system": system,
            "sweep": {"params": params, "values": values},
            "schemes": list(schemes), "seeds": list(range(seeds))}


def sweep_presets(name, scale):
    """Named experiment configs; desk scale halves M, N, K and caps seeds at 20."""
    if scale not in ("full", "desk"):
        raise ConfigError(f"unknown scale '{scale}' (full|desk)")
    desk = scale == "desk"
    seeds = 20 if desk else 50
    if name == "fig5":  # convergence vs outer iterations at several sizes
        values = [[4, 6, 8], [8, 6, 8], [8, 8, 8]] if desk else \
                 [[8, 12, 16], [16, 12, 16], [16, 16, 16]]
        return _preset_doc({"snr_db": 10, "L_groups": 4, "I": 2},
                           ["M", "K", "N"], values, seeds)
    if name == "fig6":  # rate splitting vs single-message, group counts
        sys_doc = ({"M": 8, "N": 8, "K": 6, "snr_db": 10} if desk
                   else {"M": 16, "N": 16, "K": 12, "snr_db": 10})
        return _preset_doc(sys_doc, ["I", "L_groups"],
                           [[1, 1], [1, 4], [2, 1], [2, 4]], seeds)
    if name == "fig7":  # device count sweep
        sys_doc = ({"M": 8, "N": 4, "L_groups": 4, "snr_db": 10} if desk
                   else {"M": 16, "N": 8, "L_groups": 4, "snr_db": 10})
        ks = [4, 6, 8] if desk else [8, 12, 16]
        return _preset_doc(sys_doc, ["K"], [[k] for k in ks], seeds,
                           schemes=("proposed", "no_irs"))
    if name == "fig8":  # element/antenna scaling at SNR 10
        ms = [4, 8] if desk else [8, 16, 24]
        ns = [2, 4, 8] if desk else [4, 8, 12, 16]
        values = [[m, n] for m in ms for n in ns]
        sys_doc = ({"K": 4, "L_groups": 4, "snr_db": 10} if desk
                   else {"K": 12, "L_groups": 4, "snr_db": 10})
        return _preset_doc(sys_doc, ["M", "N"], values, seeds)
    raise ConfigError(f"unknown preset '{name}' (fig5|fig6|fig7|fig8)")


# --- plot script emission ---

def emit_plot_script(csv_path):
    """Self-contained gnuplot script: mean ± std of the final min rate per
    scheme against the sweep axis."""
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_FIELDS if c not in header]
        if missing:
            raise ConfigError(f"CSV schema mismatch, missing columns: {missing}")
        rows = [r for r in reader]
    rows = [r for r in rows if r["status"] == "ok"]
    if not rows:
        raise ConfigError("CSV has no successful data rows to plot")

    axis = "snr_db"
    for cand in ("snr_db", "N", "M", "K", "I", "L_groups"):
        if len({r[cand] for r in rows}) > 1:
            axis = cand
            break
    agg = {}
    for r in rows:
        agg.setdefault((r["scheme"], float(r[axis])), []).append(float(r["r_min_final"]))

    schemes = sorted({s for s, _ in agg}, key=lambda s: SCHEMES.index(s))
    out = io.StringIO()
    out.write("# gnuplot script generated from " + str(csv_path) + "\n")
    out.write(f'set xlabel "{axis}"\n')
    out.write('set ylabel "min rate (bits/s/Hz)"\n')
    out.write("set key top left\n")
    for sch in schemes:
        out.write(f"$data_{sch} << EOD\n")
        xs = sorted(x for s, x in agg if s == sch)
        for x in xs:
            vals = np.asarray(agg[(sch, x)])
            out.write(f"{x:.6g} {vals.mean():.6g} {vals.std():.6g}\n")
        out.write("EOD\n")
    series = ", ".join(
        f'$data_{sch} using 1:2:3 with yerrorlines title "{sch}"' for sch in schemes)
    out.write("plot " + series + "\n")
    return out.getvalue()

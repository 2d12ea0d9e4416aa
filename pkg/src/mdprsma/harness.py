"""Scenario configuration, seeded Monte Carlo sweeps and result emission."""
from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .channel import ScenarioParams, build_ensemble, draw_scenario
from .schemes import SCHEMES, SchemeConfig, evaluate, optimize_schemes

log = logging.getLogger(__name__)

THREADS_ENV = "MDPRSMA_THREADS"
SWEEP_ALIASES = {"xpd_db": ("xpd_los_db", "xpd_nlos_db", "xpd_bs_db")}
CSIT_MODES = ("imperfect", "perfect")


@dataclass
class ScenarioConfig:
    """Flat experiment description; every field maps to one ``key=value`` line.

    ``sweep_axis`` names any numeric field (or ``xpd_db``, which sets all three
    XPDs at once). Powers are in dBW, gains in dBi.
    """

    nx: int = 2
    ny: int = 2
    nt: int = 2
    ks: int = 4
    kt: int = 2
    ps_dbw: float = 16.0
    pt_dbw: float = 13.0
    fc_hz: float = 2e9
    bandwidth_hz: float = 5e6
    tsys_k: float = 290.0
    altitude_m: float = 530e3
    sat_radius_m: float = 50e3
    bs_height_m: float = 30.0
    bs_radius_m: float = 1e3
    gain_sat_dbi: float = 6.0
    gain_bs_dbi: float = 6.0
    gain_rx_dbi: float = 0.0
    kappa_db: float = 15.0
    xpd_los_db: float = 15.0
    xpd_nlos_db: float = 5.0
    xpd_bs_db: float = 5.0
    eta: float = 4.0
    s: int = 50
    s_eval: int = 200
    epsilon: float = 1e-4
    max_outer_iters: int = 300
    trials: int = 30
    seed: int = 0
    schemes: tuple = ("mdp-rsma", "rsma-pd")
    sweep_axis: str = "ps_dbw"
    sweep_values: tuple = (10.0, 16.0, 22.0)
    csit: tuple = ("imperfect",)
    perfect_samples: int = 4
    init: str = "matched"
    nested_starts: bool = True

    def validate(self):
        for name in ("nx", "ny", "nt", "s", "s_eval", "trials", "max_outer_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ks < 0 or self.kt < 0 or self.ks + self.kt == 0:
            raise ValueError("user counts must be >= 0 and not both zero")
        if self.ks % 2 or self.kt % 2:
            raise ValueError("Ks and Kt must be even (half of each group per polarization)")
        if not self.schemes:
            raise ValueError("empty scheme list")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")
        for m in self.csit:
            if m not in CSIT_MODES:
                raise ValueError(f"unknown CSIT mode {m!r}")
        if self.sweep_axis not in SWEEP_ALIASES and self.sweep_axis not in _NUMERIC:
            raise ValueError(f"cannot sweep {self.sweep_axis!r}")
        if not self.sweep_values:
            raise ValueError("empty sweep")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        return self

    def at(self, value) -> "ScenarioConfig":
        """Copy with the sweep axis set to ``value``."""
        keys = SWEEP_ALIASES.get(self.sweep_axis, (self.sweep_axis,))
        typ = _TYPES[keys[0]]
        return dataclasses.replace(self, **{k: typ(value) for k in keys})

    def params(self) -> ScenarioParams:
        return ScenarioParams(**{f.name: getattr(self, f.name) for f in dataclasses.fields(ScenarioParams)})

    def budgets(self) -> tuple:
        return 10.0 ** (self.ps_dbw / 10.0), 10.0 ** (self.pt_dbw / 10.0)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
_TYPES = {k: {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple}[v] if isinstance(v, str) else v
          for k, v in _TYPES.items()}
_NUMERIC = {k for k, v in _TYPES.items() if v in (int, float)}
_TUPLE_ITEM = {"schemes": str, "sweep_values": float, "csit": str}

PRESETS = {
    "desk": {},
    "paper": {"nx": 4, "ny": 4, "nt": 6, "ks": 8, "kt": 4, "s": 1000, "s_eval": 1000, "epsilon": 1e-6,
              "trials": 1000},
}


def _parse_value(key: str, text: str):
    typ = _TYPES[key]
    text = text.strip()
    if typ is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if typ is tuple:
        item = _TUPLE_ITEM[key]
        return tuple(item(x.strip()) for x in text.split(",") if x.strip())
    if typ is int:
        return int(float(text)) if float(text).is_integer() else int(text)
    return typ(text)


def apply_overrides(cfg: ScenarioConfig, pairs) -> ScenarioConfig:
    """Apply ``key=value`` strings."""
    upd = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} is not key=value")
        k, v = pair.split("=", 1)
        k = k.strip()
        if k not in _TYPES:
            raise ValueError(f"unknown config key {k!r}")
        upd[k] = _parse_value(k, v)
    return dataclasses.replace(cfg, **upd)


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse flat ``key=value`` text; ``#`` starts a comment."""
    pairs = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append(line)
    return apply_overrides(base or ScenarioConfig(), pairs)


def load_config(path=None, preset: str = "desk", overrides=()) -> ScenarioConfig:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    cfg = dataclasses.replace(ScenarioConfig(), **PRESETS[preset])
    if path is not None:
        with open(path) as fh:
            cfg = parse_config(fh.read(), cfg)
    return apply_overrides(cfg, overrides).validate()


# ---------------------------------------------------------------------------
# trials


@dataclass
class ResultRow:
    sweep_value: float
    scheme: str
    trial: int
    csit: str
    min_rate: float
    min_rate_opt: float
    spc_rate: float
    cpc_rate: float
    lpc_rate: float
    su_private: float
    cu_private: float
    spc_power_fraction: float
    cpc_power_fraction: float
    common_scale: float
    outer_iterations: int
    converged: bool
    status: str = "ok"
    csit_gap: float = float("nan")
    wall_time: float = float("nan")

    @property
    def failed(self) -> bool:
        return self.status != "ok"


CSV_COLUMNS = [f.name for f in dataclasses.fields(ResultRow)]


def trial_streams(seed: int, trial: int):
    """Independent generators for geometry, optimization and held-out samples."""
    ss = np.random.SeedSequence([int(seed), int(trial)])
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def _mean(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.mean()) if x.size else 0.0


def _row(value, name, trial, csit, rep, trace, wall) -> ResultRow:
    fr = trace.solution.power_fractions()
    return ResultRow(sweep_value=float(value), scheme=name, trial=trial, csit=csit,
                     min_rate=rep.min_rate, min_rate_opt=trace.min_rate,
                     spc_rate=float(trace.rate_scale * trace.solution.c_spc.sum()),
                     cpc_rate=float(trace.rate_scale * trace.solution.c_cpc.sum()),
                     lpc_rate=float(trace.rate_scale * trace.solution.c_lpc.sum()),
                     su_private=_mean(rep.su_private), cu_private=_mean(rep.cu_private),
                     spc_power_fraction=float(fr["spc"]), cpc_power_fraction=float(fr["cpc"]),
                     common_scale=float(min(rep.common_scale.values(), default=1.0)),
                     outer_iterations=trace.iterations, converged=trace.converged, wall_time=wall)


def _failed_row(value, name, trial, csit, exc) -> ResultRow:
    nan = float("nan")
    return ResultRow(float(value), name, trial, csit, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, 0,
                     False, status=f"failed: {type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " "))


def perfect_csit_runs(names, eval_ens, budgets, scfg: SchemeConfig, m: int, nested=True, anchors=None) -> dict:
    """Per-realization optimization on the first ``m`` held-out samples.

    Each realization is optimized with its own channel (a single-sample
    ensemble) and scored there; the results are averaged per scheme.
    ``anchors`` maps scheme names to statistically designed solutions. They
    are added as warm starts and scored on the same realizations, so the
    per-realization optimum cannot fall below them.
    Returns ``{scheme: (mean min rate, list of traces, anchor mean or nan)}``.
    """
    anchors = anchors or {}
    if anchors:
        scfg = dataclasses.replace(scfg, warm_starts=tuple(scfg.warm_starts) + tuple(anchors.values()))
    per = {n: [] for n in names}
    paired = {n: [] for n in anchors}
    for j in range(min(m, eval_ens.s_count)):
        one = eval_ens.samples([j])
        traces = optimize_schemes(names, one, budgets, scfg, nested_starts=nested)
        for n in names:
            per[n].append(traces[n])
        for n, sol in anchors.items():
            paired[n].append(evaluate(sol, one, n).min_rate)
    return {n: (float(np.mean([t.min_rate for t in per[n]])), per[n],
                float(np.mean(paired[n])) if n in paired else float("nan")) for n in names}


def run_trial(cfg: ScenarioConfig, value, trial: int) -> list:
    """All schemes and CSIT modes of one (sweep value, trial) cell."""
    c = cfg.at(value)
    g_rng, o_rng, e_rng = trial_streams(cfg.seed, trial)
    scen = draw_scenario(c.params(), g_rng)
    ens = build_ensemble(scen, c.s, o_rng)
    ev = build_ensemble(scen, c.s_eval, e_rng)
    budgets = c.budgets()
    scfg = SchemeConfig(max_outer_iters=c.max_outer_iters, epsilon=c.epsilon, init=c.init)
    rows = []
    anchors = {}
    if "imperfect" in c.csit:
        try:
            traces = optimize_schemes(c.schemes, ens, budgets, scfg, nested_starts=c.nested_starts)
        except Exception as exc:  # noqa: BLE001 - a failed trial must not abort the sweep
            log.error("trial %d at %s: %s", trial, value, exc)
            rows += [_failed_row(value, n, trial, "imperfect", exc) for n in c.schemes]
        else:
            anchors = {n: traces[n].solution for n in c.schemes}
            for n in c.schemes:
                rep = evaluate(traces[n].solution, ev, n)
                rows.append(_row(value, n, trial, "imperfect", rep, traces[n], traces[n].wall_time))
    if "perfect" in c.csit:
        try:
            res = perfect_csit_runs(c.schemes, ev, budgets, scfg, c.perfect_samples, c.nested_starts, anchors)
        except Exception as exc:  # noqa: BLE001
            log.error("perfect-CSIT trial %d at %s: %s", trial, value, exc)
            rows += [_failed_row(value, n, trial, "perfect", exc) for n in c.schemes]
        else:
            for n in c.schemes:
                mean, trs, anchored = res[n]
                last = trs[-1]
                rep = evaluate(last.solution, ev.samples([len(trs) - 1]), n)
                row = _row(value, n, trial, "perfect", rep, last, sum(t.wall_time for t in trs))
                row.min_rate = row.min_rate_opt = mean
                row.csit_gap = mean - anchored
                row.outer_iterations = int(sum(t.iterations for t in trs))
                row.converged = all(t.converged for t in trs)
                rows.append(row)
    return rows


def _sort_key(r: ResultRow):
    return (r.sweep_value, r.scheme, r.csit, r.trial)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_sweep(cfg: ScenarioConfig, workers: int | None = None) -> list:
    """Every sweep value x trial, canonically ordered."""
    cfg.validate()
    workers = default_workers() if workers is None else workers
    jobs = [(v, t) for v in cfg.sweep_values for t in range(cfg.trials)]
    rows = []
    if workers <= 1:
        for v, t in jobs:
            rows += run_trial(cfg, v, t)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(run_trial, cfg, v, t) for v, t in jobs]
            for f in futs:
                rows += f.result()
    return sorted(rows, key=_sort_key)


# ---------------------------------------------------------------------------
# emission


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_csv(rows, path, timing: bool = False) -> None:
    """Write rows with a fixed column order; wall time only when ``timing``."""
    if not rows:
        raise ValueError("empty result table")
    cols = CSV_COLUMNS if timing else [c for c in CSV_COLUMNS if c != "wall_time"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in sorted(rows, key=_sort_key):
            w.writerow([_fmt(getattr(r, c)) for c in cols])


def read_csv(path) -> list:
    """Parse a file written by :func:`emit_csv`."""
    types = {f.name: f.type for f in dataclasses.fields(ResultRow)}
    conv = {"float": float, "int": int, "str": str, "bool": lambda s: s == "1"}
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {k: conv[types[k]](v) for k, v in rec.items()}
            out.append(ResultRow(**kw))
    return out


def summarize(rows) -> dict:
    """``{(sweep value, scheme, csit): (mean, standard error, count)}`` over successful rows."""
    groups = {}
    for r in rows:
        if not r.failed:
            groups.setdefault((r.sweep_value, r.scheme, r.csit), []).append(r.min_rate)
    out = {}
    for k, v in sorted(groups.items()):
        v = np.asarray(v)
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        out[k] = (float(v.mean()), se, int(v.size))
    return out


def emit_dat(rows, path) -> None:
    """Gnuplot columns: sweep value, then mean and standard error per scheme/CSIT."""
    if not rows:
        raise ValueError("empty result table")
    summ = summarize(rows)
    series = sorted({(k[1], k[2]) for k in summ})
    values = sorted({k[0] for k in summ})
    with open(path, "w") as fh:
        fh.write("# value " + " ".join(f"{s}:{c}:mean {s}:{c}:se" for s, c in series) + "\n")
        for v in values:
            cells = []
            for s, c in series:
                m, se, _ = summ.get((v, s, c), (float("nan"), float("nan"), 0))
                cells += [repr(m), repr(se)]
            fh.write(" ".join([repr(v)] + cells) + "\n")


def emit(rows, path, fmt: str = "csv", timing: bool = False) -> None:
    if fmt == "csv":
        emit_csv(rows, path, timing)
    elif fmt in ("dat", "gnuplot", "gnuplot-dat"):
        emit_dat(rows, path)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def sweep_monotonicity(rows, slack_se: float = 1.0) -> list:
    """Schemes whose mean min rate drops along the sweep by more than ``slack_se`` standard errors."""
    summ = summarize(rows)
    out = []
    for s, c in sorted({(k[1], k[2]) for k in summ}):
        pts = sorted((k[0], v) for k, v in summ.items() if k[1] == s and k[2] == c)
        for (v0, (m0, se0, _)), (v1, (m1, se1, _)) in zip(pts, pts[1:]):
            if m1 < m0 - slack_se * max(se0, se1):
                out.append(f"{s}/{c}: mean {m0:.4g} at {v0} > {m1:.4g} at {v1}")
    return out

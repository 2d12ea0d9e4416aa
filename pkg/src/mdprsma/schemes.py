"""Alternating WMMSE optimization of every scheme and held-out evaluation."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import EffectiveChannelEnsemble
from .conic import SolveResult, SolveStatus, SolverOptions, solve
from .rates import (MDP_RSMA, P_LPC, P_P0, RSMA_DUAL_PM, RSMA_OMA, RSMA_PD, SDMA, SDMA_OMA, W_CPC, W_P0,
                    W_SPC, PrecoderSolution, RateReport, SchemeSpec, build_layers, ergodic_rates,
                    validate_allocation)
from .subproblem import build, column_bases, decode
from .wmmse import step1_coefficients

log = logging.getLogger(__name__)

SCHEMES = {s.name: s for s in (MDP_RSMA, RSMA_PD, SDMA, RSMA_DUAL_PM, RSMA_OMA, SDMA_OMA)}
INIT_POLICIES = ("matched", "eigen")
MONOTONE_SLACK = 1e-7


class SolverError(RuntimeError):
    """The inner cone program could not be solved even after a regularized retry."""

    def __init__(self, msg, result: SolveResult | None = None):
        super().__init__(msg)
        self.result = result


@dataclass
class SchemeConfig:
    """Outer-loop settings.

    ``init`` is a policy name from :data:`INIT_POLICIES` or an explicit
    :class:`PrecoderSolution` used as the starting point. ``warm_starts`` are
    extra starting points; the run from each is completed and the best final
    objective is kept.
    """

    scheme: SchemeSpec = MDP_RSMA
    max_outer_iters: int = 300
    epsilon: float = 1e-4
    init: object = "matched"
    sigma2: float = 1.0
    solver: SolverOptions = field(default_factory=SolverOptions)
    warm_starts: tuple = ()

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if isinstance(self.init, str) and self.init not in INIT_POLICIES:
            raise ValueError(f"unknown init policy {self.init!r}")


@dataclass
class RunTrace:
    """Outcome of one optimization run.

    ``r_min`` holds the subproblem optimum of every accepted iteration and
    ``min_rate`` the ergodic min rate of the final solution on the
    optimization ensemble (``rate_scale`` already applied). ``kkt_max`` is the
    largest KKT residual of any optimal inner solve, all starts included.
    """

    scheme: str
    r_min: list
    solution: PrecoderSolution
    wall_time: float
    solver_iters: list
    statuses: list
    converged: bool
    min_rate: float = 0.0
    rate_scale: float = 1.0
    stop_reason: str = ""
    start: str = ""
    kkt_max: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.r_min)

    @property
    def final(self) -> float:
        return self.r_min[-1] if self.r_min else 0.0

    def is_monotone(self, slack=MONOTONE_SLACK) -> bool:
        return bool(np.all(np.diff(self.r_min) >= -slack)) if len(self.r_min) > 1 else True

    def summary(self) -> dict:
        return {"scheme": self.scheme, "iterations": self.iterations, "final_r_min": self.final,
                "min_rate": self.min_rate, "converged": self.converged, "stop_reason": self.stop_reason,
                "solver_iters": int(sum(self.solver_iters)), "wall_time": self.wall_time}

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,r_min\n")
            for i, r in enumerate(self.r_min, 1):
                fh.write(f"{i},{r!r}\n")
            s = self.summary()
            fh.write("# " + ",".join(f"{k}={v}" for k, v in s.items()) + "\n")


# ---------------------------------------------------------------------------
# initialization


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def _principal(stack):
    """Principal left singular vector of the columns of ``stack``."""
    if stack.shape[1] == 0:
        return np.zeros(stack.shape[0], complex)
    u, _, _ = np.linalg.svd(stack, full_matrices=False)
    return u[:, 0]


def _eig_dir(samples):
    """Dominant eigenvector of the sample correlation of (S, n) samples."""
    R = samples.T @ samples.conj() / samples.shape[0]
    _, V = np.linalg.eigh(0.5 * (R + R.conj().T))
    return V[:, -1]


def _mean_dir(samples):
    m = samples.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum(np.abs(samples) ** 2, axis=1)))
    if np.linalg.norm(m) <= 1e-9 * max(rms, 1e-300):
        return _eig_dir(samples)
    return _unit(m)


_SAT_SPLIT = {"private": 0.6, "cpc": 0.25, "spc": 0.15}
_TERR_SPLIT = {"private": 0.75, "lpc": 0.25}


def initial_solution(ens: EffectiveChannelEnsemble, budgets, scheme: SchemeSpec,
                     policy: str = "matched") -> PrecoderSolution:
    """Starting precoders for the outer loop.

    ``matched``: private columns along each user's sample-mean channel,
    common columns along the principal direction of the stacked mean channels.
    ``eigen``: every direction taken from sample correlation matrices instead.
    Power is split 0.6 / 0.25 / 0.15 (private / cpc / spc) at the satellite and
    0.75 / 0.25 (private / lpc) at the BS, renormalized over active columns.
    """
    ps, pt = budgets
    ks, kt = ens.ks, ens.kt
    sol = PrecoderSolution.zeros(ens.ns2, ens.nt2, ks, kt)
    w_basis, p_basis = column_bases(scheme, ens.ns2, ens.nt2, ks, kt, budgets)
    if scheme.dual_pm:
        f_priv, f_com = ens.f_pol[1], ens.f_pol[0]
        h_priv, h_com = ens.h_pol[1], ens.h_pol[0]
        z_all = ens.z_pol[0]
    else:
        f_priv = f_com = ens.f_su
        h_priv = h_com = ens.h_cu
        z_all = ens.z_cu
    direction = _mean_dir if policy == "matched" else _eig_dir

    def stacked(arrs):
        cols = []
        for arr in arrs:
            for k in range(arr.shape[0]):
                m = arr[k].mean(axis=0) if policy == "matched" else _eig_dir(arr[k])
                cols.append(m)
        return np.array(cols).T if cols else np.zeros((ens.ns2, 0), complex)

    dirs_w = {}
    for c in w_basis:
        if c == W_SPC:
            dirs_w[c] = _principal(stacked([f_com, z_all] if scheme.inter else [f_com]))
        elif c == W_CPC:
            dirs_w[c] = _principal(stacked([f_com]))
        else:
            dirs_w[c] = direction(f_priv[c - W_P0])
    dirs_p = {}
    for c in p_basis:
        if c == P_LPC:
            dirs_p[c] = _principal(h_com.T) if kt else np.zeros(ens.nt2, complex)
        else:
            dirs_p[c] = _unit(h_priv[c - P_P0])

    def assign(target, dirs, bases, budget, split, group_of):
        groups = {}
        for c in dirs:
            groups.setdefault(group_of(c), []).append(c)
        total = sum(split[g] for g in groups)
        for g, cols in groups.items():
            share = budget * split[g] / total / len(cols)
            for c in cols:
                B = bases[c]
                v = B @ (B.T @ dirs[c])   # project onto the allowed subspace
                if np.linalg.norm(v) <= 1e-12:
                    v = B[:, 0].astype(complex)
                target[:, c] = np.sqrt(share) * _unit(v)

    assign(sol.W, dirs_w, w_basis, ps, _SAT_SPLIT,
           lambda c: "spc" if c == W_SPC else "cpc" if c == W_CPC else "private")
    assign(sol.P, dirs_p, p_basis, pt, _TERR_SPLIT, lambda c: "lpc" if c == P_LPC else "private")
    return sol


# ---------------------------------------------------------------------------
# outer loop


def _solve_with_retry(prog, opts: SolverOptions) -> SolveResult:
    res = solve(prog, opts)
    if res.status == SolveStatus.NUMERICAL_FAILURE or res.status == SolveStatus.MAX_ITER:
        log.info("solver returned %s, retrying with stronger regularization", res.status.value)
        res = solve(prog, dataclasses.replace(opts, regularization=1e-8))
    return res


def restrict_to_scheme(sol: PrecoderSolution, scheme: SchemeSpec, budgets) -> PrecoderSolution:
    """Copy of ``sol`` with the columns ``scheme`` does not use set to zero."""
    out = sol.copy()
    w_basis, p_basis = column_bases(scheme, sol.W.shape[0], sol.P.shape[0], sol.ks, sol.kt, budgets)
    for c in range(out.W.shape[1]):
        out.W[:, c] = w_basis[c] @ (w_basis[c].T @ out.W[:, c]) if c in w_basis else 0.0
    for c in range(out.P.shape[1]):
        out.P[:, c] = p_basis[c] @ (p_basis[c].T @ out.P[:, c]) if c in p_basis else 0.0
    return out


def _wmmse_loop(ens: EffectiveChannelEnsemble, budgets, cfg: SchemeConfig) -> RunTrace:
    if ens.ks + ens.kt == 0:
        raise ValueError("ensemble has no users")
    t0 = time.perf_counter()
    if isinstance(cfg.init, PrecoderSolution):
        starts = [("given", restrict_to_scheme(cfg.init, cfg.scheme, budgets))]
    else:
        starts = [(cfg.init, initial_solution(ens, budgets, cfg.scheme, cfg.init))]
    starts += [(f"warm{i}", restrict_to_scheme(w, cfg.scheme, budgets)) for i, w in enumerate(cfg.warm_starts)]
    best, kkt = None, 0.0
    for label, sol in starts:
        tr = _single_run(ens, budgets, cfg, sol)
        tr.start = label
        kkt = max(kkt, tr.kkt_max)
        if best is None or tr.final > best.final:
            best = tr
    best.wall_time = time.perf_counter() - t0
    best.kkt_max = kkt
    return best


def _single_run(ens: EffectiveChannelEnsemble, budgets, cfg: SchemeConfig, sol: PrecoderSolution) -> RunTrace:
    scheme = cfg.scheme
    t0 = time.perf_counter()
    layers = build_layers(ens, scheme)
    dims = (ens.ns2, ens.nt2, ens.ks, ens.kt)
    r_hist, iters, stats = [], [], []
    kkt = 0.0
    prev = -np.inf
    converged = False
    reason = "max_iter"
    for n in range(cfg.max_outer_iters):
        coeffs = step1_coefficients(layers, sol, cfg.sigma2)
        prog, lay = build(coeffs, budgets, scheme, dims, cfg.sigma2)
        res = _solve_with_retry(prog, cfg.solver)
        iters.append(res.iterations)
        stats.append(res.status.value)
        if not res.ok:
            if n == 0:
                raise SolverError(f"{scheme.name}: inner solve failed with {res.status.value}", res)
            log.warning("%s: inner solve failed at iteration %d (%s); keeping previous iterate",
                        scheme.name, n + 1, res.status.value)
            reason = "solver_failure"
            break
        kkt = max(kkt, res.kkt["primal"], res.kkt["dual"], res.kkt["gap"])
        new = decode(res, lay)
        if new.r_min < prev - MONOTONE_SLACK:
            # only numerical noise can cause this; the previous point stays
            log.info("%s: objective dropped by %.3g at iteration %d; stopping", scheme.name,
                     prev - new.r_min, n + 1)
            reason = "non_monotone"
            break
        sol = new
        r_hist.append(new.r_min)
        if abs(new.r_min - prev) <= cfg.epsilon:
            converged = True
            reason = "converged"
            break
        prev = new.r_min
    rep = ergodic_rates(ens, sol, cfg.sigma2, scheme, layers)
    return RunTrace(scheme.name, r_hist, sol, time.perf_counter() - t0, iters, stats, converged,
                    min_rate=rep.min_rate, stop_reason=reason, kkt_max=kkt)


def _with_scheme(cfg: SchemeConfig | None, scheme: SchemeSpec) -> SchemeConfig:
    cfg = SchemeConfig() if cfg is None else cfg
    return dataclasses.replace(cfg, scheme=scheme)


def optimize_mdp_rsma(ens, budgets, cfg: SchemeConfig | None = None) -> RunTrace:
    """Algorithm 1 with super-common, intra-network common and private streams."""
    return _wmmse_loop(ens, budgets, _with_scheme(cfg, MDP_RSMA))


def optimize_rsma_pd_istn(ens, budgets, cfg: SchemeConfig | None = None) -> RunTrace:
    """Same loop with the super-common stream and its rate portions removed."""
    return _wmmse_loop(ens, budgets, _with_scheme(cfg, RSMA_PD))


def optimize_sdma_istn(ens, budgets, cfg: SchemeConfig | None = None) -> RunTrace:
    """Private streams only; every common stream removed."""
    return _wmmse_loop(ens, budgets, _with_scheme(cfg, SDMA))


def optimize_rsma_dual_pm_istn(ens, budgets, cfg: SchemeConfig | None = None) -> RunTrace:
    """Commons on the RHCP / V chain, privates on LHCP / H, no SIC."""
    return _wmmse_loop(ens, budgets, _with_scheme(cfg, RSMA_DUAL_PM))


def network_subensemble(ens: EffectiveChannelEnsemble, which: str) -> EffectiveChannelEnsemble:
    """Ensemble with only the satellite (``"sat"``) or terrestrial (``"terr"``) users."""
    if which == "sat":
        return EffectiveChannelEnsemble(ens.f_pol, ens.z_pol[:, :0], ens.h_pol[:, :0], ens.su_pol, ens.cu_pol[:0])
    if which == "terr":
        return EffectiveChannelEnsemble(ens.f_pol[:, :0], ens.z_pol, ens.h_pol, ens.su_pol[:0], ens.cu_pol)
    raise ValueError(which)


OMA_SCALE = 0.5


def optimize_oma_variants(ens, budgets, cfg: SchemeConfig | None = None, common: bool = True) -> RunTrace:
    """Each network optimized alone on its half of the resources.

    Both transmitters use their full budget while active; reported rates are
    halved. ``common=True`` gives RSMA-OMA, ``False`` SDMA-OMA.
    """
    scheme = RSMA_OMA if common else SDMA_OMA
    cfg = dataclasses.replace(_with_scheme(cfg, scheme), warm_starts=())
    if isinstance(cfg.init, PrecoderSolution):
        cfg = dataclasses.replace(cfg, init="matched")
    ps, pt = budgets
    t0 = time.perf_counter()
    sol = PrecoderSolution.zeros(ens.ns2, ens.nt2, ens.ks, ens.kt)
    parts = []
    if ens.ks:
        tr = _wmmse_loop(network_subensemble(ens, "sat"), (ps, 0.0), cfg)
        s = tr.solution
        sol.W[:] = s.W
        sol.c_spc, sol.c_cpc, sol.alpha_su = s.c_spc, s.c_cpc, s.alpha_su
        parts.append(tr)
    if ens.kt:
        tr = _wmmse_loop(network_subensemble(ens, "terr"), (0.0, pt), cfg)
        s = tr.solution
        sol.P[:] = s.P
        sol.c_lpc, sol.alpha_cu = s.c_lpc, s.alpha_cu
        parts.append(tr)
    n = max(p.iterations for p in parts)
    hist = [OMA_SCALE * min(p.r_min[min(i, p.iterations - 1)] for p in parts) for i in range(n)]
    sol.r_min = hist[-1] if hist else 0.0
    return RunTrace(scheme.name, hist, sol, time.perf_counter() - t0,
                    sum((p.solver_iters for p in parts), []), sum((p.statuses for p in parts), []),
                    all(p.converged for p in parts), min_rate=OMA_SCALE * min(p.min_rate for p in parts),
                    rate_scale=OMA_SCALE, stop_reason="+".join(p.stop_reason for p in parts),
                    kkt_max=max(p.kkt_max for p in parts))


def optimize(name: str, ens, budgets, cfg: SchemeConfig | None = None) -> RunTrace:
    """Dispatch by scheme name."""
    if name == "mdp-rsma":
        return optimize_mdp_rsma(ens, budgets, cfg)
    if name == "rsma-pd":
        return optimize_rsma_pd_istn(ens, budgets, cfg)
    if name == "sdma":
        return optimize_sdma_istn(ens, budgets, cfg)
    if name == "rsma-dual-pm":
        return optimize_rsma_dual_pm_istn(ens, budgets, cfg)
    if name == "rsma-oma":
        return optimize_oma_variants(ens, budgets, cfg, common=True)
    if name == "sdma-oma":
        return optimize_oma_variants(ens, budgets, cfg, common=False)
    raise ValueError(f"unknown scheme {name!r}; choose from {sorted(SCHEMES)}")


NESTED_ORDER = ("sdma", "rsma-pd", "mdp-rsma")


def optimize_schemes(names, ens, budgets, cfg: SchemeConfig | None = None, nested_starts: bool = True) -> dict:
    """Run several schemes on one ensemble.

    With ``nested_starts`` the SDMA, RSMA-PD and MDP-RSMA runs are chained:
    each also starts from the final solution of the next smaller scheme, so
    the achieved objectives respect the nesting of their feasible sets.
    """
    names = list(names)
    if not names:
        raise ValueError("empty scheme list")
    cfg = SchemeConfig() if cfg is None else cfg
    order = [n for n in NESTED_ORDER if n in names] + [n for n in names if n not in NESTED_ORDER]
    out = {}
    prev = None
    for name in order:
        c = cfg
        if nested_starts and name in NESTED_ORDER and prev is not None:
            c = dataclasses.replace(cfg, warm_starts=tuple(cfg.warm_starts) + (prev.solution,))
        out[name] = optimize(name, ens, budgets, c)
        if name in NESTED_ORDER:
            prev = out[name]
    return {n: out[n] for n in names}


# ---------------------------------------------------------------------------
# evaluation


def _scaled_report(rep: RateReport, a: float) -> RateReport:
    if a == 1.0:
        return rep
    out = dataclasses.replace(rep)
    for f in ("su_spc", "su_cpc", "su_private", "su_total", "cu_spc", "cu_lpc", "cu_private", "cu_total"):
        setattr(out, f, a * getattr(rep, f))
    for f in ("cap_spc", "cap_cpc", "cap_lpc", "min_rate"):
        setattr(out, f, a * getattr(rep, f))
    out.stderr = {k: a * v for k, v in rep.stderr.items()}
    return out


def evaluate(sol: PrecoderSolution, eval_ens: EffectiveChannelEnsemble, scheme: SchemeSpec | str = MDP_RSMA,
             sigma2=1.0) -> RateReport:
    """Ergodic rates of ``sol`` on a held-out ensemble.

    Common-rate portions whose sum exceeds the held-out cap are scaled down
    uniformly to that cap; the factors appear in ``common_scale``.
    """
    scheme = SCHEMES[scheme] if isinstance(scheme, str) else scheme
    sol = sol.copy()
    rep = ergodic_rates(eval_ens, sol, sigma2, scheme)
    scales = {}
    for name, cap in (("c_spc", rep.cap_spc), ("c_cpc", rep.cap_cpc), ("c_lpc", rep.cap_lpc)):
        v = getattr(sol, name)
        used = float(v.sum())
        a = 1.0
        if used > cap and used > 0:
            a = max(cap, 0.0) / used
            setattr(sol, name, v * a)
        scales[name] = a
    if any(a < 1.0 for a in scales.values()):
        rep = ergodic_rates(eval_ens, sol, sigma2, scheme)
    rep.common_scale = scales
    viol = validate_allocation(sol, rep)
    if viol:
        log.warning("allocation violations after rescaling: %s", viol)
    return _scaled_report(rep, OMA_SCALE if not scheme.inter else 1.0)

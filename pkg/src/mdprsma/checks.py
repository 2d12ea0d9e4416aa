"""Invariant suites behind ``mdprsma check``.

Each check returns ``(name, ok, detail)``. The suites are small enough to run
in seconds; ``quick=False`` raises the instance counts.
"""
from __future__ import annotations

import numpy as np

from .channel import (BASIS, SAT_TX, ArrayConfig, SatUserGeometry, ScenarioParams, build_ensemble,
                      draw_scenario, effective_channel, polarimetric_matrix, steering_vector)
from .conic import Cone, ConicProgram, SolveStatus, solve
from .rates import MDP_RSMA, PrecoderSolution, build_layers
from .schemes import SchemeConfig, optimize_schemes
from .wmmse import equalizer_weights


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def brute_force_effective(g, a, rx_pol, tx_basis=SAT_TX):
    """Per-antenna-pair loop: entry 2n+i = rho_rx^H (a_n G) rho_tx_i."""
    out = []
    rx = BASIS[rx_pol]
    for an in a:
        for p in tx_basis:
            out.append(np.vdot(rx, an * g @ BASIS[p]))
    return np.array(out)


def check_rate_wmse(rng, n=200):
    """xi at the MMSE receiver and weight equals 1 - rate on every layer."""
    worst = 0.0
    for _ in range(n):
        ens = build_ensemble(draw_scenario(ScenarioParams(), rng), 2, rng)
        sol = PrecoderSolution.zeros(ens.ns2, ens.nt2, ens.ks, ens.kt)
        sol.W = _cn(rng, sol.W.shape) * 3.0
        sol.P = _cn(rng, sol.P.shape) * 3.0
        for layer in build_layers(ens, MDP_RSMA):
            st = equalizer_weights(layer, sol)
            xi = st.u * st.eps - np.log2(st.u)
            rate = np.log2(1.0 + layer.sinr(sol))
            worst = max(worst, float(np.max(np.abs(xi - (1.0 - rate)))))
    return "rate-WMSE identity", worst <= 1e-9, f"max error {worst:.2e}"


def check_appendix(rng, n=100):
    worst = 0.0
    for _ in range(n):
        cfg = ArrayConfig(int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        g = _cn(rng, (2, 2))
        a = steering_vector(rng.uniform(0, 2 * np.pi), rng.uniform(0, np.pi / 2), cfg)
        full = np.kron(a[:, None], g)
        for pol in ("RHCP", "LHCP", "V", "H"):
            err = np.max(np.abs(effective_channel(full, pol) - brute_force_effective(g, a, pol)))
            worst = max(worst, float(err))
    return "effective-channel vectorization", worst <= 1e-12, f"max error {worst:.2e}"


def check_cp_robustness(n=64):
    cfg = ArrayConfig(2, 2)
    a = steering_vector(0.3, 0.4, cfg)
    norms_r, ratio_err = [], 0.0
    ref_v = None
    for zeta in np.linspace(0, 2 * np.pi, n, endpoint=False):
        geom = SatUserGeometry(theta=0.3, varphi=0.4, zeta=zeta, kappa=1e300, chi0=1e-300, chi_tilde=0.5, beta=1.0)
        g = polarimetric_matrix(geom, np.zeros((2, 2)))
        full = np.kron(a[:, None], g)
        norms_r.append(np.linalg.norm(effective_channel(full, "RHCP")))
        # linearly polarized link: V excitation received on the V chain
        nv = np.linalg.norm(effective_channel(full, "V", ("V", "V"))) ** 2
        if ref_v is None:
            ref_v = nv
        ratio_err = max(ratio_err, abs(nv / ref_v - np.cos(zeta) ** 2))
    spread = float(np.ptp(norms_r))
    ok = spread <= 1e-10 and ratio_err <= 1e-9
    return "CP rotation invariance / LP cos^2 loss", ok, f"RHCP spread {spread:.1e}, LP ratio error {ratio_err:.1e}"


def check_solver(rng, n=20):
    worst = 0.0
    for _ in range(n):
        k = int(rng.integers(2, 6))
        nv = k + 1
        # max t s.t. ||M x - y|| <= 1, t <= a_i^T x
        M = rng.standard_normal((k + 2, k))
        y = rng.standard_normal(k + 2)
        A = rng.standard_normal((k, k))
        c = np.zeros(nv)
        c[-1] = 1.0
        lin = np.hstack([-A, np.ones((k, 1))])
        soc = np.vstack([np.zeros((1, nv)), np.hstack([-M, np.zeros((k + 2, 1))])])
        G = np.vstack([lin, soc])
        h = np.concatenate([np.zeros(k), [1.0], -y])
        prog = ConicProgram(c, G, h, [Cone("nonneg", 0, k), Cone("soc", k, G.shape[0])])
        res = solve(prog)
        if res.status is SolveStatus.OPTIMAL:
            worst = max(worst, res.kkt["primal"], res.kkt["dual"], res.kkt["gap"])
    return "solver KKT residuals", worst <= 1e-7, f"worst residual {worst:.1e}"


def check_optimizer(rng, quick=True):
    p = ScenarioParams()
    ens = build_ensemble(draw_scenario(p, rng), 20 if quick else 50, rng)
    traces = optimize_schemes(["sdma", "rsma-pd", "mdp-rsma"], ens, (10 ** 1.6, 10 ** 1.3), SchemeConfig())
    mono = all(t.is_monotone() for t in traces.values())
    sd, pd, md = (traces[n].final for n in ("sdma", "rsma-pd", "mdp-rsma"))
    nest = sd <= pd + 1e-4 and pd <= md + 1e-4
    detail = f"r_min sdma {sd:.4f} <= rsma-pd {pd:.4f} <= mdp-rsma {md:.4f}; monotone={mono}"
    return "outer-loop monotonicity and nesting", mono and nest, detail


def run_checks(seed=0, quick=True) -> list:
    rng = np.random.default_rng(seed)
    scale = 1 if quick else 5
    return [
        check_rate_wmse(rng, 20 * scale),
        check_appendix(rng, 100 * scale),
        check_cp_robustness(),
        check_solver(rng, 20 * scale),
        check_optimizer(rng, quick),
    ]

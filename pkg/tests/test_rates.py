import numpy as np
import pytest

from conftest import random_ensemble, random_solution
from mdprsma.rates import (MDP_RSMA, RSMA_DUAL_PM, RSMA_OMA, RSMA_PD, SDMA, PrecoderSolution, build_layers,
                           ergodic_rates, sinr_cpc_su, sinr_lpc_cu, sinr_p_cu, sinr_p_su, sinr_spc_cu,
                           sinr_spc_su, validate_allocation)


def loop_sinr(chan_sat, chan_bs, sol, target, w_cols, p_cols, sigma2=1.0):
    """Scalar-loop reference for one sample."""
    sig = 0.0
    intf = sigma2
    for c in w_cols:
        g = abs(sum(np.conj(chan_sat[i]) * sol.W[i, c] for i in range(sol.W.shape[0]))) ** 2
        if target == ("W", c):
            sig = g
        else:
            intf += g
    for c in p_cols:
        g = abs(sum(np.conj(chan_bs[i]) * sol.P[i, c] for i in range(sol.P.shape[0]))) ** 2
        if target == ("P", c):
            sig = g
        else:
            intf += g
    return sig / intf


@pytest.mark.parametrize("scheme", [MDP_RSMA, RSMA_PD, SDMA, RSMA_DUAL_PM, RSMA_OMA])
def test_layer_sinr_matches_loop_oracle(scheme):
    ens = random_ensemble(1, s=3)
    sol = random_solution(ens, np.random.default_rng(2))
    for layer in build_layers(ens, scheme):
        got = layer.sinr(sol)
        for s in range(layer.s_count):
            sat = None if layer.sat is None else layer.sat[s]
            ref = loop_sinr(sat, layer.bs, sol, layer.target, layer.w_cols, layer.p_cols)
            assert got[s] == pytest.approx(ref, rel=1e-12)


def test_closed_forms_match_layers():
    ens = random_ensemble(3, s=4)
    sol = random_solution(ens, np.random.default_rng(4))
    f, z, h = ens.f_su, ens.z_cu, ens.h_cu
    ref = {("spc_su", k): sinr_spc_su(f[k], sol) for k in range(ens.ks)}
    ref.update({("cpc_su", k): sinr_cpc_su(f[k], sol) for k in range(ens.ks)})
    ref.update({("p_su", k): sinr_p_su(f[k], k, sol) for k in range(ens.ks)})
    ref.update({("spc_cu", k): sinr_spc_cu(z[k], h[k], sol) for k in range(ens.kt)})
    ref.update({("lpc_cu", k): sinr_lpc_cu(z[k], h[k], sol) for k in range(ens.kt)})
    ref.update({("p_cu", k): sinr_p_cu(z[k], h[k], k, sol) for k in range(ens.kt)})
    layers = build_layers(ens, MDP_RSMA)
    assert len(layers) == 3 * ens.ks + 3 * ens.kt
    for layer in layers:
        assert np.allclose(layer.sinr(sol), ref[(layer.kind, layer.user)], rtol=1e-12)


def test_layer_counts_per_scheme():
    ens = random_ensemble(5, s=2)
    ks, kt = ens.ks, ens.kt
    assert len(build_layers(ens, RSMA_PD)) == 2 * ks + 2 * kt
    assert len(build_layers(ens, SDMA)) == ks + kt
    assert len(build_layers(ens, RSMA_DUAL_PM)) == 2 * ks + 2 * kt


def test_oma_removes_satellite_interference_at_cu():
    ens = random_ensemble(6, s=2)
    for layer in build_layers(ens, RSMA_OMA):
        if layer.kind.endswith("_cu"):
            assert layer.sat is None and layer.w_cols == ()


def test_zero_precoder_rates_zero():
    ens = random_ensemble(7, s=3)
    rep = ergodic_rates(ens, PrecoderSolution.zeros(ens.ns2, ens.nt2, ens.ks, ens.kt))
    assert rep.min_rate == 0.0
    assert np.all(rep.su_private == 0) and rep.cap_spc == 0.0


def test_single_user_capacity():
    # one SU, no CUs, all power on its private stream: log2(1 + |f|^2 P)
    ens = random_ensemble(8, s=5, ks=2, kt=0)
    sol = PrecoderSolution.zeros(ens.ns2, ens.nt2, ens.ks, 0)
    f = ens.f_su[0, 0]
    sol.W[:, 2] = 3.0 * f / np.linalg.norm(f)
    r = np.log2(1 + build_layers(ens, SDMA)[0].sinr(sol))
    assert r[0] == pytest.approx(np.log2(1 + 9.0 * np.linalg.norm(f) ** 2), rel=1e-12)


def test_totals_and_caps():
    ens = random_ensemble(9, s=4)
    sol = random_solution(ens, np.random.default_rng(10))
    rep = ergodic_rates(ens, sol)
    sol.c_spc[:] = rep.cap_spc / ens.ks
    sol.c_cpc[:] = rep.cap_cpc / ens.ks
    sol.c_lpc[:] = rep.cap_lpc / max(ens.kt, 1)
    rep = ergodic_rates(ens, sol)
    assert validate_allocation(sol, rep) == []
    assert np.allclose(rep.su_total, sol.c_spc + sol.c_cpc + rep.su_private)
    assert rep.min_rate == pytest.approx(min(rep.su_total.min(), rep.cu_total.min()))
    assert rep.cap_spc == pytest.approx(min(rep.su_spc.min(), rep.cu_spc.min()))
    sol.c_cpc[0] += 1.0
    assert any("cpc" in m for m in validate_allocation(sol, ergodic_rates(ens, sol)))


def test_rate_report_csv(tmp_path):
    ens = random_ensemble(11, s=2)
    rep = ergodic_rates(ens, random_solution(ens, np.random.default_rng(12)))
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "user,layer,rate" and len(lines) == 1 + 4 * (ens.ks + ens.kt)


def test_power_fractions_sum_to_one():
    ens = random_ensemble(13, s=2)
    fr = random_solution(ens, np.random.default_rng(14)).power_fractions()
    assert sum(fr.values()) == pytest.approx(1.0)

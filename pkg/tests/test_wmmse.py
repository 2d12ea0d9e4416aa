import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import cn, random_ensemble, random_solution
from mdprsma.rates import MDP_RSMA, RSMA_DUAL_PM, PrecoderSolution, build_layers, layer_rates
from mdprsma.wmmse import (equalizer_weights, layer_coefficients, mmse_equalizer, mmse_value, mse,
                           rate_wmse_identity_check, step1_coefficients)


def test_mmse_scalar_example():
    c, w = np.array([1.0 + 0j]), np.array([2.0 + 0j])
    T = 4.0 + 1.0
    assert mmse_equalizer(c, w, T) == pytest.approx(0.4)
    assert mmse_value(c, w, T) == pytest.approx(0.2)


def test_mmse_errors():
    with pytest.raises(ValueError):
        mmse_equalizer(np.ones(1), np.ones(1), 0.0)
    with pytest.raises(ValueError):
        mmse_value(np.ones(1), np.ones(1) * 3, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mmse_equalizer_minimizes_mse(seed):
    rng = np.random.default_rng(seed)
    c, w = cn(rng, 4), cn(rng, 4)
    T = abs(np.vdot(c, w)) ** 2 + rng.uniform(0.1, 5)
    q = mmse_equalizer(c, w, T)
    e0 = mse(q, c, w, T)
    assert e0 == pytest.approx(mmse_value(c, w, T), rel=1e-10)
    for d in cn(rng, 10) * 0.1:
        assert mse(q + d, c, w, T) >= e0 - 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rate_wmse_identity(seed):
    rng = np.random.default_rng(seed)
    c, w = cn(rng, 8), cn(rng, 8) * rng.uniform(0.01, 10)
    assert rate_wmse_identity_check(c, w, rng.uniform(0, 20)) <= 1e-9


def test_weights_are_inverse_mse():
    ens = random_ensemble(1, s=5)
    sol = random_solution(ens, np.random.default_rng(2))
    for layer in build_layers(ens, MDP_RSMA):
        stt = equalizer_weights(layer, sol)
        assert np.allclose(stt.u * stt.eps, 1.0)
        assert stt.clamped == 0


def test_zero_precoder_weights():
    # zero precoders: eps = 1, u = 1, q = 0, surrogate rate 0
    ens = random_ensemble(3, s=4)
    sol = PrecoderSolution.zeros(ens.ns2, ens.nt2, ens.ks, ens.kt)
    for lc in step1_coefficients(build_layers(ens, MDP_RSMA), sol).layers:
        assert lc.u_bar == 1.0 and lc.delta_bar == 0.0
        assert lc.value(sol) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("scheme", [MDP_RSMA, RSMA_DUAL_PM])
def test_surrogate_tight_at_linearization_point(scheme):
    ens = random_ensemble(4, s=6)
    sol = random_solution(ens, np.random.default_rng(5))
    layers = build_layers(ens, scheme)
    coeffs = step1_coefficients(layers, sol)
    for lc, (r, _) in zip(coeffs.layers, layer_rates(layers, sol)):
        assert lc.value(sol) == pytest.approx(r, abs=1e-9)


def test_surrogate_gradient_is_scaled_rate_gradient():
    # with u = 1/eps and a base-2 log the surrogate touches the rate with slope ln2 times the rate slope
    ens = random_ensemble(8, s=4)
    rng = np.random.default_rng(9)
    sol = random_solution(ens, rng)
    layers = build_layers(ens, MDP_RSMA)
    coeffs = step1_coefficients(layers, sol)
    d = random_solution(ens, rng, scale=1.0)
    h = 1e-6
    for lc, layer in zip(coeffs.layers, layers):
        def rate(x):
            return np.mean(np.log2(1 + layer.sinr(x)))

        def shift(a):
            out = sol.copy()
            out.W = sol.W + a * d.W
            out.P = sol.P + a * d.P
            return out
        g_rate = (rate(shift(h)) - rate(shift(-h))) / (2 * h)
        g_sur = (lc.value(shift(h)) - lc.value(shift(-h))) / (2 * h)
        assert g_sur == pytest.approx(np.log(2) * g_rate, rel=1e-5, abs=1e-7)


def test_psi_matches_sample_loop():
    ens = random_ensemble(10, s=7)
    sol = random_solution(ens, np.random.default_rng(11))
    for layer in build_layers(ens, MDP_RSMA):
        lc = layer_coefficients(layer, sol)
        stt = equalizer_weights(layer, sol)
        if layer.sat is None:
            continue
        ref = sum(stt.u[s] * abs(stt.q[s]) ** 2 * np.outer(layer.sat[s], layer.sat[s].conj())
                  for s in range(layer.s_count)) / layer.s_count
        assert np.allclose(lc.psi_sat, ref, atol=1e-12)


def test_psi_sample_order_independent():
    ens = random_ensemble(12, s=9)
    sol = random_solution(ens, np.random.default_rng(13))
    perm = np.random.default_rng(14).permutation(ens.s_count)
    a = step1_coefficients(build_layers(ens, MDP_RSMA), sol)
    b = step1_coefficients(build_layers(ens.samples(perm), MDP_RSMA), sol)
    for x, y in zip(a.layers, b.layers):
        if x.psi_sat is not None:
            assert np.allclose(x.psi_sat, y.psi_sat, rtol=1e-13, atol=1e-15)
        assert x.nu_bar == pytest.approx(y.nu_bar, rel=1e-13)


def test_nonfinite_precoder_rejected():
    ens = random_ensemble(15, s=2)
    sol = random_solution(ens, np.random.default_rng(16))
    sol.W[0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        step1_coefficients(build_layers(ens, MDP_RSMA), sol)

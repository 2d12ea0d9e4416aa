"""Closed-form WMMSE quantities and the sample-averaged Step I coefficients."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .rates import Layer, PrecoderSolution

log = logging.getLogger(__name__)

U_MAX = 1e12


def mmse_equalizer(channel_vec, target_precoder, total_power_T):
    """MMSE receive coefficient ``q = T^{-1} w^H c``."""
    T = np.asarray(total_power_T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("T must be positive")
    return np.conj(np.asarray(channel_vec).conj() @ target_precoder) / T


def mmse_value(channel_vec, target_precoder, total_power_T):
    """Minimum MSE ``1 - |c^H w|^2 / T``."""
    T = np.asarray(total_power_T, dtype=float)
    sig = np.abs(np.asarray(channel_vec).conj() @ target_precoder) ** 2
    if np.any(sig > T * (1 + 1e-12)) or np.any(T <= 0):
        raise ValueError("T must include the signal term")
    return (T - sig) / T


def mse(q, channel_vec, target_precoder, total_power_T):
    """MSE of an arbitrary receive coefficient ``q``."""
    a = np.asarray(channel_vec).conj() @ target_precoder
    return np.abs(q) ** 2 * total_power_T - 2.0 * np.real(q * a) + 1.0


def rate_wmse_identity_check(channel_vec, target_precoder, interference_power, sigma2=1.0) -> float:
    """``|xi* - (1 - log2(1 + sinr))|`` for one instance."""
    sig = float(np.abs(np.vdot(channel_vec, target_precoder)) ** 2)
    T = sig + interference_power + sigma2
    eps = mmse_value(channel_vec, target_precoder, T)
    xi = 1.0 + np.log2(eps)
    rate = np.log2(1.0 + sig / (interference_power + sigma2))
    return float(abs(xi - (1.0 - rate)))


@dataclass
class EqualizerWeightState:
    """Per-sample equalizers and weights of one layer."""

    q: np.ndarray
    u: np.ndarray
    eps: np.ndarray
    clamped: int


def equalizer_weights(layer: Layer, sol: PrecoderSolution, sigma2=1.0) -> EqualizerWeightState:
    sig, inn = layer.split(sol, sigma2)
    T = sig + inn
    chan, sampled = layer.channel()
    which, col = layer.target
    prec = sol.W[:, col] if which == "W" else sol.P[:, col]
    a = chan.conj() @ prec
    if not sampled:
        a = np.full(layer.s_count, a)
    q = np.conj(a) / T
    eps = inn / T
    with np.errstate(divide="ignore"):
        u = 1.0 / eps
    bad = ~(u <= U_MAX)
    if np.any(bad):
        log.warning("clamping %d WMMSE weights of layer %s/%d to %g", int(bad.sum()), layer.kind, layer.user, U_MAX)
        u = np.where(bad, U_MAX, u)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(u))):
        raise FloatingPointError("non-finite equalizer or weight")
    return EqualizerWeightState(q=q, u=u, eps=eps, clamped=int(bad.sum()))


@dataclass
class LayerCoefficients:
    """Sample-averaged coefficients of one layer's augmented WMSE.

    ``psi_sat`` multiplies satellite precoder columns (averaged over samples),
    ``psi_bs`` multiplies terrestrial columns (the channel is sample-free).
    ``omega_bar`` is the linear term on the target column.
    """

    layer: Layer
    delta_bar: float
    u_bar: float
    nu_bar: float
    psi_sat: np.ndarray | None
    psi_bs: np.ndarray | None
    omega_bar: np.ndarray
    clamped: int = 0

    @property
    def is_cu(self) -> bool:
        return self.layer.kind.endswith("_cu")

    @property
    def psi_bar(self):
        return self.psi_bs if self.is_cu else self.psi_sat

    @property
    def psi_bar_intf(self):
        return self.psi_sat if self.is_cu else None

    def constant(self, sigma2=1.0) -> float:
        return 1.0 - self.delta_bar * sigma2 - self.u_bar + self.nu_bar

    def value(self, sol: PrecoderSolution, sigma2=1.0) -> float:
        """Surrogate rate ``1 - avg xi`` at ``sol`` with the coefficients frozen."""
        lay = self.layer
        v = self.constant(sigma2)
        if self.psi_sat is not None:
            for c in lay.w_cols:
                w = sol.W[:, c]
                v -= float(np.real(w.conj() @ self.psi_sat @ w))
        if self.psi_bs is not None:
            for c in lay.p_cols:
                p = sol.P[:, c]
                v -= float(np.real(p.conj() @ self.psi_bs @ p))
        which, col = lay.target
        tgt = sol.W[:, col] if which == "W" else sol.P[:, col]
        return v + 2.0 * float(np.real(self.omega_bar.conj() @ tgt))


@dataclass
class WmmseCoefficients:
    layers: list

    @property
    def clamped(self) -> int:
        return sum(c.clamped for c in self.layers)


def _hermitian(M):
    return 0.5 * (M + M.conj().T)


def layer_coefficients(layer: Layer, sol: PrecoderSolution, sigma2=1.0) -> LayerCoefficients:
    st = equalizer_weights(layer, sol, sigma2)
    s = layer.s_count
    delta = st.u * np.abs(st.q) ** 2
    psi_sat = None
    if layer.sat is not None:
        C = layer.sat
        psi_sat = _hermitian((C.T * delta) @ C.conj() / s)
    psi_bs = None
    if layer.bs is not None:
        h = layer.bs
        psi_bs = _hermitian(np.mean(delta) * np.outer(h, h.conj()))
    chan, sampled = layer.channel()
    uq = st.u * np.conj(st.q)
    omega = (uq @ chan) / s if sampled else np.mean(uq) * chan
    return LayerCoefficients(layer=layer, delta_bar=float(np.mean(delta)), u_bar=float(np.mean(st.u)),
                             nu_bar=float(np.mean(np.log2(st.u))), psi_sat=psi_sat, psi_bs=psi_bs,
                             omega_bar=omega, clamped=st.clamped)


def step1_coefficients(layers, sol: PrecoderSolution, sigma2=1.0) -> WmmseCoefficients:
    """Equalizers, weights and their sample averages for every layer."""
    if not (np.all(np.isfinite(sol.W)) and np.all(np.isfinite(sol.P))):
        raise FloatingPointError("non-finite precoder")
    return WmmseCoefficients([layer_coefficients(l, sol, sigma2) for l in layers])

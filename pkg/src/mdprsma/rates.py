"""SINRs, ergodic rates and common-rate caps for the layered RSMA receivers.

Every stream a user decodes is described by a :class:`Layer`: the channel it
is received through, the precoder column carrying it and the precoder columns
still present (not yet cancelled) when it is decoded. The named ``sinr_*``
functions are the explicit closed forms for the default decoding ladder and
serve as independent references for the generic layer machinery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import EffectiveChannelEnsemble

# precoder column layout
W_SPC, W_CPC, W_P0 = 0, 1, 2
P_LPC, P_P0 = 0, 1


@dataclass
class PrecoderSolution:
    """Precoders and rate split.

    ``W`` columns are ``[spc, cpc, w_1..w_Ks]`` and ``P`` columns are
    ``[lpc, p_1..p_Kt]``.
    """

    W: np.ndarray
    P: np.ndarray
    c_spc: np.ndarray
    c_cpc: np.ndarray
    c_lpc: np.ndarray
    alpha_su: np.ndarray
    alpha_cu: np.ndarray
    r_min: float = 0.0

    @classmethod
    def zeros(cls, ns2: int, nt2: int, ks: int, kt: int) -> "PrecoderSolution":
        return cls(np.zeros((ns2, 2 + ks), complex), np.zeros((nt2, 1 + kt), complex),
                   np.zeros(ks), np.zeros(ks), np.zeros(kt), np.zeros(ks), np.zeros(kt), 0.0)

    @property
    def ks(self) -> int:
        return self.W.shape[1] - 2

    @property
    def kt(self) -> int:
        return self.P.shape[1] - 1

    @property
    def w_spc(self):
        return self.W[:, W_SPC]

    @property
    def w_cpc(self):
        return self.W[:, W_CPC]

    @property
    def w_private(self):
        return self.W[:, W_P0:]

    @property
    def p_lpc(self):
        return self.P[:, P_LPC]

    @property
    def p_private(self):
        return self.P[:, P_P0:]

    def copy(self) -> "PrecoderSolution":
        return PrecoderSolution(self.W.copy(), self.P.copy(), self.c_spc.copy(), self.c_cpc.copy(),
                                self.c_lpc.copy(), self.alpha_su.copy(), self.alpha_cu.copy(), self.r_min)

    def power(self) -> tuple[float, float]:
        return float(np.sum(np.abs(self.W) ** 2)), float(np.sum(np.abs(self.P) ** 2))

    def power_fractions(self) -> dict:
        """Share of the satellite power carried by each stream type."""
        ps = np.sum(np.abs(self.W) ** 2, axis=0)
        tot = ps.sum()
        if tot <= 0:
            return {"spc": 0.0, "cpc": 0.0, "private": 0.0}
        return {"spc": ps[W_SPC] / tot, "cpc": ps[W_CPC] / tot, "private": ps[W_P0:].sum() / tot}


# ---------------------------------------------------------------------------
# explicit closed forms for the MDP-RSMA ladder


def _g(c, w):
    """|c^H w|^2 over leading sample dimensions of c."""
    return np.abs(np.asarray(c).conj() @ w) ** 2


def _priv(c, M):
    return np.sum(np.abs(np.asarray(c).conj() @ M) ** 2, axis=-1)


def sinr_spc_su(f, sol: PrecoderSolution, sigma2=1.0):
    den = _g(f, sol.w_cpc) + _priv(f, sol.w_private) + sigma2
    return _g(f, sol.w_spc) / den


def _terr_load(h, sol, with_lpc=True):
    out = _priv(h, sol.p_private)
    if with_lpc:
        out = out + _g(h, sol.p_lpc)
    return out


def sinr_spc_cu(z, h, sol: PrecoderSolution, sigma2=1.0):
    i_t = _terr_load(h, sol) + sigma2
    den = _g(z, sol.w_cpc) + _priv(z, sol.w_private) + i_t
    return _g(z, sol.w_spc) / den


def sinr_cpc_su(f, sol: PrecoderSolution, sigma2=1.0):
    return _g(f, sol.w_cpc) / (_priv(f, sol.w_private) + sigma2)


def sinr_lpc_cu(z, h, sol: PrecoderSolution, sigma2=1.0):
    den = _g(z, sol.w_cpc) + _priv(z, sol.w_private) + _terr_load(h, sol, with_lpc=False) + sigma2
    return _g(h, sol.p_lpc) / den


def sinr_p_su(f, k: int, sol: PrecoderSolution, sigma2=1.0):
    sig = _g(f, sol.w_private[:, k])
    return sig / (_priv(f, sol.w_private) - sig + sigma2)


def sinr_p_cu(z, h, k: int, sol: PrecoderSolution, sigma2=1.0):
    sig = _g(h, sol.p_private[:, k])
    den = _g(z, sol.w_cpc) + _priv(z, sol.w_private) + _terr_load(h, sol, with_lpc=False) - sig + sigma2
    return sig / den


# ---------------------------------------------------------------------------
# generic decoding layers


@dataclass(frozen=True)
class SchemeSpec:
    """Which streams exist and how they are received.

    Attributes
    ----------
    spc : super-common stream present.
    common : intra-network common streams (cpc / lpc) present.
    inter : satellite-to-CU interference present (False for orthogonal sharing).
    dual_pm : commons on chain 0 and privates on chain 1, no SIC.
    """

    name: str
    spc: bool = True
    common: bool = True
    inter: bool = True
    dual_pm: bool = False

    def active_w(self, ks: int) -> list:
        cols = []
        if self.spc:
            cols.append(W_SPC)
        if self.common:
            cols.append(W_CPC)
        return cols + list(range(W_P0, W_P0 + ks))

    def active_p(self, kt: int) -> list:
        return ([P_LPC] if self.common else []) + list(range(P_P0, P_P0 + kt))


MDP_RSMA = SchemeSpec("mdp-rsma")
RSMA_PD = SchemeSpec("rsma-pd", spc=False)
SDMA = SchemeSpec("sdma", spc=False, common=False)
RSMA_DUAL_PM = SchemeSpec("rsma-dual-pm", spc=False, dual_pm=True)
RSMA_OMA = SchemeSpec("rsma-oma", spc=False, inter=False)
SDMA_OMA = SchemeSpec("sdma-oma", spc=False, common=False, inter=False)


@dataclass
class Layer:
    """One decoding step of one user.

    ``sat`` holds the satellite channel samples (S, 2Ns) or is None when the
    satellite is not heard; ``bs`` is the fixed terrestrial channel or None.
    ``target`` is ``("W", col)`` or ``("P", col)``. ``w_cols`` and ``p_cols``
    list every column still present in the received signal, target included.
    ``budget`` names the rate variable the layer supports.
    """

    kind: str
    user: int
    sat: np.ndarray | None
    bs: np.ndarray | None
    target: tuple
    w_cols: tuple
    p_cols: tuple
    budget: tuple

    @property
    def s_count(self) -> int:
        return 1 if self.sat is None else self.sat.shape[0]

    def split(self, sol: PrecoderSolution, sigma2=1.0):
        """Per-sample (signal power, interference plus noise)."""
        which, col = self.target
        inn = np.full(self.s_count, float(sigma2))
        w_cols = [c for c in self.w_cols if not (which == "W" and c == col)]
        p_cols = [c for c in self.p_cols if not (which == "P" and c == col)]
        if self.sat is not None and w_cols:
            inn = inn + np.sum(np.abs(self.sat.conj() @ sol.W[:, w_cols]) ** 2, axis=1)
        if self.bs is not None and p_cols:
            inn = inn + float(np.sum(np.abs(self.bs.conj() @ sol.P[:, p_cols]) ** 2))
        if which == "W":
            sig = np.abs(self.sat.conj() @ sol.W[:, col]) ** 2
        else:
            sig = np.full(self.s_count, float(np.abs(self.bs.conj() @ sol.P[:, col]) ** 2))
        return sig, inn

    def terms(self, sol: PrecoderSolution, sigma2=1.0):
        """Per-sample (signal, T) where T includes the signal."""
        sig, inn = self.split(sol, sigma2)
        return sig, sig + inn

    def sinr(self, sol: PrecoderSolution, sigma2=1.0):
        sig, inn = self.split(sol, sigma2)
        return sig / inn

    def channel(self):
        """Channel the target is received through: (samples or vector, is_sampled)."""
        return (self.sat, True) if self.target[0] == "W" else (self.bs, False)


def build_layers(ens: EffectiveChannelEnsemble, scheme: SchemeSpec) -> list:
    """Decoding layers of every user for ``scheme``."""
    ks, kt = ens.ks, ens.kt
    priv_w = tuple(range(W_P0, W_P0 + ks))
    priv_p = tuple(range(P_P0, P_P0 + kt))
    layers = []
    if scheme.dual_pm:
        # commons on chain 0 (RHCP / V), privates on chain 1 (LHCP / H); no SIC
        w_all = (W_CPC,) + priv_w
        p_all = (P_LPC,) + priv_p
        for k in range(ks):
            layers.append(Layer("cpc_su", k, ens.f_pol[0, k], None, ("W", W_CPC), w_all, (), ("c_cpc", None)))
            layers.append(Layer("p_su", k, ens.f_pol[1, k], None, ("W", W_P0 + k), w_all, (), ("alpha_su", k)))
        for k in range(kt):
            z0 = ens.z_pol[0, k] if scheme.inter else None
            z1 = ens.z_pol[1, k] if scheme.inter else None
            wc = w_all if scheme.inter else ()
            layers.append(Layer("lpc_cu", k, z0, ens.h_pol[0, k], ("P", P_LPC), wc, p_all, ("c_lpc", None)))
            layers.append(Layer("p_cu", k, z1, ens.h_pol[1, k], ("P", P_P0 + k), wc, p_all, ("alpha_cu", k)))
        return layers

    f, z, h = ens.f_su, ens.z_cu, ens.h_cu
    w_after_spc = ((W_CPC,) if scheme.common else ()) + priv_w
    w_all = ((W_SPC,) if scheme.spc else ()) + w_after_spc
    p_all = ((P_LPC,) if scheme.common else ()) + priv_p
    for k in range(ks):
        if scheme.spc:
            layers.append(Layer("spc_su", k, f[k], None, ("W", W_SPC), w_all, (), ("c_spc", None)))
        if scheme.common:
            layers.append(Layer("cpc_su", k, f[k], None, ("W", W_CPC), w_after_spc, (), ("c_cpc", None)))
        layers.append(Layer("p_su", k, f[k], None, ("W", W_P0 + k), priv_w, (), ("alpha_su", k)))
    for k in range(kt):
        zk = z[k] if scheme.inter else None
        wc = w_after_spc if scheme.inter else ()
        if scheme.spc:
            layers.append(Layer("spc_cu", k, z[k], h[k], ("W", W_SPC), w_all, p_all, ("c_spc", None)))
        if scheme.common:
            layers.append(Layer("lpc_cu", k, zk, h[k], ("P", P_LPC), wc, p_all, ("c_lpc", None)))
        layers.append(Layer("p_cu", k, zk, h[k], ("P", P_P0 + k), wc, priv_p, ("alpha_cu", k)))
    return layers


# ---------------------------------------------------------------------------
# ergodic rates


def _mean(x) -> float:
    return math.fsum(np.asarray(x, dtype=float).ravel()) / np.size(x)


@dataclass
class RateReport:
    """Ergodic rates of every layer, caps and per-user totals (bits/s/Hz)."""

    su_spc: np.ndarray
    su_cpc: np.ndarray
    su_private: np.ndarray
    su_total: np.ndarray
    cu_spc: np.ndarray
    cu_lpc: np.ndarray
    cu_private: np.ndarray
    cu_total: np.ndarray
    cap_spc: float
    cap_cpc: float
    cap_lpc: float
    min_rate: float
    stderr: dict = field(default_factory=dict)
    common_scale: dict = field(default_factory=dict)

    def rows(self):
        """(user id, layer, rate) rows."""
        out = []
        for k in range(self.su_total.size):
            for name, arr in (("spc", self.su_spc), ("cpc", self.su_cpc), ("private", self.su_private),
                              ("total", self.su_total)):
                out.append((f"su{k}", name, float(arr[k])))
        for k in range(self.cu_total.size):
            for name, arr in (("spc", self.cu_spc), ("lpc", self.cu_lpc), ("private", self.cu_private),
                              ("total", self.cu_total)):
                out.append((f"cu{k}", name, float(arr[k])))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("user,layer,rate\n")
            for u, layer, r in self.rows():
                fh.write(f"{u},{layer},{r!r}\n")


def layer_rates(layers, sol: PrecoderSolution, sigma2=1.0) -> list:
    """(mean rate, standard error) of each layer."""
    out = []
    for layer in layers:
        r = np.log2(1.0 + layer.sinr(sol, sigma2))
        se = float(np.std(r, ddof=1) / np.sqrt(r.size)) if r.size > 1 else 0.0
        out.append((_mean(r), se))
    return out


def ergodic_rates(ens: EffectiveChannelEnsemble, sol: PrecoderSolution, sigma2=1.0,
                  scheme: SchemeSpec = MDP_RSMA, layers=None) -> RateReport:
    """Sample-mean rates of every layer plus totals from the allocated portions."""
    layers = build_layers(ens, scheme) if layers is None else layers
    ks, kt = ens.ks, ens.kt
    rates = {key: np.zeros(n) for key, n in (("spc_su", ks), ("cpc_su", ks), ("p_su", ks),
                                             ("spc_cu", kt), ("lpc_cu", kt), ("p_cu", kt))}
    stderr = {}
    for layer, (r, se) in zip(layers, layer_rates(layers, sol, sigma2)):
        rates[layer.kind][layer.user] = r
        stderr[(layer.kind, layer.user)] = se
    present = {layer.kind for layer in layers}

    def cap(kinds):
        vals = [rates[k] for k in kinds if k in present]
        return float(min(np.min(v) for v in vals)) if vals and any(v.size for v in vals) else 0.0

    su_total = sol.c_spc + sol.c_cpc + rates["p_su"]
    cu_total = sol.c_lpc + rates["p_cu"]
    totals = np.concatenate([su_total, cu_total])
    return RateReport(
        su_spc=rates["spc_su"], su_cpc=rates["cpc_su"], su_private=rates["p_su"], su_total=su_total,
        cu_spc=rates["spc_cu"], cu_lpc=rates["lpc_cu"], cu_private=rates["p_cu"], cu_total=cu_total,
        cap_spc=cap(("spc_su", "spc_cu")), cap_cpc=cap(("cpc_su",)), cap_lpc=cap(("lpc_cu",)),
        min_rate=float(totals.min()) if totals.size else 0.0, stderr=stderr)


def validate_allocation(sol: PrecoderSolution, report: RateReport, tol=1e-6) -> list:
    """Violated allocation constraints, as human-readable strings."""
    out = []
    for name, used, cap in (("spc", sol.c_spc.sum(), report.cap_spc),
                            ("cpc", sol.c_cpc.sum(), report.cap_cpc),
                            ("lpc", sol.c_lpc.sum(), report.cap_lpc)):
        if used > cap + tol:
            out.append(f"{name} cap exceeded: sum {used:.6g} > {cap:.6g}")
    for name in ("c_spc", "c_cpc", "c_lpc", "alpha_su", "alpha_cu"):
        v = getattr(sol, name)
        if v.size and v.min() < -tol:
            out.append(f"{name} negative: {v.min():.3g}")
    return out

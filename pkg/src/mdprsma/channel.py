"""Dual-polarized satellite and terrestrial channel synthesis.

The satellite link of every user is a 2x2 polarimetric mixing matrix ``G``
lifted to the planar array through a Kronecker product with the steering
vector. Single-polarization receive chains see the projection of that matrix
onto their polarization, vectorized per antenna pair.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

BOLTZMANN = 1.380649e-23
SPEED_OF_LIGHT = 299792458.0

_S2 = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class PolarizationBasis:
    rho_r: np.ndarray = field(default_factory=lambda: np.array([_S2, -1j * _S2]))
    rho_l: np.ndarray = field(default_factory=lambda: np.array([_S2, 1j * _S2]))
    rho_v: np.ndarray = field(default_factory=lambda: np.array([1.0 + 0j, 0.0]))
    rho_h: np.ndarray = field(default_factory=lambda: np.array([0.0 + 0j, 1.0]))

    def __getitem__(self, name: str) -> np.ndarray:
        return {"RHCP": self.rho_r, "LHCP": self.rho_l, "V": self.rho_v, "H": self.rho_h}[name]


BASIS = PolarizationBasis()
SAT_TX = ("RHCP", "LHCP")
BS_TX = ("V", "H")


@dataclass(frozen=True)
class ArrayConfig:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("array needs at least one antenna pair per axis")

    @property
    def n_pairs(self) -> int:
        return self.nx * self.ny


@dataclass(frozen=True)
class SatUserGeometry:
    """Large-scale parameters of one satellite link (fixed over SAA samples)."""

    theta: float
    varphi: float
    zeta: float
    kappa: float
    chi0: float
    chi_tilde: float
    beta: float
    phase0: float = 0.0
    distance_m: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.varphi < np.pi / 2:
            raise ValueError("off-nadir angle must lie in [0, pi/2)")
        if not self.kappa > 0 or not self.beta > 0:
            raise ValueError("kappa and beta must be positive")
        if not (0 < self.chi0 <= 1 and 0 < self.chi_tilde <= 1):
            raise ValueError("depolarization fractions must lie in (0, 1]")


@dataclass
class PolarimetricChannel:
    g: np.ndarray
    a: np.ndarray
    full: np.ndarray


@dataclass
class TerrestrialChannel:
    h_full: np.ndarray
    chi_tilde_t: float
    beta_t: float


def xpd_to_chi(xpd_db: float) -> float:
    """Depolarization fraction for a cross-polar discrimination in dB."""
    if not np.isfinite(xpd_db):
        raise ValueError("xpd_db must be finite")
    return 1.0 / (1.0 + 10.0 ** (xpd_db / 10.0))


def chi_to_xpd(chi: float) -> float:
    return 10.0 * np.log10((1.0 - chi) / chi)


def rotation_matrix(zeta: float) -> np.ndarray:
    c, s = np.cos(zeta), np.sin(zeta)
    return np.array([[c, s], [-s, c]])


def steering_vector(theta: float, varphi: float, cfg: ArrayConfig) -> np.ndarray:
    """UPA response ``a_x kron a_y`` with half-wavelength spacing."""
    sp = np.sin(varphi)
    ax = np.exp(-1j * np.pi * np.arange(cfg.nx) * sp * np.cos(theta))
    ay = np.exp(-1j * np.pi * np.arange(cfg.ny) * sp * np.sin(theta))
    return np.kron(ax, ay)


def _mixing(chi: float) -> np.ndarray:
    a, b = np.sqrt(1.0 - chi), np.sqrt(chi)
    return np.array([[a, b], [b, a]])


def _cn(rng, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * _S2


def polarimetric_matrix(geom: SatUserGeometry, gtil: np.ndarray) -> np.ndarray:
    """Mixing matrices for NLOS draws ``gtil`` of shape (..., 2, 2)."""
    k = geom.kappa
    los = np.sqrt(k) * np.exp(1j * geom.phase0) * _mixing(geom.chi0)
    nlos = _mixing(geom.chi_tilde) * gtil
    return rotation_matrix(geom.zeta) @ (np.sqrt(geom.beta / (k + 1.0)) * (los + nlos))


def sample_sat_polarimetric(geom: SatUserGeometry, cfg: ArrayConfig, rng) -> PolarimetricChannel:
    gtil = _cn(rng, (2, 2))
    if not np.all(np.isfinite(gtil)):
        raise FloatingPointError("non-finite fading draw")
    g = polarimetric_matrix(geom, gtil)
    a = steering_vector(geom.theta, geom.varphi, cfg)
    return PolarimetricChannel(g=g, a=a, full=np.kron(a[:, None], g))


def effective_channel(full: np.ndarray, rx_pol: str, tx_basis=SAT_TX) -> np.ndarray:
    """Effective channel seen by a single ``rx_pol`` receive chain.

    Entries ``2n`` and ``2n+1`` are the responses of antenna pair ``n`` when
    excited with the first and second transmit polarization.
    """
    full = np.asarray(full)
    if full.ndim != 2 or full.shape[1] != 2 or full.shape[0] % 2:
        raise ValueError("full channel must be (2N, 2)")
    n = full.shape[0] // 2
    proj = np.kron(np.eye(n), BASIS[rx_pol].conj()[None, :])
    tx = np.column_stack([BASIS[p] for p in tx_basis])
    return (proj @ full @ tx).T.reshape(-1, order="F")


def link_budget(gain_tx_dbi, gain_rx_dbi, fc_hz, bandwidth_hz, tsys_k, distance_m, pathloss_exp=2.0):
    """Noise-normalized average channel power gain."""
    if np.any(np.asarray(distance_m) <= 0):
        raise ValueError("distance must be positive")
    g = 10.0 ** ((gain_tx_dbi + gain_rx_dbi) / 10.0)
    fspl = (SPEED_OF_LIGHT / (4.0 * np.pi * fc_hz)) ** 2
    return g / (BOLTZMANN * tsys_k * bandwidth_hz) * fspl * np.asarray(distance_m, dtype=float) ** (-pathloss_exp)


def sample_terrestrial(chi_tilde_t: float, beta_t: float, nt: int, rng,
                       rx_pol: str = "V") -> tuple[TerrestrialChannel, np.ndarray]:
    if nt < 1:
        raise ValueError("Nt must be >= 1")
    h_til = np.sqrt(beta_t) * _cn(rng, (2 * nt, 2))
    h_full = np.kron(np.ones((nt, 1)), _mixing(chi_tilde_t)) * h_til
    ch = TerrestrialChannel(h_full=h_full, chi_tilde_t=chi_tilde_t, beta_t=beta_t)
    return ch, effective_channel(h_full, rx_pol, BS_TX)


# ---------------------------------------------------------------------------
# scenarios and SAA ensembles


@dataclass
class ScenarioParams:
    """Physical parameters of a drop. Powers and gains in dB units."""

    nx: int = 2
    ny: int = 2
    nt: int = 2
    ks: int = 4
    kt: int = 2
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

    @property
    def array(self) -> ArrayConfig:
        return ArrayConfig(self.nx, self.ny)


@dataclass
class Scenario:
    """One drop: geometry of all links plus the fixed terrestrial channels."""

    array: ArrayConfig
    nt: int
    su: list
    cu_sat: list
    cu_terr: list
    su_pol: np.ndarray
    cu_pol: np.ndarray

    @property
    def ks(self) -> int:
        return len(self.su)

    @property
    def kt(self) -> int:
        return len(self.cu_sat)


def polarization_split(k: int) -> np.ndarray:
    """Chain index per user: the first half uses index 0 (RHCP / V)."""
    return (np.arange(k) >= (k + 1) // 2).astype(int)


def _uniform_disc(rng, radius, n):
    r = radius * np.sqrt(rng.random(n))
    ang = 2.0 * np.pi * rng.random(n)
    return r * np.cos(ang), r * np.sin(ang)


def _sat_geometry(p: ScenarioParams, x, y, rng) -> SatUserGeometry:
    r = np.hypot(x, y)
    d = np.hypot(r, p.altitude_m)
    return SatUserGeometry(
        theta=float(np.arctan2(y, x)),
        varphi=float(np.arctan2(r, p.altitude_m)),
        zeta=float(2.0 * np.pi * rng.random()),
        kappa=10.0 ** (p.kappa_db / 10.0),
        chi0=xpd_to_chi(p.xpd_los_db),
        chi_tilde=xpd_to_chi(p.xpd_nlos_db),
        beta=float(link_budget(p.gain_sat_dbi, p.gain_rx_dbi, p.fc_hz, p.bandwidth_hz, p.tsys_k, d, 2.0)),
        phase0=float(2.0 * np.pi * rng.random()),
        distance_m=float(d),
    )


def draw_scenario(p: ScenarioParams, rng) -> Scenario:
    """Draw user positions, orientation mismatches and terrestrial channels."""
    sx, sy = _uniform_disc(rng, p.sat_radius_m, p.ks)
    su = [_sat_geometry(p, sx[k], sy[k], rng) for k in range(p.ks)]
    bx, by = _uniform_disc(rng, p.sat_radius_m - p.bs_radius_m, 1)
    cx, cy = _uniform_disc(rng, p.bs_radius_m, p.kt)
    cu_sat = [_sat_geometry(p, bx[0] + cx[k], by[0] + cy[k], rng) for k in range(p.kt)]
    chi_t = xpd_to_chi(p.xpd_bs_db)
    cu_terr = []
    for k in range(p.kt):
        d = np.hypot(np.hypot(cx[k], cy[k]), p.bs_height_m)
        beta_t = float(link_budget(p.gain_bs_dbi, p.gain_rx_dbi, p.fc_hz, p.bandwidth_hz, p.tsys_k, d, p.eta))
        ch, _ = sample_terrestrial(chi_t, beta_t, p.nt, rng)
        cu_terr.append(ch)
    return Scenario(array=p.array, nt=p.nt, su=su, cu_sat=cu_sat, cu_terr=cu_terr,
                    su_pol=polarization_split(p.ks), cu_pol=polarization_split(p.kt))


@dataclass
class EffectiveChannelEnsemble:
    """SAA samples of the effective channels on both receive chains.

    Arrays are indexed ``[chain, user, sample, antenna]``. Chain 0 is RHCP for
    satellite users and V for terrestrial users, chain 1 is LHCP / H. The
    nominal chain of each user is given by ``su_pol`` / ``cu_pol``.
    """

    f_pol: np.ndarray   # (2, Ks, S, 2Ns)
    z_pol: np.ndarray   # (2, Kt, S, 2Ns)
    h_pol: np.ndarray   # (2, Kt, 2Nt)
    su_pol: np.ndarray
    cu_pol: np.ndarray

    def __post_init__(self):
        if self.f_pol.shape[2] != self.z_pol.shape[2] and self.z_pol.shape[1] and self.f_pol.shape[1]:
            raise ValueError("sample dimension mismatch between users")

    @property
    def ks(self) -> int:
        return self.f_pol.shape[1]

    @property
    def kt(self) -> int:
        return self.h_pol.shape[1]

    @property
    def s_count(self) -> int:
        return self.f_pol.shape[2] if self.ks else self.z_pol.shape[2]

    @property
    def ns2(self) -> int:
        return self.f_pol.shape[3]

    @property
    def nt2(self) -> int:
        return self.h_pol.shape[2]

    @property
    def f_su(self) -> np.ndarray:
        return self.f_pol[self.su_pol, np.arange(self.ks)]

    @property
    def z_cu(self) -> np.ndarray:
        return self.z_pol[self.cu_pol, np.arange(self.kt)]

    @property
    def h_cu(self) -> np.ndarray:
        return self.h_pol[self.cu_pol, np.arange(self.kt)]

    def samples(self, idx) -> "EffectiveChannelEnsemble":
        """Sub-ensemble restricted to the sample indices ``idx``."""
        idx = np.atleast_1d(idx)
        return EffectiveChannelEnsemble(self.f_pol[:, :, idx], self.z_pol[:, :, idx], self.h_pol,
                                        self.su_pol, self.cu_pol)

    # serialization ---------------------------------------------------------
    _MAGIC = b"MDPE"

    def to_bytes(self) -> bytes:
        hdr = struct.pack("<4s6q", self._MAGIC, 1, self.ks, self.kt, self.s_count, self.ns2, self.nt2)
        body = b"".join(np.ascontiguousarray(a, dtype="<c16").tobytes()
                        for a in (self.f_pol, self.z_pol, self.h_pol))
        pols = np.concatenate([self.su_pol, self.cu_pol]).astype("<i8").tobytes()
        return hdr + body + pols

    @classmethod
    def from_bytes(cls, data: bytes) -> "EffectiveChannelEnsemble":
        magic, ver, ks, kt, s, ns2, nt2 = struct.unpack_from("<4s6q", data)
        if magic != cls._MAGIC or ver != 1:
            raise ValueError("not an ensemble file")
        off = struct.calcsize("<4s6q")
        out = []
        for shape in ((2, ks, s, ns2), (2, kt, s, ns2), (2, kt, nt2)):
            cnt = int(np.prod(shape))
            out.append(np.frombuffer(data, dtype="<c16", count=cnt, offset=off).reshape(shape).copy())
            off += 16 * cnt
        pols = np.frombuffer(data, dtype="<i8", count=ks + kt, offset=off)
        return cls(out[0], out[1], out[2], pols[:ks].copy(), pols[ks:].copy())

    def to_csv(self, path) -> None:
        """Long-format dump: link, chain, user, sample, index, re, im."""
        with open(path, "w") as fh:
            fh.write("link,chain,user,sample,index,re,im\n")
            for name, arr in (("f", self.f_pol), ("z", self.z_pol)):
                for idx in np.ndindex(arr.shape):
                    v = arr[idx]
                    fh.write(f"{name},{idx[0]},{idx[1]},{idx[2]},{idx[3]},{v.real!r},{v.imag!r}\n")
            for idx in np.ndindex(self.h_pol.shape):
                v = self.h_pol[idx]
                fh.write(f"h,{idx[0]},{idx[1]},-1,{idx[2]},{v.real!r},{v.imag!r}\n")


def _projections(g: np.ndarray, rx_names, tx_names) -> np.ndarray:
    """rho_rx^H g rho_tx for stacked g (..., 2, 2); returns (..., n_rx, n_tx)."""
    rx = np.stack([BASIS[p] for p in rx_names])          # (n_rx, 2)
    tx = np.column_stack([BASIS[p] for p in tx_names])   # (2, n_tx)
    return np.einsum("ri,...ij,jt->...rt", rx.conj(), g, tx)


def _sat_samples(geom: SatUserGeometry, cfg: ArrayConfig, s: int, rng, rx_names) -> np.ndarray:
    gtil = _cn(rng, (s, 2, 2))
    if not np.all(np.isfinite(gtil)):
        raise FloatingPointError("non-finite fading draw")
    g = polarimetric_matrix(geom, gtil)
    a = steering_vector(geom.theta, geom.varphi, cfg)
    proj = _projections(g, rx_names, SAT_TX)             # (S, 2, 2)
    # entry 2n + i = a_n * proj[i]
    out = a[None, None, :, None] * proj[:, :, None, :]   # (S, rx, N, tx)
    return out.reshape(s, 2, -1).transpose(1, 0, 2)      # (rx, S, 2N)


def build_ensemble(scenario: Scenario, s: int, rng) -> EffectiveChannelEnsemble:
    """Draw ``s`` small-scale fading samples of every satellite link."""
    if s < 1:
        raise ValueError("S must be >= 1")
    ns2 = 2 * scenario.array.n_pairs
    f_pol = np.zeros((2, scenario.ks, s, ns2), dtype=complex)
    z_pol = np.zeros((2, scenario.kt, s, ns2), dtype=complex)
    for k, geom in enumerate(scenario.su):
        f_pol[:, k] = _sat_samples(geom, scenario.array, s, rng, SAT_TX)
    for k, geom in enumerate(scenario.cu_sat):
        z_pol[:, k] = _sat_samples(geom, scenario.array, s, rng, BS_TX)
    h_pol = np.zeros((2, scenario.kt, 2 * scenario.nt), dtype=complex)
    for k, ch in enumerate(scenario.cu_terr):
        for c, pol in enumerate(BS_TX):
            h_pol[c, k] = effective_channel(ch.h_full, pol, BS_TX)
    return EffectiveChannelEnsemble(f_pol, z_pol, h_pol, scenario.su_pol.copy(), scenario.cu_pol.copy())

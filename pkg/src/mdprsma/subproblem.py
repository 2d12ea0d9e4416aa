"""Compile the per-iteration convex problem into a real standard-form cone program.

Complex precoder columns are embedded as ``x = [Re; Im]``. Each decoding layer
contributes

    const - t + 2 Re{omega^H w_target} >= rate budget          (orthant row)
    ||[2 L^H B x ; 1 - t]|| <= 1 + t                           (SOC)

where ``t`` is an epigraph slack for the quadratic terms, ``L L^H = Psi`` and
``B`` maps the free coordinates of a column to the full precoder (identity,
a polarization subspace selector, or absent when the column is pinned to 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import Cone, ConicProgram, SolveResult
from .rates import P_LPC, W_CPC, PrecoderSolution, SchemeSpec
from .wmmse import WmmseCoefficients

__all__ = ["ConicProgram", "QuadraticConstraintSpec", "SubproblemLayout", "build", "complex_to_real",
           "psd_factor", "decode", "real_linear_map"]


def complex_to_real(v):
    """Real embedding of a complex vector or Hermitian matrix.

    Vectors map to ``[Re v; Im v]`` and Hermitian ``Psi`` to
    ``[[Re, -Im], [Im, Re]]`` so that ``w^H Psi w = x^T M x``.
    """
    v = np.asarray(v)
    if v.ndim == 1:
        return np.concatenate([v.real, v.imag])
    if not np.allclose(v, v.conj().T, atol=1e-12 * max(1.0, np.abs(v).max())):
        raise ValueError("matrix is not Hermitian")
    return real_linear_map(v)


def real_linear_map(M):
    """Real matrix of the complex linear map ``x -> M x`` on stacked coordinates."""
    M = np.asarray(M)
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


def psd_factor(psi, tol=1e-9):
    """Factor ``L`` with ``L L^H = psi + eps I``; negligible columns dropped."""
    psi = np.asarray(psi)
    if not np.allclose(psi, psi.conj().T, atol=1e-12 * max(1.0, np.abs(psi).max(initial=0.0))):
        raise ValueError("matrix is not Hermitian")
    lam, V = np.linalg.eigh(psi)
    scale = max(1.0, float(np.abs(lam).max(initial=0.0)))
    if lam.size and lam.min() < -tol * scale:
        raise ValueError(f"matrix is indefinite (min eigenvalue {lam.min():.3g})")
    eps = max(0.0, -float(lam.min(initial=0.0))) + 1e-12
    lam = lam + eps
    keep = lam > max(1e-11, 1e-12 * float(lam.max(initial=0.0)))
    return V[:, keep] * np.sqrt(lam[keep])


@dataclass
class QuadraticConstraintSpec:
    """One layer constraint before cone encoding."""

    psi_factors: list          # (L, "W"/"P", column)
    linear_term: tuple         # (omega, "W"/"P", column)
    constant: float
    rhs_vars: list             # variable names whose sum is the right-hand side


@dataclass
class SubproblemLayout:
    """Where each unknown lives in the real variable vector."""

    ns2: int
    nt2: int
    ks: int
    kt: int
    w_basis: dict = field(default_factory=dict)   # column -> complex basis (ns2 x d)
    p_basis: dict = field(default_factory=dict)
    slices: dict = field(default_factory=dict)
    n: int = 0

    def add(self, name, size):
        self.slices[name] = slice(self.n, self.n + size)
        self.n += size
        return self.slices[name]

    def col_slice(self, which, col):
        return self.slices.get(f"{which}{col}")


def column_bases(scheme: SchemeSpec, ns2: int, nt2: int, ks: int, kt: int, budgets):
    """Free-coordinate bases of every active precoder column."""
    ps, pt = budgets
    w_basis, p_basis = {}, {}
    eye_s, eye_t = np.eye(ns2), np.eye(nt2)
    if ps > 0:
        for c in scheme.active_w(ks):
            if scheme.dual_pm:
                # even entries excite RHCP, odd entries LHCP
                w_basis[c] = eye_s[:, 0::2] if c == W_CPC else eye_s[:, 1::2]
            else:
                w_basis[c] = eye_s
    if pt > 0:
        for c in scheme.active_p(kt):
            if scheme.dual_pm:
                p_basis[c] = eye_t[:, 0::2] if c == P_LPC else eye_t[:, 1::2]
            else:
                p_basis[c] = eye_t
    return w_basis, p_basis


def quadratic_specs(coeffs: WmmseCoefficients, sigma2=1.0) -> list:
    """Factor every layer's quadratic terms and collect its linear data."""
    specs = []
    for lc in coeffs.layers:
        lay = lc.layer
        fac = []
        if lc.psi_sat is not None and lay.w_cols:
            L = psd_factor(lc.psi_sat)
            fac += [(L, "W", c) for c in lay.w_cols]
        if lc.psi_bs is not None and lay.p_cols:
            L = psd_factor(lc.psi_bs)
            fac += [(L, "P", c) for c in lay.p_cols]
        kind, idx = lay.budget
        rhs = [kind] if idx is None else [f"{kind}[{idx}]"]
        specs.append(QuadraticConstraintSpec(fac, (lc.omega_bar, lay.target[0], lay.target[1]),
                                             lc.constant(sigma2), rhs))
    return specs


def build(coeffs: WmmseCoefficients, budgets, scheme: SchemeSpec, dims, sigma2=1.0,
          r_min_floor: float | None = None) -> tuple[ConicProgram, SubproblemLayout]:
    """Cone program for one outer iteration.

    Parameters
    ----------
    coeffs : Step I coefficients of every layer.
    budgets : (Ps, Pt) linear power budgets.
    scheme : which columns and rate portions exist.
    dims : (ns2, nt2, ks, kt).
    r_min_floor : optional lower bound on the objective (used for feasibility tests).
    """
    ns2, nt2, ks, kt = dims
    ps, pt = budgets
    lay = SubproblemLayout(ns2, nt2, ks, kt)
    lay.w_basis, lay.p_basis = column_bases(scheme, ns2, nt2, ks, kt, budgets)
    for c, B in lay.w_basis.items():
        lay.add(f"W{c}", 2 * B.shape[1])
    for c, B in lay.p_basis.items():
        lay.add(f"P{c}", 2 * B.shape[1])
    has_cpc = scheme.common and ks > 0
    has_lpc = scheme.common and kt > 0
    if scheme.spc:
        lay.add("c_spc", ks)
    if has_cpc:
        lay.add("c_cpc", ks)
    if has_lpc:
        lay.add("c_lpc", kt)
    lay.add("alpha_su", ks)
    lay.add("alpha_cu", kt)
    lay.add("r_min", 1)
    specs = quadratic_specs(coeffs, sigma2)
    t0 = lay.add("t", len(specs)).start
    n = lay.n

    lin_G, lin_h = [], []

    def lin_row(coefs: dict, rhs: float):
        """Append sum(coef * x) <= rhs."""
        row = np.zeros(n)
        for idx, v in coefs.items():
            row[idx] += v
        lin_G.append(row)
        lin_h.append(rhs)

    def var(name, i=None):
        sl = lay.slices[name]
        return sl.start + (0 if i is None else i)

    # nonnegativity of portions and private-rate bounds
    for name in ("c_spc", "c_cpc", "c_lpc", "alpha_su", "alpha_cu"):
        if name in lay.slices:
            for i in range(lay.slices[name].stop - lay.slices[name].start):
                lin_row({var(name, i): -1.0}, 0.0)
    # total rate of every user >= r_min
    r = var("r_min")
    for k in range(ks):
        row = {var("alpha_su", k): -1.0, r: 1.0}
        if scheme.spc:
            row[var("c_spc", k)] = -1.0
        if has_cpc:
            row[var("c_cpc", k)] = -1.0
        lin_row(row, 0.0)
    for k in range(kt):
        row = {var("alpha_cu", k): -1.0, r: 1.0}
        if has_lpc:
            row[var("c_lpc", k)] = -1.0
        lin_row(row, 0.0)
    if r_min_floor is not None:
        lin_row({r: -1.0}, -float(r_min_floor))

    soc_blocks = []
    for i, spec in enumerate(specs):
        ti = t0 + i
        # const - t + 2 Re{omega^H B x} - rhs >= 0
        row = {ti: 1.0}
        for name in spec.rhs_vars:
            base, _, idx = name.partition("[")
            if base not in lay.slices:
                continue
            if idx:
                row[var(base, int(idx[:-1]))] = row.get(var(base, int(idx[:-1])), 0.0) + 1.0
            else:
                for j in range(lay.slices[base].stop - lay.slices[base].start):
                    row[var(base, j)] = row.get(var(base, j), 0.0) + 1.0
        omega, which, col = spec.linear_term
        g = np.zeros(n)
        for idx, v in row.items():
            g[idx] += v
        B = (lay.w_basis if which == "W" else lay.p_basis).get(col)
        if B is not None:
            sl = lay.col_slice(which, col)
            g[sl] -= 2.0 * complex_to_real(B.T @ omega)   # B real, so B^H omega = B^T omega
        lin_G.append(g)
        lin_h.append(spec.constant)
        # quadratic block
        rows = []
        for L, which_q, c in spec.psi_factors:
            Bq = (lay.w_basis if which_q == "W" else lay.p_basis).get(c)
            if Bq is None or L.shape[1] == 0:
                continue
            Mr = real_linear_map(L.conj().T @ Bq)
            blk = np.zeros((Mr.shape[0], n))
            blk[:, lay.col_slice(which_q, c)] = -2.0 * Mr
            rows.append(blk)
        top = np.zeros((2, n))
        top[0, ti] = -1.0   # s0 = 1 + t
        top[1, ti] = 1.0    # s1 = 1 - t
        G_b = np.vstack([top] + rows)
        h_b = np.zeros(G_b.shape[0])
        h_b[:2] = 1.0
        soc_blocks.append((G_b, h_b))

    # power balls
    for which, budget, bases in (("W", ps, lay.w_basis), ("P", pt, lay.p_basis)):
        if not bases:
            continue
        cols = [lay.col_slice(which, c) for c in bases]
        size = sum(sl.stop - sl.start for sl in cols)
        G_b = np.zeros((1 + size, n))
        off = 1
        for sl in cols:
            k = sl.stop - sl.start
            G_b[off:off + k, sl] = -np.eye(k)
            off += k
        h_b = np.zeros(1 + size)
        h_b[0] = np.sqrt(budget)
        soc_blocks.append((G_b, h_b))

    G = np.vstack([np.array(lin_G).reshape(-1, n)] + [b[0] for b in soc_blocks])
    h = np.concatenate([np.array(lin_h)] + [b[1] for b in soc_blocks])
    cones = [Cone("nonneg", 0, len(lin_G))]
    off = len(lin_G)
    for G_b, _ in soc_blocks:
        cones.append(Cone("soc", off, off + G_b.shape[0]))
        off += G_b.shape[0]
    c = np.zeros(n)
    c[r] = 1.0
    return ConicProgram(c=c, G=G, h=h, cones=cones, var_slices=dict(lay.slices)), lay


def decode(res: SolveResult, lay: SubproblemLayout) -> PrecoderSolution:
    """Map the solver's real vector back to precoders and rate portions."""
    x = res.x
    sol = PrecoderSolution.zeros(lay.ns2, lay.nt2, lay.ks, lay.kt)

    def cvec(sl):
        v = x[sl]
        half = v.size // 2
        return v[:half] + 1j * v[half:]

    for c, B in lay.w_basis.items():
        sol.W[:, c] = B @ cvec(lay.slices[f"W{c}"])
    for c, B in lay.p_basis.items():
        sol.P[:, c] = B @ cvec(lay.slices[f"P{c}"])
    for name in ("c_spc", "c_cpc", "c_lpc", "alpha_su", "alpha_cu"):
        if name in lay.slices:
            setattr(sol, name, np.maximum(x[lay.slices[name]], 0.0))
    sol.r_min = float(x[lay.slices["r_min"]][0])
    return sol

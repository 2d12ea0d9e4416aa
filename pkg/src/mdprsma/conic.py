"""Dense primal-dual interior-point solver for orthant / second-order cone programs.

Problems are given in the slack form

    maximize    c^T x
    subject to  A x = b
                h - G x in K,   K = R_+^l x Q^{q_1} x ... x Q^{q_k}

and solved through the homogeneous self-dual embedding with Mehrotra
predictor-corrector steps and Nesterov-Todd scaling. The Newton systems are
reduced to normal equations ``G^T W^{-2} G`` which, for a second-order cone
block, equal a constant matrix ``G_b^T J G_b`` plus a rank-one update.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)


class SolveStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class Cone:
    """A cone acting on the slack rows ``start:stop``.

    ``kind`` is ``"nonneg"`` or ``"soc"``. For ``"soc"`` the first row is the
    norm bound: ``s[start] >= ||s[start+1:stop]||``.
    """

    kind: str
    start: int
    stop: int

    @property
    def dim(self) -> int:
        return self.stop - self.start


@dataclass
class ConicProgram:
    """Standard-form cone program (maximization).

    Attributes
    ----------
    c : (n,) objective to maximize.
    G, h : inequality data, ``h - G x`` in the product cone.
    A, b : equality data (may have zero rows).
    cones : cone blocks over the rows of ``G``; disjoint and covering.
    var_slices : named spans of the variable vector, used for decoding.
    """

    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    cones: list
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    var_slices: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float)
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float)
        self.validate()

    @property
    def n(self) -> int:
        return self.c.size

    def validate(self):
        m = self.G.shape[0]
        if self.h.shape != (m,):
            raise ValueError("h does not match G")
        if self.b.shape != (self.A.shape[0],):
            raise ValueError("b does not match A")
        covered = np.zeros(m, dtype=int)
        for cone in self.cones:
            if cone.kind not in ("nonneg", "soc"):
                raise ValueError(f"unknown cone kind {cone.kind!r}")
            if cone.kind == "soc" and cone.dim < 2:
                raise ValueError("second-order cone blocks need dimension >= 2")
            covered[cone.start:cone.stop] += 1
        if np.any(covered != 1):
            raise ValueError("cone blocks must be disjoint and cover every row of G")

    def dump(self, path) -> None:
        """Write a plain-text standard-form dump."""
        with open(path, "w") as fh:
            fh.write("# maximize c^T x  s.t.  A x = b,  h - G x in K\n")
            fh.write(f"n {self.n}\nm {self.G.shape[0]}\np {self.A.shape[0]}\n")
            for name, sl in self.var_slices.items():
                fh.write(f"var {name} {sl.start} {sl.stop}\n")
            for cone in self.cones:
                fh.write(f"cone {cone.kind} {cone.start} {cone.stop}\n")
            _dump_vec(fh, "c", self.c)
            _dump_vec(fh, "h", self.h)
            _dump_vec(fh, "b", self.b)
            _dump_sparse(fh, "G", self.G)
            _dump_sparse(fh, "A", self.A)


def _dump_vec(fh, name, v):
    fh.write(f"{name} " + " ".join(repr(float(x)) for x in v) + "\n")


def _dump_sparse(fh, name, M):
    rows, cols = np.nonzero(M)
    for i, j in zip(rows, cols):
        fh.write(f"{name} {i} {j} {float(M[i, j])!r}\n")


def load_dump(path) -> ConicProgram:
    """Parse a file written by :meth:`ConicProgram.dump`."""
    dims, cones, slices, vecs, mats = {}, [], {}, {}, {"G": [], "A": []}
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            tok = line.split()
            key = tok[0]
            if key in ("n", "m", "p"):
                dims[key] = int(tok[1])
            elif key == "var":
                slices[tok[1]] = slice(int(tok[2]), int(tok[3]))
            elif key == "cone":
                cones.append(Cone(tok[1], int(tok[2]), int(tok[3])))
            elif key in ("c", "h", "b"):
                vecs[key] = np.array([float(x) for x in tok[1:]])
            else:
                mats[key].append((int(tok[1]), int(tok[2]), float(tok[3])))
    n, m, p = dims["n"], dims["m"], dims["p"]
    G, A = np.zeros((m, n)), np.zeros((p, n))
    for M, key in ((G, "G"), (A, "A")):
        for i, j, v in mats[key]:
            M[i, j] = v
    return ConicProgram(vecs["c"], G, vecs["h"], cones, A, vecs.get("b", np.zeros(0)), slices)


@dataclass
class SolverOptions:
    max_iter: int = 100
    tol: float = 1e-9
    tol_inaccurate: float = 1e-7
    step_fraction: float = 0.99
    regularization: float = 1e-10
    refine_steps: int = 3
    trace_path: str | None = None


@dataclass
class SolveResult:
    """Solver output. ``x`` maximizes ``c^T x``; ``z`` multiplies ``h - G x``."""

    status: SolveStatus
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    kkt: dict
    iterations: int
    objective: float
    history: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


class _Cones:
    """Cone bookkeeping: Jordan products, NT scaling and step lengths.

    Second-order cone blocks are handled together through segment reductions
    over their "tail" rows (every row but the head of each block).
    """

    def __init__(self, cones, m):
        self.m = m
        lo = [np.arange(c.start, c.stop) for c in cones if c.kind == "nonneg"]
        self.lo = np.concatenate(lo) if lo else np.zeros(0, dtype=int)
        self.soc = [(c.start, c.stop) for c in cones if c.kind == "soc"]
        self.nsoc = len(self.soc)
        self.heads = np.array([a for a, _ in self.soc], dtype=int)
        tails = [np.arange(a + 1, b) for a, b in self.soc]
        self.tails = np.concatenate(tails) if tails else np.zeros(0, dtype=int)
        self.blk = np.concatenate([np.full(b - a - 1, i) for i, (a, b) in enumerate(self.soc)]) \
            if self.soc else np.zeros(0, dtype=int)
        seg = np.cumsum([0] + [b - a - 1 for a, b in self.soc])
        self.seg = seg[:-1]
        self.degree = self.lo.size + self.nsoc
        self.e = np.zeros(m)
        self.e[self.lo] = 1.0
        self.e[self.heads] = 1.0

    def segsum(self, v):
        if not self.nsoc:
            return np.zeros(0)
        return np.add.reduceat(v, self.seg)

    def split(self, v):
        return v[self.heads], v[self.tails]

    def prod(self, u, v):
        out = np.empty(self.m)
        out[self.lo] = u[self.lo] * v[self.lo]
        u0, u1 = self.split(u)
        v0, v1 = self.split(v)
        out[self.heads] = u0 * v0 + self.segsum(u1 * v1)
        out[self.tails] = u0[self.blk] * v1 + v0[self.blk] * u1
        return out

    def div(self, lam, d):
        """Solve ``lam o x = d`` for x."""
        out = np.empty(self.m)
        out[self.lo] = d[self.lo] / lam[self.lo]
        l0, l1 = self.split(lam)
        d0, d1 = self.split(d)
        nl1 = np.sqrt(self.segsum(l1 * l1))
        x0 = (l0 * d0 - self.segsum(l1 * d1)) / ((l0 - nl1) * (l0 + nl1))
        out[self.heads] = x0
        out[self.tails] = (d1 - x0[self.blk] * l1) / l0[self.blk]
        return out

    def interior_shift(self, v):
        """Largest cone-membership violation of v (negative when interior)."""
        worst = -np.inf
        if self.lo.size:
            worst = max(worst, float(np.max(-v[self.lo])))
        if self.nsoc:
            v0, v1 = self.split(v)
            worst = max(worst, float(np.max(np.sqrt(self.segsum(v1 * v1)) - v0)))
        return worst

    def max_step(self, v, dv):
        """Largest alpha >= 0 with v + alpha dv in the cone."""
        alpha = np.inf
        if self.lo.size:
            neg = dv[self.lo] < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-v[self.lo][neg] / dv[self.lo][neg])))
        if not self.nsoc:
            return alpha
        x0, x1 = self.split(v)
        d0, d1 = self.split(dv)
        nx1 = np.sqrt(self.segsum(x1 * x1))
        qa = d0 * d0 - self.segsum(d1 * d1)
        qb = x0 * d0 - self.segsum(x1 * d1)
        qc = (x0 - nx1) * (x0 + nx1)
        cand = np.full((3, self.nsoc), np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand[0] = np.where(d0 < 0, -x0 / d0, np.inf)
            disc = qb * qb - qa * qc
            quad = (np.abs(qa) > 1e-300) & (disc >= 0)
            q = -(qb + np.copysign(np.sqrt(np.maximum(disc, 0.0)), qb))
            r1 = q / qa
            r2 = qc / q
            cand[1] = np.where(quad & (r1 > 0), r1, np.inf)
            cand[2] = np.where(quad & (q != 0) & (r2 > 0), r2, np.inf)
            lin = (np.abs(qa) <= 1e-300) & (qb < 0)
            cand[1] = np.where(lin, -qc / (2 * qb), cand[1])
        return min(alpha, float(np.min(cand)))

    def scaling(self, s, z):
        return _NTScaling(self, s, z)


class _NTScaling:
    """Nesterov-Todd scaling W with W z = W^{-1} s = lambda."""

    def __init__(self, cones: _Cones, s, z):
        self.cones = cones
        lo = cones.lo
        if np.any(s[lo] <= 0) or np.any(z[lo] <= 0):
            raise np.linalg.LinAlgError("iterate left the orthant interior")
        self.w_lo = np.sqrt(s[lo] / z[lo])
        s0, s1 = cones.split(s)
        z0, z1 = cones.split(z)
        ns1 = np.sqrt(cones.segsum(s1 * s1))
        nz1 = np.sqrt(cones.segsum(z1 * z1))
        sn2 = (s0 - ns1) * (s0 + ns1)
        zn2 = (z0 - nz1) * (z0 + nz1)
        if np.any(sn2 <= 0) or np.any(zn2 <= 0):
            raise np.linalg.LinAlgError("iterate left the cone interior")
        sn, zn = np.sqrt(sn2), np.sqrt(zn2)
        sb0, sb1 = s0 / sn, s1 / sn[cones.blk]
        zb0, zb1 = z0 / zn, z1 / zn[cones.blk]
        gamma = np.sqrt(0.5 * (1.0 + sb0 * zb0 + cones.segsum(sb1 * zb1)))
        self.w1 = (sb1 - zb1) / (2.0 * gamma[cones.blk])
        self.w0 = np.sqrt(1.0 + cones.segsum(self.w1 * self.w1))
        self.eta = np.sqrt(sn / zn)
        self.lam = self.apply(z)

    def apply(self, v, inverse=False):
        """Return W v (or W^{-1} v)."""
        c = self.cones
        out = np.empty_like(v)
        lo = c.lo
        out[lo] = v[lo] / self.w_lo if inverse else v[lo] * self.w_lo
        if c.nsoc:
            v0, v1 = c.split(v)
            sgn = -1.0 if inverse else 1.0
            t = c.segsum(self.w1 * v1)
            scale = 1.0 / self.eta if inverse else self.eta
            out[c.heads] = scale * (self.w0 * v0 + sgn * t)
            coef = sgn * v0 + t / (1.0 + self.w0)
            out[c.tails] = scale[c.blk] * (v1 + coef[c.blk] * self.w1)
        return out

    def w2(self, v):
        """W^2 v; on a cone block W^2 = eta^2 (2 w w^T - J)."""
        return self._square(v, inverse=False)

    def winv2(self, v):
        """W^{-2} v; on a cone block W^{-2} = eta^{-2} (2 Jw (Jw)^T - J)."""
        return self._square(v, inverse=True)

    def _square(self, v, inverse):
        c = self.cones
        out = np.empty_like(v)
        lo = c.lo
        out[lo] = v[lo] / self.w_lo**2 if inverse else v[lo] * self.w_lo**2
        if c.nsoc:
            v0, v1 = c.split(v)
            sgn = -1.0 if inverse else 1.0
            ip = self.w0 * v0 + sgn * c.segsum(self.w1 * v1)
            e2 = self.eta**-2 if inverse else self.eta**2
            out[c.heads] = e2 * (2.0 * self.w0 * ip - v0)
            out[c.tails] = e2[c.blk] * (2.0 * sgn * self.w1 * ip[c.blk] + v1)
        return out


class _KKT:
    """Factorization of the reduced system ``[[H, A^T], [A, 0]]``."""

    def __init__(self, G, A, cones: _Cones, reg):
        self.G, self.A, self.cones, self.reg = G, A, cones, reg
        self.Glo = G[cones.lo]
        self.Gh = G[cones.heads]
        self.Gt = G[cones.tails]
        self.n, self.p = G.shape[1], A.shape[0]

    def factor(self, scaling: _NTScaling | None):
        n, p = self.n, self.p
        if scaling is None:
            H = self.G.T @ self.G
        else:
            c = self.cones
            d = 1.0 / scaling.w_lo**2
            H = (self.Glo.T * d) @ self.Glo
            if c.nsoc:
                # sum over blocks of (2 g g^T - G_b^T J G_b) / eta^2 with g = G_b^T [w0; -w1]
                inv = 1.0 / scaling.eta**2
                g = scaling.w0[:, None] * self.Gh - np.add.reduceat(scaling.w1[:, None] * self.Gt, c.seg, axis=0)
                H += 2.0 * (g.T * inv) @ g - (self.Gh.T * inv) @ self.Gh + (self.Gt.T * inv[c.blk]) @ self.Gt
        self.scaling = scaling
        H = 0.5 * (H + H.T)
        reg = self.reg
        H[np.diag_indices(n)] += reg
        if p == 0:
            try:
                self.chol = sla.cho_factor(H, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                H[np.diag_indices(n)] += 1e-8 * max(1.0, float(np.max(np.diag(H))))
                self.chol = sla.cho_factor(H, lower=True, check_finite=False)
            self.lu = None
        else:
            K = np.zeros((n + p, n + p))
            K[:n, :n] = H
            K[:n, n:] = self.A.T
            K[n:, :n] = self.A
            K[n:, n:] = -reg * np.eye(p)
            self.lu = sla.lu_factor(K, check_finite=False)
            self.chol = None

    def _w2(self, v):
        return v if self.scaling is None else self.scaling.w2(v)

    def _winv2(self, v):
        return v if self.scaling is None else self.scaling.winv2(v)

    def _reduced(self, rx, ry, rz):
        G = self.G
        t = rx + G.T @ self._winv2(rz)
        if self.lu is None:
            dx = sla.cho_solve(self.chol, t, check_finite=False)
            dy = np.zeros(0)
        else:
            sol = sla.lu_solve(self.lu, np.concatenate([t, ry]), check_finite=False)
            dx, dy = sol[:self.n], sol[self.n:]
        dz = self._winv2(G @ dx - rz)
        return dx, dy, dz

    def solve(self, rx, ry, rz, refine):
        """Solve [[0, A^T, G^T], [A, 0, 0], [G, 0, -W^2]] u = r with refinement."""
        G, A = self.G, self.A
        dx, dy, dz = self._reduced(rx, ry, rz)
        for _ in range(refine):
            ex = rx - (A.T @ dy + G.T @ dz)
            ey = ry - A @ dx
            ez = rz - (G @ dx - self._w2(dz))
            err = max(np.max(np.abs(ex), initial=0.0), np.max(np.abs(ey), initial=0.0),
                      np.max(np.abs(ez), initial=0.0))
            scale = 1.0 + max(np.max(np.abs(rx), initial=0.0), np.max(np.abs(ry), initial=0.0),
                              np.max(np.abs(rz), initial=0.0))
            if err <= 1e-14 * scale:
                break
            cx, cy, cz = self._reduced(ex, ey, ez)
            dx, dy, dz = dx + cx, dy + cy, dz + cz
        return dx, dy, dz


def solve(prog: ConicProgram, opts: SolverOptions | None = None) -> SolveResult:
    """Solve ``prog`` (maximization) with a homogeneous self-dual interior-point method.

    Parameters
    ----------
    prog : ConicProgram
    opts : SolverOptions, optional

    Returns
    -------
    SolveResult
        ``kkt`` holds relative primal/dual residuals and the relative duality gap.
    """
    opts = opts or SolverOptions()
    c = -prog.c  # internal minimization
    G, h, A, b = prog.G, prog.h, prog.A, prog.b
    n, m, p = c.size, G.shape[0], A.shape[0]
    cones = _Cones(prog.cones, m)
    kkt = _KKT(G, A, cones, opts.regularization)
    history = []
    trace = open(opts.trace_path, "w") if opts.trace_path else None

    def fail(status, it, x=None, y=None, z=None, s=None, info=None):
        if trace:
            trace.close()
        x = np.zeros(n) if x is None else x
        return SolveResult(status, x, np.zeros(p) if y is None else y,
                           np.zeros(m) if z is None else z, np.zeros(m) if s is None else s,
                           info or {"primal": np.inf, "dual": np.inf, "gap": np.inf},
                           it, float(prog.c @ x), history)

    # initial point (two least-squares solves with W = I)
    try:
        kkt.factor(None)
        x, _, rz = kkt.solve(np.zeros(n), b, h, opts.refine_steps)
        s = -rz
        _, y, z = kkt.solve(-c, np.zeros(p), np.zeros(m), opts.refine_steps)
    except (np.linalg.LinAlgError, ValueError):
        return fail(SolveStatus.NUMERICAL_FAILURE, 0)
    for v in (s, z):
        shift = cones.interior_shift(v)
        if shift >= 0:
            v += (1.0 + shift) * cones.e
    tau, kap = 1.0, 1.0

    nb, nh, nc = max(1.0, np.linalg.norm(b)), max(1.0, np.linalg.norm(h)), max(1.0, np.linalg.norm(c))
    best = None
    status = SolveStatus.MAX_ITER
    it = 0
    for it in range(opts.max_iter + 1):
        # residuals
        r1 = A.T @ y + G.T @ z + c * tau
        r2 = A @ x - b * tau
        r3 = s + G @ x - h * tau
        r4 = kap + c @ x + b @ y + h @ z
        mu = (s @ z + tau * kap) / (cones.degree + 1)

        xs, ys, zs, ss = x / tau, y / tau, z / tau, s / tau
        pcost = c @ xs
        dcost = -(b @ ys + h @ zs)
        pres = max(np.linalg.norm(A @ xs - b) / nb, np.linalg.norm(G @ xs + ss - h) / nh)
        dres = np.linalg.norm(A.T @ ys + G.T @ zs + c) / nc
        gap = ss @ zs
        relgap = abs(gap) / max(1.0, min(abs(pcost), abs(dcost)))
        info = {"primal": float(pres), "dual": float(dres), "gap": float(relgap),
                "pcost": float(-pcost), "dcost": float(-dcost)}
        history.append(dict(info, iter=it, mu=float(mu), tau=float(tau), kappa=float(kap)))
        if trace:
            trace.write(" ".join(f"{k}={v:.6e}" for k, v in history[-1].items()) + "\n")

        if pres <= opts.tol and dres <= opts.tol and relgap <= opts.tol:
            status = SolveStatus.OPTIMAL
            break
        if pres <= opts.tol_inaccurate and dres <= opts.tol_inaccurate and relgap <= opts.tol_inaccurate:
            if best is None or max(pres, dres, relgap) < best[0]:
                best = (max(pres, dres, relgap), x.copy(), y.copy(), z.copy(), s.copy(), tau, dict(info))
        # infeasibility certificates, normalized so that the witness objective is -1
        hz_by = h @ z + b @ y
        if hz_by < 0 and kap > tau:
            if np.linalg.norm(A.T @ y + G.T @ z) / (-hz_by) <= opts.tol:
                status = SolveStatus.INFEASIBLE
                break
        cx = c @ x
        if cx < 0 and kap > tau:
            if max(np.linalg.norm(A @ x), np.linalg.norm(G @ x + s)) / (-cx) <= opts.tol:
                status = SolveStatus.UNBOUNDED
                break
        if it == opts.max_iter:
            break

        # breakdowns show up as non-finite directions and are handled below
        with np.errstate(divide="ignore", invalid="ignore"):
            try:
                W = cones.scaling(s, z)
                kkt.factor(W)
                lam = W.lam
                # affine direction
                u1 = kkt.solve(-c, b, h, opts.refine_steps)
                qu1 = c @ u1[0] + b @ u1[1] + h @ u1[2]

                def direction(eta_, ds, dk):
                    u2 = kkt.solve(-eta_ * r1, -eta_ * r2, -eta_ * r3 - W.apply(cones.div(lam, ds)),
                                   opts.refine_steps)
                    qu2 = c @ u2[0] + b @ u2[1] + h @ u2[2]
                    dtau = (dk + tau * (eta_ * r4 + qu2)) / (kap - tau * qu1)
                    dx = u2[0] + dtau * u1[0]
                    dy = u2[1] + dtau * u1[1]
                    dz = u2[2] + dtau * u1[2]
                    dsv = W.apply(cones.div(lam, ds)) - W.w2(dz)
                    dkap = (dk - kap * dtau) / tau
                    return dx, dy, dz, dsv, dtau, dkap

                lamlam = cones.prod(lam, lam)
                aff = direction(1.0, -lamlam, -tau * kap)
                if not all(np.all(np.isfinite(v)) for v in aff[:4]):
                    raise np.linalg.LinAlgError("non-finite direction")
                alpha_a = _step(cones, s, z, tau, kap, aff, 1.0)
                sigma = (1.0 - alpha_a) ** 3
                ds_corr = -lamlam - cones.prod(W.apply(aff[3], True), W.apply(aff[2])) + sigma * mu * cones.e
                dk_corr = -tau * kap - aff[4] * aff[5] + sigma * mu
                step = direction(1.0 - sigma, ds_corr, dk_corr)
                if not all(np.all(np.isfinite(v)) for v in step[:4]):
                    raise np.linalg.LinAlgError("non-finite direction")
                alpha = _step(cones, s, z, tau, kap, step, opts.step_fraction)
            except (np.linalg.LinAlgError, ValueError, FloatingPointError):
                status = SolveStatus.NUMERICAL_FAILURE
                break
        dx, dy, dz, dsv, dtau, dkap = step
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * dsv
        tau = tau + alpha * dtau
        kap = kap + alpha * dkap
        if alpha < 1e-12:
            status = SolveStatus.NUMERICAL_FAILURE
            break

    if trace:
        trace.close()
    if status is not SolveStatus.OPTIMAL and status not in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED) \
            and best is not None:
        _, x, y, z, s, tau, info = best
        status = SolveStatus.OPTIMAL
    if status is SolveStatus.OPTIMAL:
        x, y, z, s = x / tau, y / tau, z / tau, s / tau
    return SolveResult(status, x, y, z, s, info, it, float(prog.c @ x), history)


def _step(cones, s, z, tau, kap, d, frac):
    dx, dy, dz, dsv, dtau, dkap = d
    a = min(cones.max_step(s, dsv), cones.max_step(z, dz))
    if dtau < 0:
        a = min(a, -tau / dtau)
    if dkap < 0:
        a = min(a, -kap / dkap)
    return min(1.0, frac * a)

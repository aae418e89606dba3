"""Primal-dual interior-point solver for linear cone programs.

Standard form:

    minimize    c'u + c0
    subject to  A u = b
                Gn u <= hn                      (componentwise)
                S_beta(u) >= 0 (PSD)            for each matrix block beta

where each slack matrix S_beta is affine in u with at most one variable per
entry: S[a, b] = const + coef * u[var]. Internally the PSD constraints are
handled in scaled vector (svec) coordinates so that all cones become one
product cone K: with s = (hn - Gn u, svec(S_1), svec(S_2), ...) the program
is  min c'u  s.t.  Au = b,  Gu + s = h,  s in K.

The algorithm is a Nesterov-Todd scaled Mehrotra predictor-corrector method:
at each iterate the scaling W with W z-bar = W^{-T} s-bar = lambda is
computed per block, the Newton system is reduced to dense normal equations
H = G' (W'W)^{-1} G, and steps are damped by a fraction of the distance to
the cone boundary. Deterministic: no randomization anywhere.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

# cached svec index data per matrix size: (rows, cols, weights)
_SVEC_CACHE: dict = {}


def svec_index(m: int):
    """Lower-triangle (row-major) svec indexing for symmetric m x m matrices.

    Returns (rows, cols, w) with w = sqrt(2) off the diagonal so that
    svec(A) . svec(B) = <A, B>_F.
    """
    hit = _SVEC_CACHE.get(m)
    if hit is None:
        rows, cols = np.tril_indices(m)
        w = np.where(rows == cols, 1.0, np.sqrt(2.0))
        hit = (rows, cols, w)
        _SVEC_CACHE[m] = hit
    return hit


def svec(M: np.ndarray) -> np.ndarray:
    rows, cols, w = svec_index(M.shape[-1])
    return M[..., rows, cols] * w


def smat(v: np.ndarray, m: int) -> np.ndarray:
    """Inverse of svec; supports batched input (..., ns)."""
    rows, cols, w = svec_index(m)
    out = np.zeros(v.shape[:-1] + (m, m), dtype=v.dtype)
    vals = v / w
    out[..., rows, cols] = vals
    out[..., cols, rows] = vals
    return out


@dataclass
class PsdBlock:
    """One slack matrix S(u) >= 0, entrywise S[a,b] = const + coef*u[var].

    Arrays are aligned with the svec slot order of `size` (lower triangle,
    row-major); var < 0 marks a constant entry.
    """

    size: int
    var: np.ndarray
    coef: np.ndarray
    const: np.ndarray

    @staticmethod
    def from_entries(size: int, entries: dict) -> "PsdBlock":
        """entries: (a, b) with a >= b -> (var, coef, const); missing = zero."""
        rows, cols, _ = svec_index(size)
        ns = rows.shape[0]
        var = np.full(ns, -1, dtype=np.int64)
        coef = np.zeros(ns)
        const = np.zeros(ns)
        pos = {(int(a), int(b)): t for t, (a, b) in enumerate(zip(rows, cols))}
        for (a, b), (v, cf, ct) in entries.items():
            t = pos[(max(a, b), min(a, b))]
            var[t] = v
            coef[t] = cf
            const[t] = ct
        return PsdBlock(size, var, coef, const)


@dataclass
class ConicProgram:
    """Cone program data; see module docstring for the standard form."""

    n_vars: int
    c: np.ndarray
    c0: float = 0.0
    # equalities A u = b, as triplet lists until finalized
    eq_rows: list = field(default_factory=list)
    eq_rhs: list = field(default_factory=list)
    # nonnegative rows  row . u <= rhs
    nn_rows: list = field(default_factory=list)
    nn_rhs: list = field(default_factory=list)
    blocks: list = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        if self.c.shape != (self.n_vars,):
            raise ValueError("objective vector has wrong length")

    def add_equality_row(self, cols, vals, rhs: float):
        self.eq_rows.append((np.asarray(cols, dtype=np.int64),
                             np.asarray(vals, dtype=float)))
        self.eq_rhs.append(float(rhs))

    def add_nonneg_row(self, cols, vals, rhs: float):
        self.nn_rows.append((np.asarray(cols, dtype=np.int64),
                             np.asarray(vals, dtype=float)))
        self.nn_rhs.append(float(rhs))

    def add_psd_block(self, block: PsdBlock):
        if block.size < 1:
            raise ValueError("empty PSD block")
        self.blocks.append(block)

    @property
    def n_eq(self) -> int:
        return len(self.eq_rows)

    @property
    def n_nonneg(self) -> int:
        return len(self.nn_rows)

    def _triplet_matrix(self, rows) -> sp.csr_matrix:
        data, ri, ci = [], [], []
        for k, (cols, vals) in enumerate(rows):
            ri.extend([k] * len(cols))
            ci.extend(cols.tolist())
            data.extend(vals.tolist())
        return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), self.n_vars))

    def eq_matrix(self) -> sp.csr_matrix:
        return self._triplet_matrix(self.eq_rows)

    def nn_matrix(self) -> sp.csr_matrix:
        return self._triplet_matrix(self.nn_rows)

    def to_debug_json(self) -> str:
        """JSON dump of the program structure, for debugging and tests.

        Linear parts in triplet form {"row", "col", "val"}; PSD blocks list
        their size and per-slot (slot, var, coef, const) entries, slots in
        lower-triangle row-major order.
        """
        def triplets(rows, rhs):
            out = []
            for k, (cols, vals) in enumerate(rows):
                out.append({
                    "rhs": rhs[k],
                    "terms": [{"col": int(c), "val": float(v)}
                              for c, v in zip(cols, vals)],
                })
            return out

        doc = {
            "n_vars": self.n_vars,
            "objective": {"c": self.c.tolist(), "c0": self.c0},
            "equalities": triplets(self.eq_rows, self.eq_rhs),
            "nonneg_rows": triplets(self.nn_rows, self.nn_rhs),
            "psd_blocks": [
                {
                    "size": blk.size,
                    "entries": [
                        {"slot": int(t), "var": int(blk.var[t]),
                         "coef": float(blk.coef[t]), "const": float(blk.const[t])}
                        for t in range(blk.var.shape[0])
                        if blk.var[t] >= 0 or blk.const[t] != 0.0
                    ],
                }
                for blk in self.blocks
            ],
        }
        return json.dumps(doc, indent=2)


@dataclass
class SolverSettings:
    max_iterations: int = 200
    feasibility_tol: float = 1e-8
    gap_tol: float = 1e-8
    step_fraction: float = 0.99
    refinement: int = 2
    # programs with at most this many variables run the KKT solves in
    # extended precision (x86 long double), which keeps the normal
    # equations factorizable far past the float64 conditioning wall
    extended_threshold: int = 300
    backend: str = "builtin"
    verbose: bool = False


@dataclass
class ConicSolution:
    status: str
    u: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    pcost: float
    dcost: float
    gap: float
    pres: float
    dres: float
    iterations: int
    log: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.pcost


def iteration_log_csv(sol: ConicSolution) -> str:
    lines = ["iter,pcost,dcost,gap,pres,dres,step"]
    for row in sol.log:
        lines.append("%d,%.12e,%.12e,%.9e,%.9e,%.9e,%.4f" % (
            row["iter"], row["pcost"], row["dcost"], row["gap"],
            row["pres"], row["dres"], row["step"]))
    return "\n".join(lines) + "\n"


class _BlockGroup:
    """Blocks of one size, batched: index arrays shaped (nb, ns)."""

    def __init__(self, size: int, blocks: list, offsets: list):
        self.m = size
        rows, cols, w = svec_index(size)
        self.ns = rows.shape[0]
        self.nb = len(blocks)
        self.var = np.stack([blk.var for blk in blocks])
        self.w = w
        # slack s_t = w_t*(const_t + coef_t*u[var]) and s = h - Gu, so the
        # G entry for a slot is -w*coef and h carries w*const
        self.gcoef = -np.stack([blk.coef for blk in blocks]) * w
        self.h = np.stack([blk.const for blk in blocks]) * w
        self.off = np.asarray(offsets, dtype=np.int64)
        self.slot = self.off[:, None] + np.arange(self.ns)[None, :]
        self.mask = self.var >= 0
        self.varc = np.where(self.mask, self.var, 0)
        # index grids for the symmetric Kronecker product
        self.ka = np.asarray(rows)
        self.kb = np.asarray(cols)

    def gather(self, vec: np.ndarray) -> np.ndarray:
        """(nb, ns) slice of an s-space vector."""
        return vec[self.slot]

    def mats(self, vec: np.ndarray) -> np.ndarray:
        return smat(self.gather(vec), self.m)

    def matvec_into(self, u: np.ndarray, out: np.ndarray):
        """out[slots] += G_beta u for every block in the group."""
        vals = np.where(self.mask, self.gcoef * u[self.varc], 0.0)
        out[self.slot.ravel()] += vals.ravel()

    def rmatvec_into(self, zvec: np.ndarray, out: np.ndarray):
        """out += G_beta' z restricted to this group."""
        zz = self.gather(zvec)
        contrib = (self.gcoef * zz)[self.mask]
        np.add.at(out, self.var[self.mask], contrib)


def _build_groups(prog: ConicProgram):
    sizes: dict = {}
    off = prog.n_nonneg
    order: dict = {}
    for blk in prog.blocks:
        sizes.setdefault(blk.size, []).append((blk, off))
        off += blk.size * (blk.size + 1) // 2
    groups = []
    for m in sorted(sizes):
        blocks = [b for b, _ in sizes[m]]
        offsets = [o for _, o in sizes[m]]
        groups.append(_BlockGroup(m, blocks, offsets))
    return groups, off


class _Scaling:
    """NT scaling state for one iteration."""

    def __init__(self, wn, lam_n, group_data):
        self.wn = wn                  # nonneg scaling sqrt(s/z)
        self.lam_n = lam_n
        self.groups = group_data      # per group: dict R, Rinv, lam (vector)


def _nt_scaling(groups, s, z, l_nn, dt=np.float64):
    """Compute the NT scaling at (s, z); requires strict interiority.

    The eigen/Cholesky work runs in float64 (LAPACK); results are stored in
    dt so that extended-precision KKT assembly stays internally consistent.
    """
    if l_nn:
        sn, zn = s[:l_nn], z[:l_nn]
        wn = np.sqrt(sn / zn)
        lam_n = np.sqrt(sn * zn)
    else:
        wn = np.zeros(0, dtype=dt)
        lam_n = np.zeros(0, dtype=dt)
    gdata = []
    for g in groups:
        S = np.asarray(g.mats(s), dtype=np.float64)
        Z = np.asarray(g.mats(z), dtype=np.float64)
        Ls = np.linalg.cholesky(S)
        M = np.swapaxes(Ls, -1, -2) @ Z @ Ls
        M = 0.5 * (M + np.swapaxes(M, -1, -2))
        d, Q = np.linalg.eigh(M)
        if np.any(d <= 0):
            raise np.linalg.LinAlgError("scaling eigenvalues not positive")
        R = Ls @ Q * (d[..., None, :] ** -0.25)
        Rinv = (d[..., :, None] ** 0.25) * np.swapaxes(Q, -1, -2) @ \
            np.linalg.inv(Ls)
        gdata.append({"R": R.astype(dt), "Rinv": Rinv.astype(dt),
                      "lam": np.sqrt(d).astype(dt)})
    return _Scaling(wn, lam_n, gdata)


def _sym_kron(P: np.ndarray, g: _BlockGroup) -> np.ndarray:
    """Batched symmetric Kronecker: K svec(M) = svec(P M P), K is (nb,ns,ns)."""
    a, b, w = g.ka, g.kb, g.w
    A1 = P[:, a[:, None], a[None, :]] * P[:, b[:, None], b[None, :]]
    A2 = P[:, a[:, None], b[None, :]] * P[:, b[:, None], a[None, :]]
    ww = w[:, None] * w[None, :]
    return 0.5 * ww * (A1 + A2)


def _apply_w(scaling, groups, l_nn, vec, mode):
    """Apply W ('w'), W' ('wt'), W^{-T} ('wit') blockwise to an s-space vector.

    W diag: nonneg part multiplies by wn (W = W' there); PSD part maps
    z -> svec(R' mat(z) R) for 'w', s -> svec(R^{-1} mat(s) R^{-T}) for
    'wit', v -> svec(R mat(v) R') for 'wt'.
    """
    out = np.empty_like(vec)
    if l_nn:
        wn = scaling.wn
        out[:l_nn] = vec[:l_nn] * (wn if mode in ("w", "wt") else 1.0 / wn)
    for g, gd in zip(groups, scaling.groups):
        M = g.mats(vec)
        R, Rinv = gd["R"], gd["Rinv"]
        Rt = np.swapaxes(R, -1, -2)
        Rit = np.swapaxes(Rinv, -1, -2)
        if mode == "w":
            res = Rt @ M @ R
        elif mode == "wt":
            res = R @ M @ Rt
        else:
            res = Rinv @ M @ Rit
        res = 0.5 * (res + np.swapaxes(res, -1, -2))
        out[g.slot.ravel()] = svec(res).ravel()
    return out


def _max_cone_step(groups, scaling, l_nn, scaled_dir):
    """Largest alpha with lambda + alpha*dir in the cone (dir in scaled space)."""
    alpha = np.inf
    if l_nn:
        d = scaled_dir[:l_nn]
        lam = scaling.lam_n
        neg = d < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-lam[neg] / d[neg])))
    for g, gd in zip(groups, scaling.groups):
        lam = gd["lam"]
        D = g.mats(scaled_dir)
        scale = 1.0 / np.sqrt(lam)
        T = D * scale[..., :, None] * scale[..., None, :]
        T = np.asarray(0.5 * (T + np.swapaxes(T, -1, -2)), dtype=np.float64)
        emin = float(np.min(np.linalg.eigvalsh(T)))
        if emin < 0:
            alpha = min(alpha, -1.0 / emin)
    return alpha


def _jordan_solve(scaling, groups, l_nn, d):
    """Solve lambda o v = d in scaled space."""
    v = np.empty_like(d)
    if l_nn:
        v[:l_nn] = d[:l_nn] / scaling.lam_n
    for g, gd in zip(groups, scaling.groups):
        lam = gd["lam"]
        D = g.mats(d)
        denom = 0.5 * (lam[..., :, None] + lam[..., None, :])
        v[g.slot.ravel()] = svec(D / denom).ravel()
    return v


def _jordan_prod(groups, l_nn, a, b):
    """a o b in scaled space ((AB + BA)/2 on PSD blocks)."""
    out = np.empty_like(a)
    if l_nn:
        out[:l_nn] = a[:l_nn] * b[:l_nn]
    for g in groups:
        A = g.mats(a)
        B = g.mats(b)
        P = 0.5 * (A @ B + B @ A)
        out[g.slot.ravel()] = svec(P).ravel()
    return out


def _lambda_vec(scaling, groups, l_nn, dim, dt=np.float64):
    lam = np.zeros(dim, dtype=dt)
    if l_nn:
        lam[:l_nn] = scaling.lam_n
    for g, gd in zip(groups, scaling.groups):
        lv = gd["lam"]
        M = np.zeros((g.nb, g.m, g.m), dtype=dt)
        idx = np.arange(g.m)
        M[:, idx, idx] = lv
        lam[g.slot.ravel()] = svec(M).ravel()
    return lam


def _chol_ext(H: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor for dtypes LAPACK does not cover (long double)."""
    L = np.tril(H)
    n = L.shape[0]
    for j in range(n):
        d = L[j, j] - L[j, :j] @ L[j, :j]
        if d <= 0:
            raise np.linalg.LinAlgError("matrix not positive definite")
        d = np.sqrt(d)
        L[j, j] = d
        if j + 1 < n:
            L[j + 1:, j] = (L[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / d
    return L


def _cho_solve_ext(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L L' x = b by substitution; b may have trailing columns."""
    x = np.array(b, dtype=L.dtype, copy=True)
    n = L.shape[0]
    for j in range(n):
        x[j] = (x[j] - L[j, :j] @ x[:j]) / L[j, j]
    for j in range(n - 1, -1, -1):
        x[j] = (x[j] - L[j + 1:, j] @ x[j + 1:]) / L[j, j]
    return x


class _KktSolver:
    """Factorizes the reduced saddle system for a fixed scaling."""

    def __init__(self, prog, groups, Gn, A, scaling, dtype=np.float64):
        n = prog.n_vars
        self.ext = dtype != np.float64
        H = np.zeros((n, n), dtype=dtype)
        if Gn is not None and Gn.shape[0]:
            d = 1.0 / (scaling.wn ** 2)
            if sp.issparse(Gn):
                Hn = (Gn.T @ Gn.multiply(np.asarray(d, dtype=np.float64)[:, None])).toarray()
            else:
                Hn = Gn.T @ (Gn * d[:, None])
            H += Hn
        for g, gd in zip(groups, scaling.groups):
            Rinv = gd["Rinv"]
            Winv = np.swapaxes(Rinv, -1, -2) @ Rinv   # W_nt^{-1}
            K = _sym_kron(Winv, g)
            gc = np.where(g.mask, g.gcoef, 0.0)
            C = K * gc[:, :, None] * gc[:, None, :]
            np.add.at(H, (g.varc[:, :, None], g.varc[:, None, :]), C)
        self.cho = None
        self.reg_used = 0.0
        scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
        eps = (1e-30 if self.ext else 1e-14) * scale
        for _ in range(6):
            try:
                self.cho = _chol_ext(H) if self.ext else \
                    sla.cho_factor(H, lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                H[np.diag_indices_from(H)] += eps
                self.reg_used += eps
                eps *= 100.0
        if self.cho is None:
            raise np.linalg.LinAlgError("normal equations not positive definite")
        self.A = A
        if A is not None and A.shape[0]:
            At = A.toarray().T if sp.issparse(A) else np.asarray(A.T, dtype=dtype)
            HiAt = self._base_solve(At)
            S = At.T @ HiAt
            S = 0.5 * (S + S.T)
            scale_s = max(1.0, float(np.max(np.abs(np.diag(S)))))
            eps = (1e-30 if self.ext else 1e-14) * scale_s
            self.schur = None
            for _ in range(6):
                try:
                    self.schur = _chol_ext(S) if self.ext else \
                        sla.cho_factor(S, lower=True, check_finite=False)
                    break
                except np.linalg.LinAlgError:
                    S[np.diag_indices_from(S)] += eps
                    eps *= 100.0
            if self.schur is None:
                raise np.linalg.LinAlgError("equality Schur complement singular")
            self.HiAt = HiAt
        else:
            self.schur = None
            self.HiAt = None

    def _base_solve(self, r):
        if self.ext:
            return _cho_solve_ext(self.cho, r)
        return sla.cho_solve(self.cho, r, check_finite=False)

    def _schur_solve(self, r):
        if self.ext:
            return _cho_solve_ext(self.schur, r)
        return sla.cho_solve(self.schur, r, check_finite=False)

    def solve(self, r1, r2):
        """Solve [H A'; A 0] [du; dy] = [r1; r2]."""
        w = self._base_solve(r1)
        if self.schur is not None:
            rhs = self.HiAt.T @ r1 - r2
            dy = self._schur_solve(rhs)
            du = w - self.HiAt @ dy
            return du, dy
        return w, np.zeros(0)


def solve_conic(prog: ConicProgram, settings: SolverSettings | None = None) -> ConicSolution:
    """Solve a ConicProgram with the built-in interior-point method."""
    settings = settings or SolverSettings()
    if settings.backend != "builtin":
        backend = BACKENDS.get(settings.backend)
        if backend is None:
            raise ValueError(f"unknown solver backend {settings.backend!r}")
        return backend(prog, settings)

    n = prog.n_vars
    groups, sdim = _build_groups(prog)
    l_nn = prog.n_nonneg
    if sdim == 0:
        raise ValueError("program has no cone constraints")
    # extended precision pays off only when long double is truly wider
    dt = np.longdouble if (n <= settings.extended_threshold
                           and np.finfo(np.longdouble).eps < 1e-17) else np.float64
    Gn = prog.nn_matrix() if l_nn else None
    if Gn is not None and dt != np.float64:
        Gn = Gn.toarray().astype(dt)
    hn = np.asarray(prog.nn_rhs, dtype=dt)
    A = prog.eq_matrix() if prog.n_eq else None
    if A is not None and dt != np.float64:
        A = A.toarray().astype(dt)
    b = np.asarray(prog.eq_rhs, dtype=dt)
    c = np.asarray(prog.c, dtype=dt)

    # cone order (for the barrier parameter)
    nu = l_nn + sum(g.nb * g.m for g in groups)

    h = np.zeros(sdim, dtype=dt)
    if l_nn:
        h[:l_nn] = hn
    for g in groups:
        h[g.slot.ravel()] = g.h.ravel()

    def G_mul(u):
        out = np.zeros(sdim, dtype=dt)
        if l_nn:
            out[:l_nn] = Gn @ u
        for g in groups:
            g.matvec_into(u, out)
        return out

    def GT_mul(zv):
        out = np.zeros(n, dtype=dt)
        if l_nn:
            out += Gn.T @ zv[:l_nn]
        for g in groups:
            g.rmatvec_into(zv, out)
        return out

    def A_mul(u):
        return A @ u if A is not None else np.zeros(0, dtype=dt)

    def AT_mul(yv):
        return A.T @ yv if A is not None else np.zeros(n, dtype=dt)

    def shift_into_cone(vec):
        """vec + (1 + alpha) e if vec is not safely interior."""
        margin = np.inf
        if l_nn:
            margin = min(margin, float(np.min(vec[:l_nn])))
        for g in groups:
            M = np.asarray(g.mats(vec), dtype=np.float64)
            margin = min(margin, float(np.min(np.linalg.eigvalsh(M))))
        if margin > 1e-8 * max(1.0, float(np.linalg.norm(vec))):
            return vec
        out = vec.copy()
        bump = 1.0 - min(margin, 0.0)
        if l_nn:
            out[:l_nn] += bump
        idx_cache = {}
        for g in groups:
            diag = idx_cache.get(g.m)
            if diag is None:
                rows, cols, _ = svec_index(g.m)
                diag = np.nonzero(rows == cols)[0]
                idx_cache[g.m] = diag
            out[(g.slot[:, diag]).ravel()] += bump
        return out

    # identity-scaled initial point
    id_scaling = _Scaling(np.ones(l_nn, dtype=dt), np.ones(l_nn, dtype=dt),
                          [{"R": np.broadcast_to(np.eye(g.m, dtype=dt), (g.nb, g.m, g.m)).copy(),
                            "Rinv": np.broadcast_to(np.eye(g.m, dtype=dt), (g.nb, g.m, g.m)).copy(),
                            "lam": np.ones((g.nb, g.m), dtype=dt)} for g in groups])
    kkt0 = _KktSolver(prog, groups, Gn, A, id_scaling, dtype=dt)
    u, yy = kkt0.solve(GT_mul(h), b)
    s = shift_into_cone(h - G_mul(u))
    nu_v, w_v = kkt0.solve(c, np.zeros(prog.n_eq, dtype=dt))
    y = -w_v
    z = shift_into_cone(-G_mul(nu_v))

    norm_b = 1.0 + np.linalg.norm(b)
    norm_h = 1.0 + np.linalg.norm(h)
    norm_c = 1.0 + np.linalg.norm(c)

    log: list = []
    status = "iteration_limit"
    it = 0
    step = 0.0
    stall = 0
    best = None  # (score, u, y, z, s, pcost, dcost, gap, pres, dres, relgap)

    for it in range(settings.max_iterations + 1):
        res_y = A_mul(u) - b
        res_z = G_mul(u) + s - h
        res_x = c + AT_mul(y) + GT_mul(z)
        gap = float(s @ z)
        pcost = float(c @ u)
        dcost = float(-h @ z - (b @ y if prog.n_eq else 0.0))
        pres = max(
            float(np.linalg.norm(res_y)) / norm_b,
            float(np.linalg.norm(res_z)) / norm_h,
        )
        dres = float(np.linalg.norm(res_x)) / norm_c
        relgap = gap / max(1.0, abs(pcost))
        score = max(pres, dres, relgap)
        log.append({"iter": it, "pcost": pcost + prog.c0, "dcost": dcost + prog.c0,
                    "gap": gap, "pres": pres, "dres": dres, "step": step})
        if settings.verbose:
            print(f"it {it:3d} p {pcost + prog.c0: .6e} d {dcost + prog.c0: .6e} "
                  f"gap {gap:.2e} pres {pres:.2e} dres {dres:.2e} step {step:.3f}")
        if best is None or score < best[0]:
            best = (score, u.copy(), y.copy(), z.copy(), s.copy(),
                    pcost, dcost, gap, pres, dres, relgap)

        ftol, gtol = settings.feasibility_tol, settings.gap_tol
        if pres <= ftol and dres <= ftol and relgap <= gtol:
            status = "optimal"
            break

        # infeasibility certificates from the current iterate
        by_hz = float(h @ z + (b @ y if prog.n_eq else 0.0))
        if by_hz < -1e-10:
            cert = float(np.linalg.norm(AT_mul(y) + GT_mul(z))) / (-by_hz)
            if cert * norm_h <= ftol * 10:
                status = "infeasible"
                break
        if pcost < -1e-10:
            ray = max(float(np.linalg.norm(A_mul(u))),
                      float(np.linalg.norm(G_mul(u) + s)))
            if ray / (-pcost) * norm_c <= ftol * 10:
                status = "unbounded"
                break
        if it == settings.max_iterations:
            break
        if it > 5 and score > max(1e5 * best[0], 1e-2):
            break  # diverging; the best iterate is returned below

        try:
            scaling = _nt_scaling(groups, s, z, l_nn, dt)
            kkt = _KktSolver(prog, groups, Gn, A, scaling, dtype=dt)
        except np.linalg.LinAlgError:
            break

        lam = _lambda_vec(scaling, groups, l_nn, sdim, dt)
        mu = gap / nu

        def kkt_step(rx, ry, rz_vec, dsc):
            """Return (du, dy, dz, ds) for the Newton system with rhs
            (-rx, -ry, -rz) and complementarity target dsc (scaled space).

            ds is recovered from the cone equation G du + ds = -rz rather
            than through W, which keeps the primal residual exact even when
            the scaling is ill-conditioned near convergence.
            """
            v = _jordan_solve(scaling, groups, l_nn, dsc)
            bz = -rz_vec - _apply_w(scaling, groups, l_nn, v, "wt")
            r1 = -rx + GT_mul(_apply_winv2(scaling, groups, l_nn, bz))
            du, dy = kkt.solve(r1, -ry)
            for _ in range(settings.refinement):
                e1 = r1 - _H_mul(du) - AT_mul(dy)
                e2 = -ry - A_mul(du)
                c1, c2 = kkt.solve(e1, e2)
                du = du + c1
                dy = dy + c2
            dz = _apply_winv2(scaling, groups, l_nn, G_mul(du) - bz)
            ds = -rz_vec - G_mul(du)
            return du, dy, dz, ds

        def _H_mul(du):
            return GT_mul(_apply_winv2(scaling, groups, l_nn, G_mul(du)))

        # predictor
        ds_aff_target = -_jordan_prod(groups, l_nn, lam, lam)
        try:
            du_a, dy_a, dz_a, ds_a = kkt_step(res_x, res_y, res_z, ds_aff_target)
        except np.linalg.LinAlgError:
            break
        rho = _apply_w(scaling, groups, l_nn, ds_a, "wit")
        sig = _apply_w(scaling, groups, l_nn, dz_a, "w")
        amax = min(_max_cone_step(groups, scaling, l_nn, rho),
                   _max_cone_step(groups, scaling, l_nn, sig))
        alpha_aff = min(1.0, amax)
        gap_aff = float((s + alpha_aff * ds_a) @ (z + alpha_aff * dz_a))
        sigma = min(1.0, max(0.0, gap_aff / gap)) ** 3

        # combined corrector step
        e_vec = _cone_identity(groups, l_nn, sdim, dt)
        corr = _jordan_prod(groups, l_nn, rho, sig)
        ds_comb = -_jordan_prod(groups, l_nn, lam, lam) - corr + sigma * mu * e_vec
        scale_r = 1.0 - sigma
        try:
            du, dy, dz, ds = kkt_step(scale_r * res_x, scale_r * res_y,
                                      scale_r * res_z, ds_comb)
        except np.linalg.LinAlgError:
            break
        rho = _apply_w(scaling, groups, l_nn, ds, "wit")
        sig = _apply_w(scaling, groups, l_nn, dz, "w")
        amax = min(_max_cone_step(groups, scaling, l_nn, rho),
                   _max_cone_step(groups, scaling, l_nn, sig))
        step = min(1.0, settings.step_fraction * amax)
        if step <= 1e-10:
            break
        stall = stall + 1 if step < 1e-5 else 0
        if stall >= 3:
            break
        u = u + step * du
        y = y + step * dy
        z = z + step * dz
        s = s + step * ds

    else:  # pragma: no cover
        pass

    if status == "iteration_limit" and best is not None:
        # fall back to the best iterate seen
        _, u, y, z, s, pcost, dcost, gap, pres, dres, relgap = best
        ftol, gtol = settings.feasibility_tol, settings.gap_tol
        if pres <= ftol and dres <= ftol and relgap <= gtol:
            status = "optimal"
        elif pres <= 100 * ftol and dres <= 100 * ftol and relgap <= 100 * gtol:
            status = "near_optimal"

    return ConicSolution(status=status,
                         u=np.asarray(u, dtype=np.float64),
                         y=np.asarray(y, dtype=np.float64),
                         z=np.asarray(z, dtype=np.float64),
                         s=np.asarray(s, dtype=np.float64),
                         pcost=pcost + prog.c0, dcost=dcost + prog.c0,
                         gap=gap, pres=pres, dres=dres, iterations=it, log=log)


def _apply_winv2(scaling, groups, l_nn, vec):
    """Apply (W'W)^{-1}: nonneg scale z/s; PSD map M -> Winv M Winv."""
    out = np.empty_like(vec)
    if l_nn:
        out[:l_nn] = vec[:l_nn] / (scaling.wn ** 2)
    for g, gd in zip(groups, scaling.groups):
        Rinv = gd["Rinv"]
        Winv = np.swapaxes(Rinv, -1, -2) @ Rinv
        M = g.mats(vec)
        res = Winv @ M @ Winv
        res = 0.5 * (res + np.swapaxes(res, -1, -2))
        out[g.slot.ravel()] = svec(res).ravel()
    return out


def _cone_identity(groups, l_nn, dim, dt=np.float64):
    e = np.zeros(dim, dtype=dt)
    if l_nn:
        e[:l_nn] = 1.0
    for g in groups:
        M = np.broadcast_to(np.eye(g.m), (g.nb, g.m, g.m))
        e[g.slot.ravel()] = svec(M).ravel()
    return e


def kkt_residuals(prog: ConicProgram, sol: ConicSolution) -> dict:
    """Recompute optimality residuals of a solution from scratch.

    Returns primal equality/cone violations, dual residual, dual cone
    violation and the complementarity gap. Cone violations are the most
    negative slack (0 when inside the cone).
    """
    groups, sdim = _build_groups(prog)
    l_nn = prog.n_nonneg
    u, y, z, s = sol.u, sol.y, sol.z, sol.s
    A = prog.eq_matrix() if prog.n_eq else None
    b = np.asarray(prog.eq_rhs, dtype=float)
    Gn = prog.nn_matrix() if l_nn else None
    h = np.zeros(sdim)
    if l_nn:
        h[:l_nn] = np.asarray(prog.nn_rhs, dtype=float)
    Gu = np.zeros(sdim)
    if l_nn:
        Gu[:l_nn] = Gn @ u
    for g in groups:
        h[g.slot.ravel()] = g.h.ravel()
        g.matvec_into(u, Gu)

    def cone_min(vec):
        worst = np.inf
        if l_nn:
            worst = min(worst, float(np.min(vec[:l_nn])))
        for g in groups:
            worst = min(worst, float(np.min(np.linalg.eigvalsh(g.mats(vec)))))
        return worst if worst is not np.inf else 0.0

    dual = prog.c + (A.T @ y if A is not None else 0.0)
    if l_nn:
        dual = dual + Gn.T @ z[:l_nn]
    for g in groups:
        g.rmatvec_into(z, dual)

    return {
        "primal_eq": float(np.linalg.norm(A @ u - b, np.inf)) if A is not None else 0.0,
        "primal_cone": max(0.0, -cone_min(h - Gu)),
        "slack_consistency": float(np.linalg.norm(Gu + s - h, np.inf)),
        "dual": float(np.linalg.norm(dual, np.inf)),
        "dual_cone": max(0.0, -cone_min(z)),
        "complementarity": abs(float(s @ z)),
    }


BACKENDS: dict = {}


def register_backend(name: str, fn):
    """Register an alternative cone solver: fn(prog, settings) -> ConicSolution."""
    BACKENDS[name] = fn

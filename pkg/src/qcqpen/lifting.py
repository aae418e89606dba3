"""Semidefinite relaxations of QCQPs over partial matrix liftings.

Each quadratic q(x) = x'Ax + 2b'x + c becomes the affine functional
qbar(x, X) = <A, X> + 2b'x + c in the lifted variables (x, X), and the
nonconvex coupling X = xx' is relaxed to "every r x r principal submatrix
of X - xx' is PSD", imposed through Schur blocks

    [[1, x_K'], [x_K, X_KK]]  >=  0

for variable subsets K. r = n gives the full semidefinite relaxation
(one block over all variables); r = 2 gives one 3x3 block per stored
off-diagonal pair plus 2x2 blocks for isolated diagonal entries. Entries
of X that appear in no quadratic term can be dropped entirely (sparsity),
which shrinks the cone without changing the bound.

Optional tightening rows: box-derived cuts on the diagonal

    X_ii - (lb+ub) x_i + lb*ub <= 0        (lb,ub)
    X_ii - 2 ub x_i + ub^2    >= 0         (ub,ub)
    X_ii - 2 lb x_i + lb^2    >= 0         (lb,lb)

and reformulation-linearization (RLT) products of affine constraint pairs.

The penalized variant adds eta * (tr X - 2 xhat'x + xhat'xhat) to the
objective, a proximal term that vanishes exactly on rank-one liftings at
x = xhat; minimizers with X = xx' are feasible for the original QCQP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quadratics import QcqpProblem, QuadraticFunction
from .solver import ConicProgram, ConicSolution, PsdBlock

_ENTRY_TOL = 0.0  # exact-zero sparsity test; callers control their own rounding


@dataclass
class RelaxationConfig:
    """r: submatrix order (None means n). bound_cuts: add box-diagonal cuts.
    rlt_pairs: None, "all", or explicit list of affine-row index pairs.
    sparsity: drop lifted entries appearing in no term (r = 2 only).
    subsets: explicit list of variable subsets for 2 < r < n."""

    r: int | None = None
    bound_cuts: bool = False
    rlt_pairs: object = None
    sparsity: bool = True
    subsets: list | None = None


@dataclass
class LiftedPoint:
    x: np.ndarray
    X: np.ndarray
    objective: float
    residual: float


@dataclass
class ExtractionMap:
    n: int
    X_index: dict
    diag_stored: list
    problem: QcqpProblem
    stored_pairs: list = field(default_factory=list)


def rlt_system(p: QcqpProblem):
    """Stack the affine constraints of p as H x + h <= 0.

    Rows: affine inequalities (2b_k', c_k), then affine equalities, then the
    negated affine equalities, so that every row is a valid <= 0 functional
    equal to +-q_k(x). Returns (H, h) with shapes (m, n), (m,).
    """
    rows, rhs = [], []
    for q in p.inequalities:
        if q.is_affine():
            rows.append(2.0 * q.b)
            rhs.append(q.c)
    eq_rows = [(2.0 * q.b, q.c) for q in p.equalities if q.is_affine()]
    for r, cc in eq_rows:
        rows.append(r)
        rhs.append(cc)
    for r, cc in eq_rows:
        rows.append(-r)
        rhs.append(-cc)
    if not rows:
        return np.zeros((0, p.n)), np.zeros(0)
    return np.vstack(rows), np.asarray(rhs)


def rlt_pair_list(m: int):
    """All unordered row pairs (i, j), i <= j: m(m+1)/2 of them."""
    return [(i, j) for i in range(m) for j in range(i, m)]


def rlt_cuts(p: QcqpProblem, pairs="all"):
    """Lifted products of affine constraint rows.

    For rows i, j of Hx + h <= 0 the product (H_i x + h_i)(H_j x + h_j) is
    nonnegative on the feasible set; its lifting is the functional
    qbar_c(x, X) >= 0 with

        A_c = sym(H_i H_j'),  b_c = (h_i H_j + h_j H_i)/2,  c_c = h_i h_j.

    Returns a list of ((i, j), QuadraticFunction) in deterministic order.
    """
    H, h = rlt_system(p)
    m = H.shape[0]
    if pairs == "all":
        pairs = rlt_pair_list(m)
    out = []
    for (i, j) in pairs:
        if not (0 <= i < m and 0 <= j < m):
            raise ValueError(f"RLT pair {(i, j)} out of range for {m} rows")
        A = 0.5 * (np.outer(H[i], H[j]) + np.outer(H[j], H[i]))
        b = 0.5 * (h[i] * H[j] + h[j] * H[i])
        out.append(((i, j), QuadraticFunction(A, b, h[i] * h[j])))
    return out


def _gather_terms(p: QcqpProblem, cuts) -> list:
    terms = [p.objective] + p.constraints
    terms.extend(q for _, q in cuts)
    return terms


def _stored_entries(p, cfg, cuts, penalized: bool):
    """Decide which X entries exist: returns (pairs, diags) sorted."""
    n = p.n
    r = cfg.r if cfg.r is not None else n
    if cfg.subsets is not None:
        if not (2 <= r <= n):
            raise ValueError(f"subset order r={r} outside [2, {n}]")
        pairs, diags = set(), set()
        for K in cfg.subsets:
            K = sorted(set(int(i) for i in K))
            if len(K) != r:
                raise ValueError("every subset must have exactly r variables")
            if K[0] < 0 or K[-1] >= n:
                raise ValueError("subset variable out of range")
            diags.update(K)
            pairs.update((a, b) for ai, a in enumerate(K) for b in K[ai + 1:])
    elif r == n:
        pairs = {(i, j) for i in range(n) for j in range(i + 1, n)}
        diags = set(range(n))
    elif r == 2:
        if not cfg.sparsity:
            pairs = {(i, j) for i in range(n) for j in range(i + 1, n)}
            diags = set(range(n))
        else:
            pairs, diags = set(), set()
            for q in _gather_terms(p, cuts):
                nz = np.argwhere(q.A != 0.0)
                for a, b in nz:
                    if a == b:
                        diags.add(int(a))
                    else:
                        pairs.add((int(min(a, b)), int(max(a, b))))
            if cfg.bound_cuts:
                diags.update(_bound_cut_vars(p))
            diags.update(i for ij in pairs for i in ij)
    else:
        raise ValueError(
            f"r={r} requires an explicit subset list (only r=2 and r=n "
            "have automatic block patterns)")
    if penalized:
        diags = set(range(n)) | diags
    return sorted(pairs), sorted(diags)


def _bound_cut_vars(p: QcqpProblem):
    out = []
    if not p.has_bounds():
        return out
    lb = p.lb if p.lb is not None else np.full(p.n, -np.inf)
    ub = p.ub if p.ub is not None else np.full(p.n, np.inf)
    for i in range(p.n):
        if np.isfinite(lb[i]) or np.isfinite(ub[i]):
            out.append(i)
    return out


class _Lifter:
    """Maps quadratic functions to rows over u = (x, stored X entries)."""

    def __init__(self, p, pairs, diags):
        self.n = p.n
        self.X_index = {}
        k = p.n
        for i in diags:
            self.X_index[(i, i)] = k
            k += 1
        for (i, j) in pairs:
            self.X_index[(i, j)] = k
            k += 1
        self.n_vars = k

    def row(self, q: QuadraticFunction):
        """(cols, vals, const) with qbar(x, X) = cols.vals@u + const."""
        cols, vals = [], []
        for i in range(self.n):
            if q.b[i] != 0.0:
                cols.append(i)
                vals.append(2.0 * q.b[i])
        nz = np.argwhere(np.triu(q.A) != 0.0)
        for a, b in nz:
            a, b = int(a), int(b)
            key = (a, b)
            if key not in self.X_index:
                raise ValueError(
                    f"term X[{a},{b}] is not stored under this block pattern")
            cols.append(self.X_index[key])
            vals.append(q.A[a, b] if a == b else 2.0 * q.A[a, b])
        return cols, vals, q.c


def _add_blocks(prog, lifter, pairs, diags):
    in_pair = set()
    for (i, j) in pairs:
        in_pair.add(i)
        in_pair.add(j)
        entries = {
            (0, 0): (-1, 0.0, 1.0),
            (1, 0): (i, 1.0, 0.0),
            (2, 0): (j, 1.0, 0.0),
            (1, 1): (lifter.X_index[(i, i)], 1.0, 0.0),
            (2, 1): (lifter.X_index[(i, j)], 1.0, 0.0),
            (2, 2): (lifter.X_index[(j, j)], 1.0, 0.0),
        }
        prog.add_psd_block(PsdBlock.from_entries(3, entries))
    for i in diags:
        if i not in in_pair:
            entries = {
                (0, 0): (-1, 0.0, 1.0),
                (1, 0): (i, 1.0, 0.0),
                (1, 1): (lifter.X_index[(i, i)], 1.0, 0.0),
            }
            prog.add_psd_block(PsdBlock.from_entries(2, entries))


def _add_full_block(prog, lifter, n):
    entries = {(0, 0): (-1, 0.0, 1.0)}
    for i in range(n):
        entries[(i + 1, 0)] = (i, 1.0, 0.0)
        for j in range(i + 1):
            entries[(i + 1, j + 1)] = (lifter.X_index[(min(i, j), max(i, j))], 1.0, 0.0)
    prog.add_psd_block(PsdBlock.from_entries(n + 1, entries))


def _add_subset_blocks(prog, lifter, subsets):
    for K in subsets:
        K = sorted(set(int(i) for i in K))
        r = len(K)
        entries = {(0, 0): (-1, 0.0, 1.0)}
        for ai, a in enumerate(K):
            entries[(ai + 1, 0)] = (a, 1.0, 0.0)
            for bi, b in enumerate(K[:ai + 1]):
                entries[(ai + 1, bi + 1)] = (lifter.X_index[(min(a, b), max(a, b))], 1.0, 0.0)
        prog.add_psd_block(PsdBlock.from_entries(r + 1, entries))


def _build(p: QcqpProblem, cfg: RelaxationConfig, penalty=None):
    n = p.n
    r = cfg.r if cfg.r is not None else n
    if not (2 <= r <= n) and not (n == 1 and r in (1, 2, None)):
        raise ValueError(f"r={r} outside [2, n={n}]")
    cuts = []
    if cfg.rlt_pairs is not None:
        cuts = rlt_cuts(p, cfg.rlt_pairs)
    pairs, diags = _stored_entries(p, cfg, cuts, penalized=penalty is not None)
    lifter = _Lifter(p, pairs, diags)

    c = np.zeros(lifter.n_vars)
    cols, vals, c0 = lifter.row(p.objective)
    c[cols] = vals
    if penalty is not None:
        xhat, eta = penalty
        c[:n] -= 2.0 * eta * xhat
        for i in range(n):
            c[lifter.X_index[(i, i)]] += eta
        c0 += eta * float(xhat @ xhat)
    prog = ConicProgram(lifter.n_vars, c, c0)

    for q in p.inequalities:
        rc, rv, rconst = lifter.row(q)
        prog.add_nonneg_row(rc, rv, -rconst)
    for q in p.equalities:
        rc, rv, rconst = lifter.row(q)
        prog.add_equality_row(rc, rv, -rconst)

    if p.lb is not None:
        for i in range(n):
            if np.isfinite(p.lb[i]):
                prog.add_nonneg_row([i], [-1.0], -p.lb[i])
    if p.ub is not None:
        for i in range(n):
            if np.isfinite(p.ub[i]):
                prog.add_nonneg_row([i], [1.0], p.ub[i])

    if cfg.bound_cuts and p.has_bounds():
        lb = p.lb if p.lb is not None else np.full(n, -np.inf)
        ub = p.ub if p.ub is not None else np.full(n, np.inf)
        for i in range(n):
            di = lifter.X_index.get((i, i))
            if di is None:
                continue
            if np.isfinite(lb[i]) and np.isfinite(ub[i]):
                prog.add_nonneg_row([di, i], [1.0, -(lb[i] + ub[i])],
                                    -lb[i] * ub[i])
            if np.isfinite(ub[i]):
                prog.add_nonneg_row([di, i], [-1.0, 2.0 * ub[i]], ub[i] ** 2)
            if np.isfinite(lb[i]):
                prog.add_nonneg_row([di, i], [-1.0, 2.0 * lb[i]], lb[i] ** 2)

    for _, q in cuts:
        rc, rv, rconst = lifter.row(q)
        prog.add_nonneg_row(rc, [-v for v in rv], rconst)

    if cfg.subsets is not None:
        _add_subset_blocks(prog, lifter, cfg.subsets)
    elif r == n and n > 1:
        _add_full_block(prog, lifter, n)
    else:
        _add_blocks(prog, lifter, pairs, diags)

    emap = ExtractionMap(n=n, X_index=lifter.X_index, diag_stored=diags,
                         problem=p, stored_pairs=pairs)
    return prog, emap


def build_relaxation(p: QcqpProblem, cfg: RelaxationConfig | None = None):
    """Lifted relaxation of p; returns (ConicProgram, ExtractionMap).

    The optimum of the program lower-bounds the QCQP optimum.
    """
    return _build(p, cfg or RelaxationConfig())


def build_penalized(p: QcqpProblem, cfg: RelaxationConfig | None, xhat, eta: float):
    """Relaxation plus the proximal penalty eta*(tr X - 2 xhat'x + xhat'xhat).

    Same constraint rows as build_relaxation; every diagonal X_ii is stored
    so the trace term is complete (isolated variables get 2x2 blocks).
    eta must be positive.
    """
    if eta <= 0:
        raise ValueError("penalty parameter eta must be positive")
    xhat = np.asarray(xhat, dtype=float).ravel()
    if xhat.shape != (p.n,):
        raise ValueError("xhat has wrong dimension")
    return _build(p, cfg or RelaxationConfig(), penalty=(xhat, eta))


def extract(sol: ConicSolution, emap: ExtractionMap) -> LiftedPoint:
    """Read (x, X) off a solver solution and score it.

    residual = sum over stored diagonals of X_ii - x_i^2 = tr(X - xx')
    restricted to stored entries; >= 0 up to solver tolerance, and 0 exactly
    when the lifting is rank-one on the stored pattern. objective is the
    unpenalized lifted objective qbar0(x, X).
    """
    n = emap.n
    x = np.asarray(sol.u[:n], dtype=float).copy()
    X = np.zeros((n, n))
    for (i, j), k in emap.X_index.items():
        X[i, j] = sol.u[k]
        X[j, i] = sol.u[k]
    obj = emap.problem.objective
    lifted = float(np.tensordot(obj.A, X) + 2.0 * obj.b @ x + obj.c)
    residual = float(sum(X[i, i] - x[i] ** 2 for i in emap.diag_stored))
    return LiftedPoint(x=x, X=X, objective=lifted, residual=residual)

"""Shared instance generators for the test suite."""

import numpy as np

from qcqpen import QcqpProblem, QuadraticFunction

POLY_EXAMPLE = ("min a st a^5 - b^4 - c^4 + 2*a^3 + 2*a^2*b"
                " - 2*a*b^2 + 6*a*b*c - 2 = 0")

# extra polynomial problems for the reformulation suites
POLY_EXTRA = [
    "min x^4 + y^4 - 3*x*y st x^2 + y^2 - 4 <= 0",
    "min a^3*b - 2*a*b + b^2 st a*b*c - 1 = 0 ; a^2 + b^2 + c^2 - 9 <= 0",
    "min 2*u^5 - u^2*v^2 + v st u^2 - v <= 0 ; u + v - 3 = 0",
    "min x*y*z*w st x^2 + y^2 - 1 = 0 ; z^2 + w^2 - 1 <= 0",
]


def rand_quad(rng, n, scale=1.0):
    M = rng.normal(size=(n, n))
    A = 0.5 * (M + M.T) * scale / np.sqrt(n)
    b = rng.normal(size=n) * scale
    return A, b


def constraint_through(A, b, x, margin=0.0):
    """Quadratic with q(x) = -margin (binding at x when margin is 0)."""
    val = float(x @ A @ x + 2.0 * b @ x)
    return QuadraticFunction(A, b, -val - margin)


def random_feasible_qcqp(seed):
    """Random QCQP with a known feasible point satisfying LICQ.

    Returns (problem, xstar). One or two inequalities are binding at
    xstar, the rest hold with a margin, equalities hold exactly; the
    binding gradients are rejected until numerically independent.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    while True:
        xstar = rng.normal(size=n)
        n_eq = int(rng.integers(0, 2)) if n >= 3 else 0
        n_bind = int(rng.integers(1, 3)) if n >= 4 else 1
        ineqs, binding = [], []
        for _ in range(n_bind):
            A, b = rand_quad(rng, n)
            q = constraint_through(A, b, xstar)
            ineqs.append(q)
            binding.append(q)
        for _ in range(int(rng.integers(1, 3))):
            A, b = rand_quad(rng, n)
            ineqs.append(constraint_through(A, b, xstar,
                                            margin=0.5 + rng.random()))
        eqs = []
        for _ in range(n_eq):
            A, b = rand_quad(rng, n)
            q = constraint_through(A, b, xstar)
            eqs.append(q)
            binding.append(q)
        J = np.array([q.gradient(xstar) for q in binding])
        sv = np.linalg.svd(J, compute_uv=False)
        if sv[-1] > 1e-3 * max(sv[0], 1.0):
            break
    A0, b0 = rand_quad(rng, n)
    p = QcqpProblem(n=n, objective=QuadraticFunction(A0, b0, 0.0),
                    inequalities=ineqs, equalities=eqs,
                    name=f"feas{seed}")
    return p, xstar


def random_box_qcqp(seed, n=3, affine_rows=2):
    """Box-bounded QCQP with interior feasible anchor z.

    A ball constraint around z keeps the feasible set nonempty; a couple
    of affine rows give the RLT machinery something to multiply.
    """
    rng = np.random.default_rng(seed)
    half = 1.5 + rng.random(n)
    z = rng.uniform(-0.4, 0.4, size=n) * half
    rho = 0.6 + 0.5 * rng.random()
    ineqs = [QuadraticFunction(np.eye(n), -z, float(z @ z) - rho ** 2)]
    for _ in range(int(rng.integers(1, 3))):
        A, b = rand_quad(rng, n)
        ineqs.append(constraint_through(A, b, z, margin=0.4 + rng.random()))
    for _ in range(affine_rows):
        g = rng.normal(size=n)
        c = -2.0 * float(g @ z) - 0.5 - rng.random()
        ineqs.append(QuadraticFunction(np.zeros((n, n)), g, c))
    A0, b0 = rand_quad(rng, n)
    p = QcqpProblem(n=n, objective=QuadraticFunction(A0, b0, 0.0),
                    inequalities=ineqs, lb=-half, ub=half,
                    name=f"box{seed}")
    return p, z


def sample_feasible(p, anchor, rng, count, spread=0.15, max_tries=20000):
    """Rejection-sample `count` feasible points near the anchor."""
    out = []
    for _ in range(max_tries):
        x = anchor + spread * rng.normal(size=p.n)
        if p.violation(x) <= 1e-9:
            out.append(x)
            if len(out) == count:
                break
    return out


def random_2var_qcqp(seed):
    """Two-variable instance with compact feasible set inside [-2, 2]^2."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(-0.8, 0.8, size=2)
    rho = 0.9 + 0.5 * rng.random()
    ineqs = [QuadraticFunction(np.eye(2), -z, float(z @ z) - rho ** 2)]
    A, b = rand_quad(rng, 2)
    ineqs.append(constraint_through(A, b, z, margin=0.3 + 0.5 * rng.random()))
    A0 = rng.normal(size=(2, 2))
    A0 = 0.5 * (A0 + A0.T)
    b0 = rng.normal(size=2)
    p = QcqpProblem(n=2, objective=QuadraticFunction(A0, b0, 0.0),
                    inequalities=ineqs,
                    lb=np.full(2, -2.0), ub=np.full(2, 2.0),
                    name=f"g{seed}")
    return p


def quad_values(q, P):
    """q at each row of P, vectorized."""
    return np.einsum("ni,ij,nj->n", P, q.A, P) + 2.0 * P @ q.b + q.c


def grid_minimum_2d(p, step=1e-3, chunk=200):
    """Brute-force objective minimum over the feasible grid points."""
    xs = np.arange(p.lb[0], p.ub[0] + 0.5 * step, step)
    ys = np.arange(p.lb[1], p.ub[1] + 0.5 * step, step)
    best, arg = np.inf, None
    for k in range(0, xs.size, chunk):
        X, Y = np.meshgrid(xs[k:k + chunk], ys, indexing="ij")
        P = np.column_stack([X.ravel(), Y.ravel()])
        ok = np.ones(P.shape[0], dtype=bool)
        for q in p.inequalities:
            ok &= quad_values(q, P) <= 1e-9
        if not ok.any():
            continue
        vals = quad_values(p.objective, P[ok])
        j = int(np.argmin(vals))
        if vals[j] < best:
            best, arg = float(vals[j]), P[ok][j]
    return best, arg


def lifted_vector(emap, x, X=None):
    """Solver variable vector for the point (x, X); X defaults to xx'."""
    x = np.asarray(x, dtype=float)
    if X is None:
        X = np.outer(x, x)
    u = np.zeros(emap.n + len(emap.X_index))
    u[:emap.n] = x
    for (i, j), k in emap.X_index.items():
        u[k] = X[i, j]
    return u

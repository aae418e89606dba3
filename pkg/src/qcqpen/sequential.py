"""Sequential penalized relaxations: solve, re-center, repeat.

Round i builds the penalized relaxation at the current anchor xhat, solves
it, extracts x(i), and re-anchors. Two round indices are tracked:

    i_feas: first round whose lifting is tight, residual < tight_tol
            (then x(i) is feasible for the QCQP up to solver tolerance);
    i_stop: first round i >= 2 with rounds i-1 and i both tight and relative
            objective improvement (q0(x(i-1)) - q0(x(i))) / |q0(x(i))|
            at most stop_rel.

With a sufficiently large penalty eta every round is tight and the
objective sequence is nonincreasing, so the loop is a descent method over
feasible points. The penalty is either given or auto-tuned: the tuner
bisects a log-spaced grid for the smallest eta whose first six rounds are
all tight, falling back to a linear scan if tightness is not monotone in
eta across the evaluated candidates.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .lifting import RelaxationConfig, build_penalized, build_relaxation, extract
from .quadratics import QcqpProblem
from .solver import SolverSettings, solve_conic

_OK_STATUSES = ("optimal", "near_optimal")


class SolveError(RuntimeError):
    """A conic solve needed by the pipeline did not reach (near-)optimality."""

    def __init__(self, message: str, status: str = ""):
        super().__init__(message)
        self.status = status


class EtaTuningError(RuntimeError):
    """No grid candidate produced six consecutive tight rounds."""

    def __init__(self, message: str, tried: list):
        super().__init__(message)
        self.tried = tried


@dataclass
class SequentialConfig:
    relaxation: RelaxationConfig = field(default_factory=RelaxationConfig)
    eta: object = "auto"              # positive float or "auto"
    max_rounds: int = 100
    tight_tol: float = 1e-7
    stop_rel: float | None = 5e-4     # None disables early stopping
    init: object = "relaxation"       # "relaxation" | "zero" | vector
    solver: SolverSettings = field(default_factory=SolverSettings)
    tune_rounds: int = 6


@dataclass
class RoundRecord:
    i: int
    q0: float
    lifted_obj: float
    residual: float
    time_s: float
    solver_status: str


@dataclass
class SequentialTrace:
    rounds: list
    eta: float
    i_feas: int | None
    i_stop: int | None
    x_final: np.ndarray
    x_init: np.ndarray
    status: str                      # converged | max_rounds | solver_failure:*
    label: str = ""

    @property
    def objective(self) -> float:
        """q0 at the last computed round."""
        return self.rounds[-1].q0 if self.rounds else float("nan")

    def total_time(self) -> float:
        return sum(r.time_s for r in self.rounds)


def gap_percent(ub: float, ref: float) -> float:
    """100 (ub - ref) / |ref|; infinite when the reference is zero."""
    if ref == 0.0:
        return float("inf") if ub != 0.0 else 0.0
    return 100.0 * (ub - ref) / abs(ref)


def eta_grid() -> list:
    """Sorted candidates {a * 10^e : a in {1, 2, 5}, e in -3..4}."""
    vals = [a * 10.0 ** e for e in range(-3, 5) for a in (1.0, 2.0, 5.0)]
    return sorted(vals)


def resolve_initial_point(p: QcqpProblem, cfg: SequentialConfig) -> np.ndarray:
    init = cfg.init
    if isinstance(init, str):
        if init == "zero":
            return np.zeros(p.n)
        if init == "relaxation":
            prog, emap = build_relaxation(p, cfg.relaxation)
            sol = solve_conic(prog, cfg.solver)
            if sol.status not in _OK_STATUSES:
                raise SolveError(
                    f"initial relaxation solve ended with status {sol.status}",
                    sol.status)
            return extract(sol, emap).x
        raise ValueError(f"unknown initial point spec {init!r}")
    x0 = np.asarray(init, dtype=float).ravel()
    if x0.shape != (p.n,):
        raise ValueError("initial point has wrong dimension")
    return x0


def _round_solver_settings(cfg, eta):
    """Solver tolerances tight enough to certify residual < tight_tol.

    At a tight solution the trace residual is on the order of gap / eta, so
    the duality gap target is tied to the tightness tolerance.
    """
    s = cfg.solver
    gap_needed = max(1e-13, 0.05 * eta * cfg.tight_tol)
    if gap_needed >= s.gap_tol:
        return s
    return replace(s, gap_tol=gap_needed)


def _run_rounds(p, cfg, xhat, eta, max_rounds, stop_rel):
    """Core loop; returns (rounds, i_feas, i_stop, x, status)."""
    rounds = []
    i_feas = None
    i_stop = None
    prev_q0 = None
    prev_tight = False
    status = "max_rounds"
    x = xhat
    solver_settings = _round_solver_settings(cfg, eta)
    for i in range(1, max_rounds + 1):
        t0 = time.perf_counter()
        prog, emap = build_penalized(p, cfg.relaxation, x, eta)
        sol = solve_conic(prog, solver_settings)
        dt = time.perf_counter() - t0
        if sol.status not in _OK_STATUSES:
            rounds.append(RoundRecord(i, float("nan"), float("nan"),
                                      float("nan"), dt, sol.status))
            status = f"solver_failure:{sol.status}"
            break
        pt = extract(sol, emap)
        q0 = p.objective.value(pt.x)
        rounds.append(RoundRecord(i, q0, pt.objective, pt.residual, dt,
                                  sol.status))
        tight = pt.residual < cfg.tight_tol
        if i_feas is None and tight:
            i_feas = i
        if (stop_rel is not None and tight and prev_tight
                and prev_q0 is not None):
            rel = (prev_q0 - q0) / max(abs(q0), 1e-12)
            if rel <= stop_rel:
                i_stop = i
                status = "converged"
                x = pt.x
                break
        prev_q0, prev_tight = q0, tight
        x = pt.x
    return rounds, i_feas, i_stop, x, status


def tune_eta(p: QcqpProblem, cfg: SequentialConfig, x0=None) -> float:
    """Smallest grid eta whose first `tune_rounds` rounds are all tight.

    Bisects the sorted grid assuming tightness is monotone in eta; if the
    evaluations contradict monotonicity, rescans linearly from the small
    end. Raises EtaTuningError when even the largest candidate fails.
    """
    grid = eta_grid()
    if x0 is None:
        x0 = resolve_initial_point(p, cfg)
    memo: dict = {}

    def tight_at(idx: int) -> bool:
        if idx not in memo:
            rounds, i_feas, _, _, status = _run_rounds(
                p, cfg, x0, grid[idx], cfg.tune_rounds, stop_rel=None)
            ok = (len(rounds) == cfg.tune_rounds
                  and all(r.residual < cfg.tight_tol for r in rounds))
            memo[idx] = ok
        return memo[idx]

    hi = len(grid) - 1
    if not tight_at(hi):
        raise EtaTuningError(
            "no tight penalty found: largest grid value "
            f"{grid[hi]:g} left some of the first {cfg.tune_rounds} rounds "
            "loose", tried=[(grid[i], memo[i]) for i in sorted(memo)])
    lo = 0
    while lo < hi:
        mid = (lo + hi) // 2
        if tight_at(mid):
            hi = mid
        else:
            lo = mid + 1
    # monotonicity audit over everything evaluated
    evaluated = sorted(memo)
    monotone = True
    for a in evaluated:
        for b in evaluated:
            if a < b and memo[a] and not memo[b]:
                monotone = False
    if not monotone:
        for idx in range(len(grid)):
            if tight_at(idx):
                return grid[idx]
    return grid[hi]


def run(p: QcqpProblem, cfg: SequentialConfig | None = None,
        label: str = "") -> SequentialTrace:
    """Run the sequential penalized scheme; see module docstring."""
    cfg = cfg or SequentialConfig()
    x0 = resolve_initial_point(p, cfg)
    if cfg.eta == "auto":
        eta = tune_eta(p, cfg, x0=x0)
    else:
        eta = float(cfg.eta)
        if eta <= 0:
            raise ValueError("eta must be positive")
    rounds, i_feas, i_stop, x, status = _run_rounds(
        p, cfg, x0, eta, cfg.max_rounds, cfg.stop_rel)
    return SequentialTrace(rounds=rounds, eta=eta, i_feas=i_feas,
                           i_stop=i_stop, x_final=x, x_init=x0,
                           status=status, label=label)


def trace_csv(trace: SequentialTrace) -> str:
    lines = ["i,q0,lifted_obj,residual,time_s"]
    for r in trace.rounds:
        lines.append("%d,%.12e,%.12e,%.6e,%.4f"
                     % (r.i, r.q0, r.lifted_obj, r.residual, r.time_s))
    return "\n".join(lines) + "\n"


def trace_json(trace: SequentialTrace) -> str:
    doc = {
        "label": trace.label,
        "eta": trace.eta,
        "i_feas": trace.i_feas,
        "i_stop": trace.i_stop,
        "status": trace.status,
        "x_init": trace.x_init.tolist(),
        "x_final": trace.x_final.tolist(),
        "rounds": [
            {"i": r.i, "q0": r.q0, "lifted_obj": r.lifted_obj,
             "residual": r.residual, "time_s": r.time_s,
             "solver_status": r.solver_status}
            for r in trace.rounds
        ],
    }
    return json.dumps(doc, indent=2)

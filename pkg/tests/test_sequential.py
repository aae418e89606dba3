import math

import numpy as np
import pytest

from qcqpen import (EtaTuningError, QcqpProblem, QuadraticFunction,
                    RelaxationConfig, SequentialConfig, SolveError,
                    SolverSettings, build_relaxation, eta_grid, extract,
                    gap_percent, resolve_initial_point, run, solve_conic,
                    trace_csv, trace_json, tune_eta)
from qcqpen.sequential import _round_solver_settings, _run_rounds
from _support import random_feasible_qcqp

import json


def _shifted_ball_problem(g=(2.0, 0.0)):
    # min |x - g|^2 s.t. |x|^2 <= 1; optimum at g / |g|
    g = np.asarray(g, dtype=float)
    obj = QuadraticFunction(np.eye(2), -g, float(g @ g))
    ball = QuadraticFunction(np.eye(2), np.zeros(2), -1.0)
    return QcqpProblem(n=2, objective=obj, inequalities=[ball])


def test_gap_percent():
    assert gap_percent(-5.882, -6.386) == pytest.approx(7.89, abs=0.01)
    assert gap_percent(-105.570, -107.581) == pytest.approx(1.87, abs=0.005)
    assert gap_percent(1.0, 0.0) == math.inf
    assert gap_percent(0.0, 0.0) == 0.0
    assert gap_percent(2.0, 2.0) == 0.0


def test_eta_grid():
    grid = eta_grid()
    assert grid == sorted(grid)
    assert len(grid) == 24
    assert grid[0] == pytest.approx(1e-3)
    assert grid[-1] == pytest.approx(5e4)
    assert 0.025 not in grid and 0.02 in grid


def test_resolve_initial_point():
    p = _shifted_ball_problem()
    cfg = SequentialConfig(init="zero")
    assert np.array_equal(resolve_initial_point(p, cfg), np.zeros(2))
    v = np.array([0.3, -0.4])
    assert np.array_equal(
        resolve_initial_point(p, SequentialConfig(init=v)), v)
    with pytest.raises(ValueError):
        resolve_initial_point(p, SequentialConfig(init=[1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        resolve_initial_point(p, SequentialConfig(init="center"))
    # "relaxation" returns the x part of the plain relaxation solution
    cfgr = SequentialConfig(init="relaxation")
    x0 = resolve_initial_point(p, cfgr)
    prog, emap = build_relaxation(p, cfgr.relaxation)
    sol = solve_conic(prog, cfgr.solver)
    assert x0 == pytest.approx(extract(sol, emap).x)


def test_resolve_initial_point_unbounded_relaxation():
    p = QcqpProblem(n=2, objective=QuadraticFunction.affine([0.5, 0.0]))
    with pytest.raises(SolveError) as err:
        resolve_initial_point(p, SequentialConfig(init="relaxation"))
    assert err.value.status in ("unbounded", "iteration_limit")


def test_round_solver_settings_derivation():
    cfg = SequentialConfig(eta=0.025)
    s = _round_solver_settings(cfg, 0.025)
    assert s.gap_tol == pytest.approx(0.05 * 0.025 * cfg.tight_tol)
    assert s.gap_tol == pytest.approx(1.25e-10)
    # other settings carried over unchanged
    assert s.max_iterations == cfg.solver.max_iterations
    # a large penalty needs no tightening; the object passes through
    assert _round_solver_settings(cfg, 1e7) is cfg.solver
    # never below the floor
    tiny = SequentialConfig(tight_tol=1e-13)
    assert _round_solver_settings(tiny, 1e-3).gap_tol == pytest.approx(1e-13)


def test_run_shifted_ball():
    p = _shifted_ball_problem()
    cfg = SequentialConfig(eta=5.0, init="zero", max_rounds=30)
    tr = run(p, cfg, label="ball")
    assert tr.status == "converged"
    assert tr.label == "ball"
    assert tr.eta == 5.0
    assert tr.i_feas == 1
    assert tr.i_stop is not None
    assert p.violation(tr.x_final) <= 1e-6
    assert tr.x_final == pytest.approx([1.0, 0.0], abs=1e-4)
    assert tr.objective == pytest.approx(1.0, abs=1e-3)
    # i_stop semantics: last two rounds tight, relative progress small
    last = tr.rounds[-1]
    prev = tr.rounds[-2]
    assert last.i == tr.i_stop
    assert last.residual < cfg.tight_tol and prev.residual < cfg.tight_tol
    rel = (prev.q0 - last.q0) / max(abs(last.q0), 1e-12)
    assert rel <= cfg.stop_rel


def test_objective_monotone_once_tight():
    for seed in (1, 3, 5):
        p, xstar = random_feasible_qcqp(seed)
        cfg = SequentialConfig(eta=50.0, init=xstar, max_rounds=8,
                               stop_rel=None)
        tr = run(p, cfg)
        tight = [r for r in tr.rounds if r.residual < cfg.tight_tol]
        for a, b in zip(tight, tight[1:]):
            assert b.q0 <= a.q0 + 1e-6


def test_run_deterministic():
    p = _shifted_ball_problem((1.0, 1.5))
    cfg = SequentialConfig(eta=5.0, init="zero", max_rounds=10)
    t1 = run(p, cfg)
    t2 = run(p, cfg)
    assert t1.status == t2.status
    assert t1.eta == t2.eta
    assert len(t1.rounds) == len(t2.rounds)
    for a, b in zip(t1.rounds, t2.rounds):
        assert a.q0 == b.q0
        assert a.residual == b.residual
        assert a.solver_status == b.solver_status


def test_run_rejects_bad_eta():
    p = _shifted_ball_problem()
    with pytest.raises(ValueError):
        run(p, SequentialConfig(eta=-1.0))


def test_tune_eta_matches_linear_scan():
    p = _shifted_ball_problem((0.5, -1.2))
    cfg = SequentialConfig(init="zero", tune_rounds=3,
                           solver=SolverSettings(max_iterations=80))
    x0 = np.zeros(2)
    eta = tune_eta(p, cfg, x0=x0)
    for cand in eta_grid():
        rounds, _, _, _, _ = _run_rounds(p, cfg, x0, cand, 3, stop_rel=None)
        ok = (len(rounds) == 3
              and all(r.residual < cfg.tight_tol for r in rounds))
        if ok:
            assert eta == cand
            break
    else:
        pytest.fail("linear scan found no tight penalty")


def test_tune_eta_sound_on_nonconvex():
    p, xstar = random_feasible_qcqp(7)
    cfg = SequentialConfig(init=xstar, tune_rounds=4,
                           solver=SolverSettings(max_iterations=80))
    eta = tune_eta(p, cfg, x0=xstar)
    assert eta in eta_grid()
    rounds, _, _, _, _ = _run_rounds(p, cfg, xstar, eta, 4, stop_rel=None)
    assert len(rounds) == 4
    assert all(r.residual < cfg.tight_tol for r in rounds)


def test_tune_eta_failure():
    # infeasible lifted equality: tr X = -1 can never hold, every solve fails
    bad = QuadraticFunction(np.eye(2), np.zeros(2), 1.0)
    p = QcqpProblem(n=2, objective=QuadraticFunction.affine([0.5, 0.0]),
                    equalities=[bad])
    cfg = SequentialConfig(init="zero", tune_rounds=2,
                           solver=SolverSettings(max_iterations=60))
    with pytest.raises(EtaTuningError) as err:
        tune_eta(p, cfg, x0=np.zeros(2))
    assert "no tight penalty" in str(err.value)
    assert err.value.tried


def test_auto_eta_through_run():
    p = _shifted_ball_problem()
    cfg = SequentialConfig(eta="auto", init="zero", max_rounds=12,
                           tune_rounds=3)
    tr = run(p, cfg)
    assert tr.eta in eta_grid()
    assert tr.i_feas is not None
    assert p.violation(tr.x_final) <= 1e-6


def test_trace_csv_format():
    p = _shifted_ball_problem()
    tr = run(p, SequentialConfig(eta=5.0, init="zero", max_rounds=5))
    text = trace_csv(tr)
    lines = text.strip().split("\n")
    assert lines[0] == "i,q0,lifted_obj,residual,time_s"
    assert len(lines) == len(tr.rounds) + 1
    row = lines[1].split(",")
    assert int(row[0]) == 1
    assert float(row[1]) == pytest.approx(tr.rounds[0].q0, rel=1e-10)


def test_trace_json_fields():
    p = _shifted_ball_problem()
    tr = run(p, SequentialConfig(eta=5.0, init="zero", max_rounds=5),
             label="demo")
    doc = json.loads(trace_json(tr))
    assert doc["label"] == "demo"
    assert doc["eta"] == 5.0
    assert doc["i_feas"] == tr.i_feas
    assert doc["status"] == tr.status
    assert len(doc["rounds"]) == len(tr.rounds)
    assert doc["rounds"][0]["solver_status"] in ("optimal", "near_optimal")
    assert doc["x_final"] == list(tr.x_final)

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npga import oracle, theory
from npga.problem import AgentSpec, IndicatorBall, Problem
from npga.schemes import SCHEMES, build_scheme, check_assumptions, needs_lazy
from npga.solver import (
    TRACE_HEADER,
    AssumptionError,
    NonFiniteError,
    StepSizes,
    consensus_error,
    init_state,
    run,
    step_four_sequence,
    step_rewritten,
)


def scheme_for(name, W, beta=0.05, **kw):
    extra = {"beta": beta} if name == "NPGA-DLM" else {}
    return build_scheme(name, W, lazy=needs_lazy(name), **extra, **kw)


def steps_for(problem, s):
    """Tightest certified steps, or conservative ones when no case applies."""
    try:
        return theory.tightest(problem, s).steps
    except AssumptionError:
        beta = s.beta if s.name == "NPGA-DLM" else 0.05
        return StepSizes(0.5 / problem.l, beta, 0.5, theta=0.0)


def test_step_sizes_validation():
    with pytest.raises(ValueError):
        StepSizes(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        StepSizes(1.0, 1.0, 1.0, theta=-0.1)
    with pytest.raises(ValueError):
        StepSizes(float("nan"), 1.0, 1.0)


def test_init_state_defaults_and_errors(small):
    s = build_scheme("NPGA-EXTRA", small.W)
    st0 = init_state(small.problem, s)
    assert st0.k == 0 and not st0.y.any() and not st0.x.any()
    assert np.array_equal(st0.v, st0.lam) and np.array_equal(st0.lam_prev, st0.lam)
    with pytest.raises(ValueError, match="x0 has length"):
        init_state(small.problem, s, x0=np.zeros(small.problem.d + 1))
    lam = np.arange(small.problem.p, dtype=float)
    tiled = init_state(small.problem, s, lambda0=lam)
    assert consensus_error(tiled.lam) == 0.0


def test_consensus_error_values():
    assert consensus_error(np.array([[1.0], [-1.0]])) == pytest.approx(np.sqrt(2))
    assert consensus_error(np.ones((4, 3))) == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.floats(-50, 50))
def test_consensus_error_is_homogeneous(seed, t):
    lam = np.random.default_rng(seed).standard_normal((5, 3))
    assert consensus_error(t * lam) == pytest.approx(abs(t) * consensus_error(lam), abs=1e-12)


def test_theta_zero_keeps_x_hat_equal_to_x(small):
    s = build_scheme("NPGA-EXTRA", small.W)
    st1 = step_four_sequence(init_state(small.problem, s), small.problem, s,
                             StepSizes(0.2, 0.05, 0.5, theta=0.0))
    assert np.array_equal(st1.x_hat, st1.x)


def test_single_agent_reduces_to_centralized_step(rng):
    A = rng.standard_normal((3, 4))
    agent = AgentSpec(A=A, f_grad=lambda x: 2.0 * x, mu=2.0, l=2.0)
    prob = Problem([agent], IndicatorBall(rng.standard_normal(3), 0.5))
    s = build_scheme("NPGA-EXTRA", np.ones((1, 1)))
    assert not s.B2.any() and not s.C.any() and s.D[0, 0] == 1.0
    x0, lam0 = rng.standard_normal(4), rng.standard_normal(3)
    steps = StepSizes(0.1, 0.3, 0.5, theta=0.7)
    state = init_state(prob, s, x0, lam0)
    with pytest.warns(RuntimeWarning):
        ref = oracle.centralized_pga(prob, steps.alpha, steps.beta, steps.theta, max_iters=1,
                                     x0=x0, lambda0=lam0, check_every=1)
    for stepper in (step_four_sequence, step_rewritten):
        nxt = stepper(state, prob, s, steps)
        assert np.allclose(nxt.x, ref.x_star, atol=1e-14)
        assert np.allclose(nxt.lam[0], ref.lambda_star, atol=1e-14)


def _col_residual(B, Y):
    # distance of every p-column of Y from col(B)
    P = B @ np.linalg.pinv(B)
    return float(np.linalg.norm(Y - P @ Y))


def test_y_stays_in_range_of_B(small):
    for name in SCHEMES:
        s = scheme_for(name, small.W)
        steps = steps_for(small.problem, s)
        s = s.with_beta(steps.beta)
        state = init_state(small.problem, s)
        for _ in range(50):
            state = step_four_sequence(state, small.problem, s, steps)
            assert _col_residual(s.B, state.y) < 1e-9, name


def test_fixed_point_is_stationary_for_both_engines(small):
    x_star, lam_star = small.xl
    for name in SCHEMES:
        s = scheme_for(name, small.W)
        steps = steps_for(small.problem, s)
        fp = oracle.construct_fixed_point(small.problem, s, steps.beta, x_star, lam_star,
                                          alpha=steps.alpha)
        s = s.with_beta(steps.beta)
        start = fp.state(k=1)
        for stepper in (step_four_sequence, step_rewritten):
            nxt = stepper(start, small.problem, s, steps)
            assert np.linalg.norm(nxt.x - start.x) < 1e-9, name
            assert np.linalg.norm(nxt.v - start.v) < 1e-9, name
            assert np.linalg.norm(nxt.lam - start.lam) < 1e-9, name
            if nxt.y is not None:
                assert np.linalg.norm(nxt.y - start.y) < 1e-9, name


def test_engines_agree_over_many_steps(small, rng):
    x0 = rng.standard_normal(small.problem.d)
    lam0 = rng.standard_normal((small.problem.n, small.problem.p))
    for name in ("NPGA-EXTRA", "NPGA-II", "NPGA-DLM"):
        s = scheme_for(name, small.W)
        steps = steps_for(small.problem, s)
        s = s.with_beta(steps.beta)
        a = b = init_state(small.problem, s, x0, lam0)
        for _ in range(100):
            a = step_four_sequence(a, small.problem, s, steps)
            b = step_rewritten(b, small.problem, s, steps)
        assert np.linalg.norm(a.x - b.x) < 1e-9 and np.linalg.norm(a.lam - b.lam) < 1e-9


def test_extra_uses_one_message_per_agent(small, rng):
    # v_i+ = dl_i + v_i - (m_i - sum_j w_ij m_j) / 2 + beta A_i dxh_i with
    # message m_j = dl_j + gamma v_j
    prob, W = small.problem, small.W.W
    s = build_scheme("NPGA-EXTRA", small.W)
    steps = StepSizes(0.2, 0.05, 0.7, theta=1.0)
    state = init_state(prob, s, rng.standard_normal(prob.d), rng.standard_normal((prob.n, prob.p)))
    state = step_rewritten(state, prob, s, steps)
    nxt = step_rewritten(state, prob, s, steps)
    dl = state.lam - state.lam_prev
    m = dl + steps.gamma * state.v
    dxh = prob.apply_blocks(nxt.x_hat - state.x_hat)
    expect = np.stack([
        dl[i] + state.v[i] - 0.5 * (m[i] - sum(W[i, j] * m[j] for j in range(prob.n)))
        + steps.beta * dxh[i]
        for i in range(prob.n)
    ])
    assert np.allclose(nxt.v, expect, atol=1e-13)


def test_dlm_rejects_mismatched_beta(small):
    s = build_scheme("NPGA-DLM", small.W, beta=0.1)
    with pytest.raises(ValueError, match="with_beta"):
        step_four_sequence(init_state(small.problem, s), small.problem, s,
                           StepSizes(0.1, 0.2, 0.5))


def test_zero_iteration_run(small):
    s = build_scheme("NPGA-II", small.W, lazy=True)
    steps = steps_for(small.problem, s)
    tr = run(small.problem, s, steps, max_iters=0, oracle_solution=small.xl, timing=False)
    assert len(tr) == 1 and tr.final_gap == 1.0 and tr.records[0].comm_rounds == 0


def test_run_converges_and_counts_rounds(small):
    s = build_scheme("NPGA-II", small.W, lazy=True)
    steps = steps_for(small.problem, s)
    tr = run(small.problem, s, steps, max_iters=20000, stop=1e-6, oracle_solution=small.xl)
    assert tr.status == "converged" and tr.final_gap <= 1e-6
    assert all(r.comm_rounds == 2 * r.k for r in tr.records)
    assert tr.records[-1].kkt < 1e-4


def test_divergence_ends_run_cleanly(small):
    s = build_scheme("NPGA-EXTRA", small.W)
    tr = run(small.problem, s, StepSizes(50.0, 50.0, 0.5), max_iters=500,
             oracle_solution=small.xl, timing=False)
    assert tr.status == "diverged" and tr.message
    assert len(tr) < 500


def test_non_finite_iterate_raises(small):
    s = build_scheme("NPGA-EXTRA", small.W)
    state = init_state(small.problem, s, x0=np.full(small.problem.d, np.inf))
    with pytest.raises(NonFiniteError), np.errstate(invalid="ignore"):
        step_four_sequence(state, small.problem, s, StepSizes(0.1, 0.1, 0.5))


def test_run_refuses_structurally_invalid_scheme(small):
    s = build_scheme("NPGA-DIGing", small.W, lazy=False)
    steps = StepSizes(0.1, 0.01, 0.5)
    if not check_assumptions(s).a4:
        with pytest.raises(AssumptionError):
            run(small.problem, s, steps, max_iters=1, oracle_solution=small.xl)
        tr = run(small.problem, s, steps, max_iters=1, oracle_solution=small.xl, force=True)
        assert len(tr) == 2


def test_trace_csv_and_summary_agree(small, tmp_path):
    s = build_scheme("NPGA-EXTRA", small.W)
    steps = steps_for(small.problem, s)
    tr = run(small.problem, s, steps, max_iters=30, oracle_solution=small.xl, timing=False)
    text = tr.to_csv(tmp_path / "t.csv")
    lines = text.splitlines()
    assert lines[0] == ",".join(TRACE_HEADER)
    assert len(lines) == 32
    last = lines[-1].split(",")
    summ = json.loads(tr.summary_json(tmp_path / "s.json"))
    assert float(last[2]) == summ["final_gap"] and int(last[0]) == summ["iterations"] == 30
    assert last[6] == ""


def test_runs_are_deterministic(small):
    s = build_scheme("NPGA-Aug-DGM", small.W, lazy=True)
    steps = steps_for(small.problem, s)
    a = run(small.problem, s, steps, max_iters=50, oracle_solution=small.xl, timing=False)
    b = run(small.problem, s, steps, max_iters=50, oracle_solution=small.xl, timing=False)
    assert a.to_csv() == b.to_csv()


def test_lyapunov_column_recorded_with_certificate(small):
    s = build_scheme("NPGA-II", small.W, lazy=True)
    choice = theory.tightest(small.problem, s)
    fp = oracle.construct_fixed_point(small.problem, s, choice.steps.beta, *small.xl)
    tr = run(small.problem, s, choice.steps, max_iters=10, oracle_solution=small.xl,
             fixed_point=fp, certificate=choice.certificate)
    assert all(r.lyapunov is not None and r.lyapunov >= 0 for r in tr.records)

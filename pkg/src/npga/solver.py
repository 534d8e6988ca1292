"""NPGA iteration engines, run loop and traces.

Dual quantities are ``(n, p)`` arrays: row ``i`` is agent ``i``'s block.
Primal quantities are flat ``d``-vectors split by :attr:`Problem.offsets`.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from npga.problem import Problem
from npga.schemes import NetworkScheme, check_assumptions

log = logging.getLogger(__name__)

TRACE_HEADER = ("iter", "comm_rounds", "gap", "consensus_err", "kkt", "lyapunov", "wall_ms")
ENGINES = ("four_seq", "rewritten")


class NonFiniteError(FloatingPointError):
    pass


class AssumptionError(ValueError):
    """A structural or problem assumption required by the request failed."""

    def __init__(self, culprit, detail=""):
        self.culprit = culprit
        super().__init__(f"assumption {culprit} failed" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class StepSizes:
    alpha: float
    beta: float
    gamma: float
    theta: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "theta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"step size {name} must be finite, got {v}")
        if self.alpha <= 0 or self.beta <= 0 or self.gamma <= 0:
            raise ValueError(f"alpha, beta, gamma must be positive: {self}")
        if self.theta < 0:
            raise ValueError(f"theta must be nonnegative, got {self.theta}")

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "theta": self.theta}


@dataclass(frozen=True)
class SolverState:
    """Iterate tuple at iteration ``k``.

    ``lam_prev``, ``v`` and ``x_hat`` carry the one-step history the
    rewritten engine needs; ``y`` is ``None`` once the rewritten engine has
    stepped (it never forms ``B``).
    """

    x: np.ndarray
    x_hat: np.ndarray
    v: np.ndarray
    y: np.ndarray | None
    lam: np.ndarray
    lam_prev: np.ndarray
    k: int = 0


def _as_dual(arr, n, p, what):
    arr = np.asarray(arr, dtype=float)
    if arr.shape == (n, p):
        return arr.copy()
    if arr.size == n * p and arr.ndim == 1:
        return arr.reshape(n, p).copy()
    if arr.shape == (p,):
        return np.tile(arr, (n, 1))
    raise ValueError(f"{what} has shape {arr.shape}; expected ({n}, {p}) or a flat {n * p}-vector")


def init_state(problem: Problem, scheme: NetworkScheme, x0=None, lambda0=None) -> SolverState:
    """Initial iterate with ``y = 0``, ``lam_prev = lam``, ``x_hat = x`` and ``v = lam``."""
    n, p, d = problem.n, problem.p, problem.d
    if scheme.n != n:
        raise ValueError(f"scheme is for {scheme.n} agents, problem has {n}")
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float).ravel()
    if x.shape != (d,):
        raise ValueError(f"x0 has length {x.size}; expected {d}")
    lam = np.zeros((n, p)) if lambda0 is None else _as_dual(lambda0, n, p, "lambda0")
    return SolverState(x=x, x_hat=x.copy(), v=lam.copy(), y=np.zeros((n, p)), lam=lam,
                       lam_prev=lam.copy(), k=0)


def dual_prox(problem: Problem, step, U) -> np.ndarray:
    """Row-wise ``prox_{step h*}``."""
    return np.stack([problem.h.conj_prox(step, u) for u in U])


def _check_finite(*arrays, k):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite iterate at iteration {k + 1}")


def _check_beta(scheme, steps):
    if scheme.name == "NPGA-DLM" and not math.isclose(scheme.beta, steps.beta, rel_tol=1e-12):
        raise ValueError(
            f"NPGA-DLM was built for beta={scheme.beta}, stepping with beta={steps.beta}; "
            "rebuild with scheme.with_beta(beta)"
        )


def _primal(state, problem, steps):
    a = steps.alpha
    x = state.x
    x_new = problem.prox_g(a, x - a * (problem.grad(x) + problem.apply_blocks_T(state.lam)))
    x_hat = x_new + steps.theta * (x_new - x)
    return x_new, x_hat


def step_four_sequence(state: SolverState, problem: Problem, scheme: NetworkScheme,
                       steps: StepSizes) -> SolverState:
    """One iteration of the four-sequence form (x, v, y, lambda)."""
    if state.y is None:
        raise ValueError("state has no y sequence (produced by the rewritten engine)")
    _check_beta(scheme, steps)
    x_new, x_hat = _primal(state, problem, steps)
    lam = state.lam
    v = lam - scheme.C @ lam - scheme.B @ state.y + steps.beta * problem.apply_blocks(x_hat)
    y = state.y + steps.gamma * (scheme.B @ v)
    lam_new = dual_prox(problem, steps.beta / problem.n, scheme.D @ v)
    _check_finite(x_new, v, y, lam_new, k=state.k)
    return SolverState(x=x_new, x_hat=x_hat, v=v, y=y, lam=lam_new, lam_prev=lam, k=state.k + 1)


def step_rewritten(state: SolverState, problem: Problem, scheme: NetworkScheme,
                   steps: StepSizes) -> SolverState:
    """One iteration of the y-free form, using ``B^2`` only.

    The recursion ``v+ = (I - C)(lam - lam_prev) + (I - gamma B^2) v
    + beta A (x_hat+ - x_hat)`` holds from the second iteration on.  At
    ``k = 0`` the step is the four-sequence step with ``y = 0``, i.e.
    ``v1 = (I - C) lam0 + beta A x_hat1``.
    """
    _check_beta(scheme, steps)
    x_new, x_hat = _primal(state, problem, steps)
    lam, C = state.lam, scheme.C
    if state.k == 0:
        v = lam - C @ lam + steps.beta * problem.apply_blocks(x_hat)
    else:
        dl = lam - state.lam_prev
        v = (dl - C @ dl + state.v - steps.gamma * (scheme.B2 @ state.v)
             + steps.beta * problem.apply_blocks(x_hat - state.x_hat))
    lam_new = dual_prox(problem, steps.beta / problem.n, scheme.D @ v)
    _check_finite(x_new, v, lam_new, k=state.k)
    return SolverState(x=x_new, x_hat=x_hat, v=v, y=None, lam=lam_new, lam_prev=lam, k=state.k + 1)


STEPPERS = {"four_seq": step_four_sequence, "rewritten": step_rewritten}


def consensus_error(lam) -> float:
    """``||lam - 1 kron mean(lam)||`` over the agent blocks."""
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 1:
        lam = lam[:, None]
    return float(np.linalg.norm(lam - lam.mean(axis=0, keepdims=True)))


# -- traces ------------------------------------------------------------------


@dataclass
class TraceRecord:
    k: int
    comm_rounds: int
    gap: float
    consensus_err: float
    kkt: float | None = None
    lyapunov: float | None = None
    wall_ms: float | None = None


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class Trace:
    records: list[TraceRecord] = field(default_factory=list)
    status: str = "running"
    message: str = ""
    scheme: str = ""
    engine: str = "four_seq"
    steps: StepSizes | None = None
    final_state: SolverState | None = None
    certificate: dict | None = None

    def __len__(self):
        return len(self.records)

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.records])

    @property
    def final_gap(self) -> float:
        return self.records[-1].gap

    def iterations_to(self, threshold) -> int | None:
        for r in self.records:
            if r.gap <= threshold:
                return r.k
        return None

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.records:
            w.writerow([_fmt(r.k), _fmt(r.comm_rounds), _fmt(r.gap), _fmt(r.consensus_err),
                        _fmt(r.kkt), _fmt(r.lyapunov), _fmt(r.wall_ms)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        last = self.records[-1]
        out = {
            "scheme": self.scheme,
            "engine": self.engine,
            "status": self.status,
            "message": self.message,
            "iterations": last.k,
            "comm_rounds": last.comm_rounds,
            "final_gap": last.gap,
            "final_consensus_err": last.consensus_err,
            "final_kkt": last.kkt,
            "steps": self.steps.as_dict() if self.steps else None,
        }
        if self.certificate is not None:
            out["certificate"] = self.certificate
        return out

    def summary_json(self, path=None) -> str:
        text = json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def run(problem: Problem, scheme: NetworkScheme, steps: StepSizes, engine="four_seq",
        max_iters=1000, stop=None, oracle_solution=None, x0=None, lambda0=None,
        fixed_point=None, certificate=None, force=False, timing=True, kkt=True,
        divergence_factor=1e6) -> Trace:
    """Iterate NPGA and record per-iteration metrics.

    Parameters
    ----------
    oracle_solution : tuple (x_star, lambda_star), optional
        Reference solution for the optimality gap; computed with the
        centralized solver when omitted.
    stop : float, optional
        Stop once the optimality gap drops to this value.
    fixed_point, certificate : optional
        When both are given (four-sequence engine only) the proof Lyapunov
        function is recorded each iteration.
    force : bool
        Run even when the structural scheme assumptions fail.
    timing : bool
        Record wall-clock milliseconds; disable for byte-reproducible traces.
    """
    from npga import oracle as _oracle
    from npga import theory as _theory

    if engine not in STEPPERS:
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    scheme = scheme.with_beta(steps.beta)
    report = check_assumptions(scheme)
    if not report.a4:
        bad = ", ".join(report.failing(["a4"]))
        if not force:
            raise AssumptionError(bad, f"scheme {scheme.label}")
        log.warning("running %s although %s fail (forced)", scheme.label, bad)

    if oracle_solution is None:
        res = _oracle.centralized_pga(problem)
        oracle_solution = (res.x_star, res.lambda_star)
    x_star = np.asarray(oracle_solution[0], dtype=float)
    lam_star = np.asarray(oracle_solution[1], dtype=float)

    stepper = STEPPERS[engine]
    state = init_state(problem, scheme, x0, lambda0)
    denom = float(np.linalg.norm(state.x - x_star))
    track_lyap = fixed_point is not None and certificate is not None and engine == "four_seq"
    ref = _oracle.reference_steps(problem)

    trace = Trace(scheme=scheme.label, engine=engine, steps=steps)
    t0 = time.perf_counter()

    def record(st):
        gap = float(np.linalg.norm(st.x - x_star)) / denom if denom > 0 else 0.0
        rec = TraceRecord(
            k=st.k,
            comm_rounds=st.k * scheme.comm_rounds,
            gap=gap,
            consensus_err=consensus_error(st.lam),
            kkt=_oracle.kkt_residual(problem, st.x, st.lam.mean(axis=0), *ref) if kkt else None,
            lyapunov=(_theory.lyapunov(certificate, st, fixed_point, scheme, steps)
                      if track_lyap and st.y is not None else None),
            wall_ms=(time.perf_counter() - t0) * 1e3 if timing else None,
        )
        trace.records.append(rec)
        return rec

    record(state)
    trace.status = "max_iters"
    for _ in range(max_iters):
        if stop is not None and trace.records[-1].gap <= stop:
            trace.status = "converged"
            break
        try:
            state = stepper(state, problem, scheme, steps)
        except NonFiniteError as exc:
            trace.status, trace.message = "diverged", str(exc)
            log.warning("run aborted: %s", exc)
            break
        rec = record(state)
        if not math.isfinite(rec.gap) or rec.gap > divergence_factor:
            trace.status = "diverged"
            trace.message = f"optimality gap {rec.gap:.3e} exceeded {divergence_factor:g} at iteration {rec.k}"
            log.warning("run aborted: %s", trace.message)
            break
    else:
        if stop is not None and trace.records[-1].gap <= stop:
            trace.status = "converged"
    if max_iters == 0 and stop is not None and trace.records[-1].gap <= stop:
        trace.status = "converged"
    trace.final_state = state
    return trace


def replace_steps(steps: StepSizes, **kw) -> StepSizes:
    return replace(steps, **kw)

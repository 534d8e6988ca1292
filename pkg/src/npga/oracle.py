"""Reference solutions and independent cross-check updates.

* :func:`centralized_pga` solves the saddle-point problem with a single
  (centralized) primal-dual proximal gradient loop.
* :func:`construct_fixed_point` lifts a saddle point to a fixed point of the
  decentralized iteration.
* :func:`dcpa_step` and :func:`dcda_step` are per-agent loops written out with
  neighbour sums, independent of the scheme registry.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from npga.graph import MixingMatrix
from npga.problem import Problem
from npga.schemes import NetworkScheme
from npga.solver import SolverState, StepSizes

log = logging.getLogger(__name__)


def reference_steps(problem: Problem) -> tuple[float, float]:
    """Oracle steps ``alpha = 1/(2l)`` and ``beta = mu / (2 ||A||^2)``.

    When ``mu = 0`` the smoothness constant ``l`` takes its place in ``beta``.
    """
    mu = problem.mu if problem.mu > 0 else problem.l
    s = float(np.linalg.norm(problem.A_full, 2))
    return 1.0 / (2.0 * problem.l), mu / (2.0 * s * s)


def kkt_residual(problem: Problem, x, lambda_bar, alpha=None, beta=None) -> float:
    """Fixed-point residual of the saddle-point optimality conditions.

    ``||x - prox_{alpha g}(x - alpha (grad f(x) + A^T lam))||
    + ||lam - prox_{beta h*}(lam + beta A x)||``, zero exactly at a saddle point.
    """
    if alpha is None or beta is None:
        alpha, beta = reference_steps(problem)
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lambda_bar, dtype=float)
    A = problem.A_full
    if x.shape != (problem.d,) or lam.shape != (problem.p,):
        raise ValueError(f"expected x of length {problem.d} and lambda of length {problem.p}")
    rx = x - problem.prox_g(alpha, x - alpha * (problem.grad(x) + A.T @ lam))
    rl = lam - problem.h.conj_prox(beta, lam + beta * (A @ x))
    return float(np.linalg.norm(rx) + np.linalg.norm(rl))


@dataclass
class OracleResult:
    x_star: np.ndarray
    lambda_star: np.ndarray
    iterations: int
    residual: float
    converged: bool


def centralized_pga(problem: Problem, alpha=None, beta=None, theta=1.0, max_iters=500_000,
                    tol=1e-12, x0=None, lambda0=None, check_every=10) -> OracleResult:
    """Primal-dual proximal gradient on the centralized saddle-point problem.

    ``x+ = prox_{alpha g}(x - alpha (grad f(x) + A^T lam))``,
    ``lam+ = prox_{beta h*}(lam + beta A (x+ + theta (x+ - x)))``.

    Stops when :func:`kkt_residual` (at the same steps) drops below ``tol``.  If
    the budget runs out the result carries ``converged=False``; a warning is
    issued unless the residual is still below ``1e-10``.
    """
    ra, rb = reference_steps(problem)
    alpha = ra if alpha is None else alpha
    beta = rb if beta is None else beta
    if alpha <= 0 or beta <= 0:
        raise ValueError("oracle steps must be positive")
    A = problem.A_full
    x = np.zeros(problem.d) if x0 is None else np.array(x0, dtype=float)
    lam = np.zeros(problem.p) if lambda0 is None else np.array(lambda0, dtype=float)
    res = kkt_residual(problem, x, lam, alpha, beta)
    k = 0
    while res >= tol and k < max_iters:
        x_new = problem.prox_g(alpha, x - alpha * (problem.grad(x) + A.T @ lam))
        lam = problem.h.conj_prox(beta, lam + beta * (A @ (x_new + theta * (x_new - x))))
        x = x_new
        k += 1
        if k % check_every == 0 or k == max_iters:
            res = kkt_residual(problem, x, lam, alpha, beta)
            if not np.isfinite(res):
                raise FloatingPointError(f"centralized solver diverged at iteration {k}")
    converged = res < tol
    if not converged:
        msg = f"centralized solver stopped after {k} iterations with KKT residual {res:.3e}"
        if res >= 1e-10:
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        else:
            log.info(msg)
    return OracleResult(x, lam, k, res, converged)


# -- fixed points ------------------------------------------------------------


@dataclass
class FixedPoint:
    """Fixed point ``(x*, v*, y*_c, lambda*)`` of the decentralized iteration.

    ``lambda_star`` and ``v_star`` are the common per-agent blocks; ``y_star_c``
    is the ``(n, p)`` solution lying in ``col(B)``.
    """

    x_star: np.ndarray
    lambda_star: np.ndarray
    v_star: np.ndarray
    y_star_c: np.ndarray
    beta: float
    scheme: str
    residuals: dict = field(default_factory=dict)
    col_residual: float = 0.0

    def state(self, k=1) -> SolverState:
        n = self.y_star_c.shape[0]
        lam = np.tile(self.lambda_star, (n, 1))
        v = np.tile(self.v_star, (n, 1))
        return SolverState(x=self.x_star.copy(), x_hat=self.x_star.copy(), v=v,
                           y=self.y_star_c.copy(), lam=lam, lam_prev=lam.copy(), k=k)

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "v_star": self.v_star.tolist(),
            "y_star_c": self.y_star_c.tolist(),
            "beta": self.beta,
            "scheme": self.scheme,
            "residuals": dict(self.residuals),
            "col_residual": self.col_residual,
        }

    @classmethod
    def from_dict(cls, d) -> FixedPoint:
        return cls(
            x_star=np.array(d["x_star"], dtype=float),
            lambda_star=np.array(d["lambda_star"], dtype=float),
            v_star=np.array(d["v_star"], dtype=float),
            y_star_c=np.array(d["y_star_c"], dtype=float).reshape(-1, len(d["lambda_star"])),
            beta=float(d["beta"]),
            scheme=d["scheme"],
            residuals=dict(d.get("residuals", {})),
            col_residual=float(d.get("col_residual", 0.0)),
        )


class InconsistentFixedPoint(ValueError):
    pass


def construct_fixed_point(problem: Problem, scheme: NetworkScheme, beta, x_star, lambda_star,
                          alpha=None, tol=1e-8) -> FixedPoint:
    """Lift a saddle point ``(x*, lambda*)`` to a fixed point.

    ``v* = lambda* + (beta / n) A x*`` and ``y*_c`` is the minimum-norm solution
    of ``B y = (I - C)(1 kron lambda*) + beta A x* - 1 kron v*``.  The right-hand
    side must lie in ``col(B)``; a relative residual above ``tol`` raises
    :class:`InconsistentFixedPoint`.
    """
    scheme = scheme.with_beta(beta)
    n, p = problem.n, problem.p
    x_star = np.asarray(x_star, dtype=float)
    lam_star = np.asarray(lambda_star, dtype=float)
    v_star = lam_star + (beta / n) * (problem.A_full @ x_star)
    Lam = np.tile(lam_star, (n, 1))
    V = np.tile(v_star, (n, 1))
    Ax = problem.apply_blocks(x_star)

    rhs = Lam - scheme.C @ Lam + beta * Ax - V
    B = scheme.B
    Y = np.linalg.pinv(B) @ rhs
    col_res = float(np.linalg.norm(B @ Y - rhs))
    scale = float(np.linalg.norm(rhs))
    if col_res > tol * max(scale, 1e-300) and col_res > 1e-14:
        raise InconsistentFixedPoint(
            f"right-hand side leaves col(B): residual {col_res:.3e} vs norm {scale:.3e}"
        )

    if alpha is None:
        alpha = reference_steps(problem)[0]
    g = problem.grad(x_star) + problem.apply_blocks_T(Lam)
    residuals = {
        "x": float(np.linalg.norm(x_star - problem.prox_g(alpha, x_star - alpha * g))),
        "v": float(np.linalg.norm(V - (Lam - scheme.C @ Lam - B @ Y + beta * Ax))),
        "y": float(np.linalg.norm(B @ V)),
        "lambda": float(np.linalg.norm(
            Lam - np.stack([problem.h.conj_prox(beta / n, r) for r in scheme.D @ V])
        )),
    }
    return FixedPoint(x_star, lam_star, v_star, Y, float(beta), scheme.label, residuals, col_res)


def fixed_point_cache_key(problem: Problem, scheme: NetworkScheme, beta) -> str:
    return f"{problem.fingerprint()}-{scheme.label}-{float(beta)!r}"


def cached_fixed_point(cache_dir, problem, scheme, beta, x_star, lambda_star) -> FixedPoint:
    """:func:`construct_fixed_point` with a JSON file cache in ``cache_dir``."""
    path = Path(cache_dir) / f"fp-{fixed_point_cache_key(problem, scheme, beta)}.json"
    if path.exists():
        return FixedPoint.from_dict(json.loads(path.read_text()))
    fp = construct_fixed_point(problem, scheme, beta, x_star, lambda_star)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(fp.to_dict()))
    tmp.replace(path)
    return fp


# -- hand-expanded DCPA / DCDA -----------------------------------------------


def _weights(W):
    W = W.W if isinstance(W, MixingMatrix) else np.asarray(W, dtype=float)
    n = W.shape[0]
    nbrs = [[j for j in range(n) if j != i and W[i, j] != 0.0] for i in range(n)]
    return W, nbrs


def _agent_primal(problem, state, alpha):
    xs = problem.split(state.x)
    out = []
    for i, a in enumerate(problem.agents):
        xi = xs[i]
        out.append(a.prox(alpha, xi - alpha * (a.f_grad(xi) + a.A.T @ state.lam[i])))
    return out


def dcpa_step(state: SolverState, problem: Problem, W, steps: StepSizes) -> SolverState:
    """One DCPA iteration, agent by agent (``theta = 1`` is required).

    With ``B^2 = C = (I - W)/2`` and ``D = I`` each agent builds ``v_i+`` from
    one neighbour message per iteration:

    * first iteration: ``v_i = (lam_i + sum_j w_ij lam_j) / 2 + beta A_i xh_i+``;
    * later: ``v_i+ = (dl_i + sum_j w_ij (dl_j + gamma v_j)) / 2
      + (1 - gamma/2) v_i + beta A_i (xh_i+ - xh_i)`` with ``dl = lam - lam_prev``.

    Then ``lam_i+ = prox_{(beta/n) h*}(v_i+)``.
    """
    if steps.theta != 1.0:
        raise ValueError("DCPA uses theta = 1")
    W, nbrs = _weights(W)
    n, beta, gam = problem.n, steps.beta, steps.gamma
    xs_old = problem.split(state.x)
    xh_old = problem.split(state.x_hat)
    x_new = _agent_primal(problem, state, steps.alpha)
    xh_new = [2.0 * x_new[i] - xs_old[i] for i in range(n)]
    v_new = np.empty_like(state.lam)
    for i, a in enumerate(problem.agents):
        if state.k == 0:
            mix = W[i, i] * state.lam[i]
            for j in nbrs[i]:
                mix = mix + W[i, j] * state.lam[j]
            v_new[i] = 0.5 * (state.lam[i] + mix) + beta * (a.A @ xh_new[i])
        else:
            dl = state.lam - state.lam_prev
            msg = W[i, i] * (dl[i] + gam * state.v[i])
            for j in nbrs[i]:
                msg = msg + W[i, j] * (dl[j] + gam * state.v[j])
            v_new[i] = (0.5 * dl[i] + 0.5 * msg + (1.0 - 0.5 * gam) * state.v[i]
                        + beta * (a.A @ (xh_new[i] - xh_old[i])))
    lam_new = np.stack([problem.h.conj_prox(beta / n, v_new[i]) for i in range(n)])
    return SolverState(x=np.concatenate(x_new), x_hat=np.concatenate(xh_new), v=v_new, y=None,
                       lam=lam_new, lam_prev=state.lam.copy(), k=state.k + 1)


def dcda_step(state: SolverState, problem: Problem, W, steps: StepSizes) -> SolverState:
    """One DCDA iteration, agent by agent (``theta = 0``, ``gamma = 1``).

    ``v_i+ = lam_i - lam_prev_i + sum_j wb_ij v_j + beta A_i (x_i+ - x_i)`` with
    ``wb = (I + W)/2`` (first iteration: ``v_i = lam_i + beta A_i x_i+``), then
    ``lam_i+ = prox_{(beta/n) h*}(sum_j wb_ij v_j+)``.
    """
    if steps.theta != 0.0 or steps.gamma != 1.0:
        raise ValueError("DCDA uses theta = 0 and gamma = 1")
    W, nbrs = _weights(W)
    n, beta = problem.n, steps.beta
    xs_old = problem.split(state.x)
    x_new = _agent_primal(problem, state, steps.alpha)

    def wbar(i, j):
        return 0.5 * ((1.0 if i == j else 0.0) + W[i, j])

    v_new = np.empty_like(state.lam)
    for i, a in enumerate(problem.agents):
        if state.k == 0:
            v_new[i] = state.lam[i] + beta * (a.A @ x_new[i])
        else:
            mix = wbar(i, i) * state.v[i]
            for j in nbrs[i]:
                mix = mix + wbar(i, j) * state.v[j]
            v_new[i] = state.lam[i] - state.lam_prev[i] + mix + beta * (a.A @ (x_new[i] - xs_old[i]))
    lam_new = np.empty_like(v_new)
    for i in range(n):
        mix = wbar(i, i) * v_new[i]
        for j in nbrs[i]:
            mix = mix + wbar(i, j) * v_new[j]
        lam_new[i] = problem.h.conj_prox(beta / n, mix)
    return SolverState(x=np.concatenate(x_new), x_hat=np.concatenate(x_new), v=v_new, y=None,
                       lam=lam_new, lam_prev=state.lam.copy(), k=state.k + 1)

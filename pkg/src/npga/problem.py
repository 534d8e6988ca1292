"""Constraint-coupled problems: per-agent oracles, coupling functions, datasets.

Each agent ``i`` owns a smooth cost ``f_i``, a possibly nonsmooth ``g_i`` and
a coupling block ``A_i`` (``p x d_i``); a public function ``h`` acts on
``sum_i A_i x_i``.  The dual iteration only ever needs ``h`` through the
proximal map of its convex conjugate.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np


def soft_threshold(alpha, x):
    """Proximal map of ``alpha * ||.||_1``."""
    if alpha < 0:
        raise ValueError(f"threshold must be nonnegative, got {alpha}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - alpha, 0.0)


def project_ball(x, center, radius):
    r = x - center
    nrm = np.linalg.norm(r)
    if nrm <= radius:
        return np.array(x, dtype=float, copy=True)
    return center + (radius / nrm) * r


# -- coupling functions ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IndicatorPoint:
    """``h(y) = 0`` if ``y == b`` else ``+inf``; ``h*(lam) = <b, lam>``."""

    b: np.ndarray
    kind = "indicator_point"
    l_h = None

    def conj_prox(self, alpha, x):
        return x - alpha * self.b

    def prox(self, t, z):
        return np.array(self.b, dtype=float, copy=True)

    def params(self) -> dict:
        return {"b": np.asarray(self.b).tolist()}


@dataclass(frozen=True, eq=False)
class IndicatorBall:
    """Indicator of the Euclidean ball ``{y : ||y - center|| <= radius}``."""

    center: np.ndarray
    radius: float
    kind = "indicator_ball"
    l_h = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    def conj_prox(self, alpha, x):
        # Moreau: prox_{a h*}(x) = x - a * proj(x / a)
        return x - alpha * project_ball(x / alpha, self.center, self.radius)

    def prox(self, t, z):
        return project_ball(z, self.center, self.radius)

    def params(self) -> dict:
        return {"center": np.asarray(self.center).tolist(), "radius": float(self.radius)}


@dataclass(frozen=True, eq=False)
class SmoothQuadratic:
    """``h(y) = scale * ||y - center||^2``, which is ``2 * scale``-smooth."""

    center: np.ndarray
    scale: float
    kind = "smooth_quadratic"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"quadratic scale must be positive, got {self.scale}")

    @property
    def l_h(self) -> float:
        return 2.0 * self.scale

    def conj_prox(self, alpha, x):
        # h*(lam) = <center, lam> + ||lam||^2 / (4 scale)
        return (x - alpha * self.center) / (1.0 + alpha / (2.0 * self.scale))

    def prox(self, t, z):
        k = 2.0 * self.scale * t
        return (z + k * self.center) / (1.0 + k)

    def params(self) -> dict:
        return {"center": np.asarray(self.center).tolist(), "scale": float(self.scale)}


@dataclass(frozen=True, eq=False)
class Custom:
    """User supplied ``prox_{alpha h*}``; ``l_h`` only when ``h`` is smooth."""

    conj_prox_fn: Callable
    l_h: float | None = None
    prox_fn: Callable | None = None
    tag: str = "custom"
    kind = "custom"

    def conj_prox(self, alpha, x):
        return self.conj_prox_fn(alpha, x)

    def prox(self, t, z):
        if self.prox_fn is None:
            raise NotImplementedError("custom coupling function has no primal prox")
        return self.prox_fn(t, z)

    def params(self) -> dict:
        return {"tag": self.tag, "l_h": self.l_h}


CouplingFunction = IndicatorPoint | IndicatorBall | SmoothQuadratic | Custom


def conj_prox(h, alpha, x):
    """``prox_{alpha h*}(x)``."""
    if not alpha > 0:
        raise ValueError(f"conjugate prox step must be positive, got {alpha}")
    return h.conj_prox(alpha, np.asarray(x, dtype=float))


# -- agents and problems -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class AgentSpec:
    """Private data of one agent.

    ``g_prox(step, x)`` is ``prox_{step g_i}``; ``None`` means ``g_i = 0``.
    ``f`` (value oracle) is optional and only used by diagnostics.
    """

    A: np.ndarray
    f_grad: Callable
    mu: float
    l: float
    g_prox: Callable | None = None
    f: Callable | None = None
    tag: str = ""

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", A)
        if self.mu < 0 or not self.l > 0:
            raise ValueError(f"need mu >= 0 and l > 0, got mu={self.mu}, l={self.l}")
        if self.mu > self.l * (1 + 1e-12):
            raise ValueError(f"strong convexity {self.mu} exceeds smoothness {self.l}")

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def p(self) -> int:
        return self.A.shape[0]

    def prox(self, step, x):
        if self.g_prox is None or step == 0:
            return x
        return self.g_prox(step, x)


@dataclass(frozen=True, eq=False)
class Problem:
    agents: list[AgentSpec]
    h: CouplingFunction
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.agents:
            raise ValueError("problem needs at least one agent")
        ps = {a.p for a in self.agents}
        if len(ps) != 1:
            raise ValueError(f"coupling blocks disagree on row count: {sorted(ps)}")
        if self.mu == 0:
            warnings.warn(
                "some local cost has mu = 0; linear-rate guarantees need strong convexity",
                stacklevel=3,
            )

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def p(self) -> int:
        return self.agents[0].p

    @cached_property
    def sizes(self) -> list[int]:
        return [a.d for a in self.agents]

    @property
    def d(self) -> int:
        return sum(self.sizes)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def mu(self) -> float:
        return min(a.mu for a in self.agents)

    @property
    def l(self) -> float:
        return max(a.l for a in self.agents)

    @cached_property
    def sigma_max_A_block(self) -> float:
        """Largest singular value of ``blockdiag(A_1, ..., A_n)``."""
        return max(float(np.linalg.norm(a.A, 2)) for a in self.agents)

    @cached_property
    def A_full(self) -> np.ndarray:
        return np.hstack([a.A for a in self.agents])

    @property
    def g_zero(self) -> bool:
        return all(a.g_prox is None for a in self.agents)

    def split(self, x) -> list[np.ndarray]:
        o = self.offsets
        return [x[o[i]:o[i + 1]] for i in range(self.n)]

    def grad(self, x) -> np.ndarray:
        return np.concatenate([a.f_grad(xi) for a, xi in zip(self.agents, self.split(x))])

    def prox_g(self, step, x) -> np.ndarray:
        if self.g_zero:
            return x
        return np.concatenate([a.prox(step, xi) for a, xi in zip(self.agents, self.split(x))])

    def apply_blocks(self, x) -> np.ndarray:
        """``(n, p)`` array whose row ``i`` is ``A_i x_i``."""
        return np.stack([a.A @ xi for a, xi in zip(self.agents, self.split(x))])

    def apply_blocks_T(self, lam) -> np.ndarray:
        """Stacked ``A_i^T lam_i`` for an ``(n, p)`` dual array."""
        return np.concatenate([a.A.T @ lam[i] for i, a in enumerate(self.agents)])

    def fingerprint(self) -> str:
        """Content hash of the problem data (coupling blocks, moduli, ``h``)."""
        hsh = hashlib.sha256()
        hsh.update(self.name.encode())
        for a in self.agents:
            hsh.update(np.ascontiguousarray(a.A).tobytes())
            hsh.update(f"{a.mu!r},{a.l!r},{a.tag}".encode())
        hsh.update(repr((self.h.kind, self.h.params())).encode())
        return hsh.hexdigest()[:16]


# -- partitions and experiment problems --------------------------------------


def partition_features(d: int, n_agents: int) -> list[int]:
    """Split ``d`` columns into ``n_agents`` blocks of ``d // n_agents``;
    the last block takes the remainder (14 into 13 gives twelve 1s and a 2)."""
    if not 1 <= n_agents <= d:
        raise ValueError(f"cannot split {d} columns among {n_agents} agents")
    base = d // n_agents
    return [base] * (n_agents - 1) + [d - base * (n_agents - 1)]


def _column_blocks(X, partition):
    partition = [int(k) for k in partition]
    if any(k <= 0 for k in partition):
        raise ValueError(f"partition entries must be positive: {partition}")
    if sum(partition) != X.shape[1]:
        raise ValueError(f"partition sums to {sum(partition)} but X has {X.shape[1]} columns")
    edges = np.concatenate([[0], np.cumsum(partition)])
    return [X[:, edges[i]:edges[i + 1]] for i in range(len(partition))]


def _quadratic_agent(A, weight, g_prox=None, tag="quad"):
    return AgentSpec(
        A=A,
        f_grad=lambda x, w=weight: w * x,
        mu=weight,
        l=weight,
        g_prox=g_prox,
        f=lambda x, w=weight: 0.5 * w * float(x @ x),
        tag=f"{tag}({weight!r})",
    )


def build_ridge_problem(X, Y, partition, radius=None, tol=1e-10) -> Problem:
    """``min sum_i ||x_i||^2 / 2`` subject to ``||sum_i X_i x_i - Y|| <= radius``.

    ``radius`` defaults to ``0.1 * ||Y||``.  ``X`` must have full row rank.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    sv = np.linalg.svd(X, compute_uv=False)
    if X.shape[0] > X.shape[1] or sv[-1] <= tol * max(sv[0], 1.0):
        smallest = sv[-1] if X.shape[0] <= X.shape[1] else 0.0
        raise ValueError(f"X must have full row rank; smallest singular value {smallest:.3e}")
    if radius is None:
        radius = 0.1 * float(np.linalg.norm(Y))
    agents = [_quadratic_agent(Xi, 1.0) for Xi in _column_blocks(X, partition)]
    return Problem(agents, IndicatorBall(Y, float(radius)), name="ridge",
                   meta={"radius": float(radius)})


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def logistic_slack_agent(Y, slack_reg=0.0) -> AgentSpec:
    """Agent owning ``z`` with ``f(z) = mean_j log(1 + exp(-y_j z_j)) + slack_reg ||z||^2 / 2``."""
    Y = np.asarray(Y, dtype=float)
    p = Y.size

    def grad(z):
        return -Y * _sigmoid(-Y * z) / p + slack_reg * z

    def value(z):
        return float(np.mean(np.logaddexp(0.0, -Y * z))) + 0.5 * slack_reg * float(z @ z)

    return AgentSpec(A=-np.eye(p), f_grad=grad, mu=slack_reg, l=1.0 / (4 * p) + slack_reg,
                     f=value, tag=f"logistic_slack({slack_reg!r})")


def build_logistic_problem(X, Y, partition, rho, slack_reg=0.0) -> Problem:
    """L2-regularized logistic regression with a slack agent.

    Feature agents hold ``rho ||x_i||^2 / 2`` and ``A_i = X_i``; an extra agent
    holds the loss on ``z`` with ``A = -I``; ``h`` is the indicator of ``{0}``.
    ``slack_reg > 0`` adds ``slack_reg ||z||^2 / 2`` to restore strong convexity.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if not np.all(np.isin(Y, (-1.0, 1.0))):
        raise ValueError("logistic labels must be +1 or -1")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if slack_reg < 0:
        raise ValueError(f"slack regularization must be nonnegative, got {slack_reg}")
    agents = [_quadratic_agent(Xi, float(rho)) for Xi in _column_blocks(X, partition)]
    if slack_reg == 0:
        warnings.warn(
            "logistic slack agent has mu = 0 (no strong convexity); "
            "pass slack_reg > 0 to restore linear-rate guarantees",
            stacklevel=2,
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        agents.append(logistic_slack_agent(Y, slack_reg))
        return Problem(agents, IndicatorPoint(np.zeros(X.shape[0])), name="logistic",
                       meta={"rho": float(rho), "slack_reg": float(slack_reg)})


def build_elastic_net_problem(X, Y, partition, alpha_reg, rho) -> Problem:
    """Elastic net ``||X theta - Y||^2 / (2p) + alpha_reg rho ||theta||_1
    + alpha_reg (1 - rho) ||theta||^2 / 2`` split by columns."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if not 0 <= rho < 1:
        raise ValueError(f"rho must lie in [0, 1) to keep strong convexity, got {rho}")
    if not alpha_reg > 0:
        raise ValueError(f"alpha_reg must be positive, got {alpha_reg}")
    weight = alpha_reg * (1.0 - rho)
    l1 = alpha_reg * rho
    g = None if rho == 0 else (lambda step, x, t=l1: soft_threshold(step * t, x))
    agents = [_quadratic_agent(Xi, weight, g_prox=g, tag=f"enet[{l1!r}]")
              for Xi in _column_blocks(X, partition)]
    p = X.shape[0]
    return Problem(agents, SmoothQuadratic(Y, 1.0 / (2 * p)), name="elastic_net",
                   meta={"alpha_reg": float(alpha_reg), "rho": float(rho)})


# -- datasets ----------------------------------------------------------------


def load_csv_dataset(path, standardize=True, add_intercept=True):
    """Read a numeric CSV whose last column is the label.

    Standardization uses the population standard deviation (divide by the
    number of rows); constant columns are only centred.
    """
    rows = []
    with open(Path(path), newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric cell in {rec!r}") from None
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    width = len(rows[0])
    for i, r in enumerate(rows, start=1):
        if len(r) != width:
            raise ValueError(f"{path}: ragged rows (row {i} has {len(r)} cells, expected {width})")
    if width < 2:
        raise ValueError(f"{path}: need at least one feature column and a label column")
    data = np.array(rows)
    X, Y = data[:, :-1], data[:, -1]
    if standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        X = (X - mean) / np.where(std > 0, std, 1.0)
    if add_intercept:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
    return X, Y


def synthesize_dataset(p, d, cond=10.0, seed=0, noise=0.01, full_row_rank=True,
                       labels=False, scale=1.0):
    """Random ``X = U diag(s) V^T`` with singular values geometric from ``scale``
    down to ``scale / cond``.

    ``Y = X theta + noise``; with ``labels=True`` it is mapped to ``sign`` in {+1, -1}.
    """
    if cond < 1:
        raise ValueError(f"condition number must be >= 1, got {cond}")
    if full_row_rank and p > d:
        raise ValueError(f"full row rank needs p <= d, got p={p}, d={d}")
    rng = np.random.default_rng(seed)
    r = min(p, d)
    U, _ = np.linalg.qr(rng.standard_normal((p, r)))
    V, _ = np.linalg.qr(rng.standard_normal((d, r)))
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    s = scale * cond ** (-np.arange(r) / max(r - 1, 1))
    X = (U * s) @ V.T
    theta = rng.standard_normal(d)
    Y = X @ theta + noise * rng.standard_normal(p)
    if labels:
        Y = np.where(Y >= 0, 1.0, -1.0)
    return X, Y

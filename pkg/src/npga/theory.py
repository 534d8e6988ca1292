"""Step-size boxes, linear-rate certificates and proof Lyapunov functions.

Four certified regimes are covered:

``Case1``
    ``g = 0``, ``A`` full row rank, ``Null(C) = span(1)``.
``Case1_ATC``
    as ``Case1`` plus ``D^2 <= I - B^2``; relaxes ``gamma < 1`` and tightens the rate.
``Indicator``
    ``g = 0``, ``A`` full row rank, ``h`` the indicator of ``{b}``,
    ``D (I - C) D <= I - B^2``, ``theta = 0``; allows ``C = 0``.
``Smooth``
    ``h`` is ``l_h``-smooth; no rank condition on ``A`` and ``g`` may be nonzero.

All spectral quantities come from dense symmetric eigendecompositions, so the
lifted ``np x np`` matrices ``E`` and ``F`` are only practical for ``np`` up to a
few thousand.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from npga.problem import IndicatorPoint, Problem
from npga.schemes import NetworkScheme, check_assumptions
from npga.solver import AssumptionError, SolverState, StepSizes

CASES = ("Case1", "Case1_ATC", "Indicator", "Smooth")
DEFAULT_THETA = {"Case1": 1.0, "Case1_ATC": 1.0, "Indicator": 0.0, "Smooth": 0.0}

# Strong convexity of the per-agent dual term (beta/n) h*: the dual prox in the
# iteration runs at step beta/n, so the modulus entering the smooth-case rate is
# beta / (n l_h).  "literal" uses beta / l_h instead.
SMOOTH_MODULUS = ("per_agent", "literal")


def _case(name: str) -> str:
    for c in CASES:
        if c.lower() == str(name).lower().replace("-", "_"):
            return c
    raise ValueError(f"unknown case {name!r}; expected one of {CASES}")


@dataclass(frozen=True)
class Bound:
    """Upper bound on a step size; ``strict`` means ``<``, otherwise ``<=``."""

    value: float
    strict: bool

    def admits(self, x, safety=0.999) -> bool:
        if self.strict:
            return x <= safety * self.value
        return x <= self.value * (1.0 + 1e-12)

    def as_dict(self):
        return {"value": self.value, "strict": self.strict}


# -- spectral quantities -----------------------------------------------------


@dataclass(frozen=True)
class Spectral:
    sigma_max_C: float
    sigma_max_B: float
    sigma_min_nz_B: float
    sigma_max_A_block: float


def spectral_quantities(scheme: NetworkScheme, problem: Problem, tol=1e-9) -> Spectral:
    """``sigma_max(C)``, ``sigma_max(B)``, ``sigma_min_nz(B)`` and ``max_i ||A_i||``."""
    c_eig = np.linalg.eigvalsh(scheme.C)
    b_eig = np.linalg.eigvalsh(scheme.B2)
    top = float(b_eig[-1])
    if top <= tol:
        raise ValueError("B^2 has no nonzero eigenvalue")
    nz = b_eig[b_eig > tol * top]
    return Spectral(
        sigma_max_C=float(np.abs(c_eig).max()),
        sigma_max_B=math.sqrt(top),
        sigma_min_nz_B=math.sqrt(float(nz[0])),
        sigma_max_A_block=problem.sigma_max_A_block,
    )


def _block_AAT(problem: Problem) -> np.ndarray:
    p, n = problem.p, problem.n
    M = np.zeros((n * p, n * p))
    for i, a in enumerate(problem.agents):
        M[i * p:(i + 1) * p, i * p:(i + 1) * p] = a.A @ a.A.T
    return M


def _lift(M, p):
    return np.kron(M, np.eye(p))


@dataclass(frozen=True)
class LiftedMatrix:
    """A symmetric lifted matrix with its smallest eigenvalue."""

    M: np.ndarray
    eta_min: float
    positive_definite: bool


def _lifted(M, tol) -> LiftedMatrix:
    M = 0.5 * (M + M.T)
    eig = np.linalg.eigvalsh(M)
    scale = max(1.0, float(np.abs(eig).max()))
    return LiftedMatrix(M, float(eig[0]), bool(eig[0] > tol * scale))


def coupled_gram(problem: Problem, M, H, c, tol=1e-10) -> LiftedMatrix:
    """``(M kron I_p) A A^T (M kron I_p) + c (H kron I_p)`` with ``A = blockdiag(A_i)``.

    Positive definite when ``M`` is symmetric doubly stochastic, ``H`` is PSD with
    ``Null(H) = span(1)``, ``c > 0`` and ``[A_1 ... A_n]`` has full row rank.
    """
    p = problem.p
    Ml = _lift(np.asarray(M, dtype=float), p)
    G = Ml @ _block_AAT(problem) @ Ml + c * _lift(np.asarray(H, dtype=float), p)
    return _lifted(G, tol)


def build_E(problem: Problem, C, alpha, beta, tol=1e-10) -> LiftedMatrix:
    """``E = blockdiag(A_i A_i^T) + C kron I_p / (2 alpha beta)``."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    return coupled_gram(problem, np.eye(problem.n), C, 1.0 / (2.0 * alpha * beta), tol)


def build_F(problem: Problem, scheme: NetworkScheme, alpha, beta, gamma, tol=1e-10) -> LiftedMatrix:
    """``F = D A A^T D + (1 - gamma) B^2 / (alpha beta)`` (all lifted)."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if gamma > 1:
        raise ValueError(f"F needs gamma <= 1, got {gamma}")
    return coupled_gram(problem, scheme.D, scheme.B2, (1.0 - gamma) / (alpha * beta), tol)


# -- applicability -----------------------------------------------------------


def _full_row_rank(problem, tol=1e-10) -> tuple[bool, float]:
    sv = np.linalg.svd(problem.A_full, compute_uv=False)
    if problem.A_full.shape[0] > problem.A_full.shape[1]:
        return False, 0.0
    return bool(sv[-1] > tol * max(1.0, sv[0])), float(sv[-1])


def case_failures(case, problem: Problem, scheme: NetworkScheme, theta=None) -> list[tuple[str, str]]:
    """Named assumptions that keep ``case`` from applying, as ``(culprit, detail)`` pairs."""
    case = _case(case)
    rep = check_assumptions(scheme)
    out = [(k, "structural scheme condition") for k in rep.failing(["a4"])]
    if problem.mu <= 0:
        out.append(("mu", "local costs are not strongly convex"))
    if case in ("Case1", "Case1_ATC", "Indicator"):
        if not problem.g_zero:
            out.append(("g_zero", "nonsmooth local terms present"))
        ok, smin = _full_row_rank(problem)
        if not ok:
            out.append(("full_row_rank", f"smallest singular value of A {smin:.3e}"))
    if case in ("Case1", "Case1_ATC") and not rep.a6.passed:
        out.append(("a6", "Null(C) != span(1)"))
    if case == "Case1_ATC" and not rep.a7.passed:
        out.append(("a7", f"I - B^2 - D^2 has eigenvalue {rep.a7.witness:.3e}"))
    if case == "Indicator":
        if not isinstance(problem.h, IndicatorPoint):
            out.append(("indicator", "h is not the indicator of a point"))
        if not rep.a9.passed:
            out.append(("a9", f"I - B^2 - D(I - C)D has eigenvalue {rep.a9.witness:.3e}"))
        if theta is not None and theta != 0:
            out.append(("theta", f"the indicator case needs theta = 0, got {theta}"))
    if case == "Smooth" and problem.h.l_h is None:
        out.append(("h_smooth", "h has no smoothness constant"))
    return out


def applicable_cases(problem, scheme, theta=None) -> list[str]:
    th = scheme.pinned.get("theta", theta)
    return [c for c in CASES if not case_failures(c, problem, scheme, th)]


def _require(case, problem, scheme, theta):
    bad = case_failures(case, problem, scheme, theta)
    if bad:
        culprit, detail = bad[0]
        raise AssumptionError(culprit, f"{case}: {detail}")


# -- certificates ------------------------------------------------------------


@dataclass
class RateCertificate:
    case: str
    theta: float
    alpha_max: Bound
    beta_max: Bound
    gamma_max: Bound | None
    sigma_max_A_block: float
    sigma_max_C: float
    sigma_max_B: float
    sigma_min_nz_B: float
    mu: float
    l: float
    l_h: float | None = None
    smooth_modulus: str = "per_agent"
    steps: StepSizes | None = None
    delta: float | None = None
    delta1: float | None = None
    delta2: float | None = None
    delta3: float | None = None
    omega: float | None = None
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    kappa: float | None = None
    eta_min_nz_E: float | None = None
    eta_min_nz_F: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("alpha_max", "beta_max", "gamma_max"):
            b = getattr(self, k)
            d[k] = b.as_dict() if b is not None else None
        d["steps"] = self.steps.as_dict() if self.steps is not None else None
        return d

    def to_json(self, **kw) -> str:
        kw.setdefault("indent", 2)
        kw.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **kw)


def _beta_bound_value(case, mu, sA, sC, theta):
    if case == "Indicator":
        return mu * (1.0 - sC) / sA**2
    return mu / (sA**2 * (1.0 / (1.0 - sC) + theta))


def _dlm_beta_bound(case, problem, scheme, theta):
    # C = c beta L, so sigma_max(C) grows with beta; the bound is the largest
    # beta meeting its own inequality.
    cl = float(np.linalg.eigvalsh(scheme.C)[-1]) / scheme.beta
    mu, sA = problem.mu, problem.sigma_max_A_block

    def ok(b):
        sC = cl * b
        return sC < 1.0 and b <= _beta_bound_value(case, mu, sA, sC, theta)

    lo, hi = 0.0, 1.0 / cl
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def _kappa(beta, problem, modulus):
    l_h = problem.h.l_h
    return 1.0 + beta / (l_h * problem.n if modulus == "per_agent" else l_h)


def gamma_bound(cert: RateCertificate, problem, scheme, alpha, beta) -> Bound:
    """The ``gamma`` bound of ``cert.case`` once ``alpha`` and ``beta`` are fixed."""
    scheme = scheme.with_beta(beta)
    # B depends on beta for NPGA-DLM, so sigma_max(B) is taken at this beta
    sB2 = float(np.linalg.eigvalsh(scheme.B2)[-1])
    if cert.case == "Case1":
        E = build_E(problem, scheme.C, alpha, beta)
        if not E.positive_definite:
            raise AssumptionError("E_definite", f"smallest eigenvalue of E is {E.eta_min:.3e}")
        return Bound(min(1.0, alpha * beta * E.eta_min / sB2), True)
    if cert.case == "Smooth":
        k2 = _kappa(beta, problem, cert.smooth_modulus) ** 2
        return Bound(min(1.0, (k2 - 1.0) / (k2 * sB2)), True)
    return Bound(1.0, True)


def step_bounds(case, problem: Problem, scheme: NetworkScheme, theta=None, alpha=None,
                beta=None, smooth_modulus="per_agent", check=True) -> RateCertificate:
    """Admissible step-size box of ``case``.

    ``gamma_max`` depends on ``(alpha, beta)`` in the ``Case1`` and ``Smooth``
    regimes; it is filled in only when both are given (see :func:`gamma_bound`).
    ``check=False`` evaluates the formulas without testing the case assumptions
    (used for forced runs; the result certifies nothing).
    """
    case = _case(case)
    if smooth_modulus not in SMOOTH_MODULUS:
        raise ValueError(f"smooth_modulus must be one of {SMOOTH_MODULUS}")
    if theta is None:
        theta = scheme.pinned.get("theta", DEFAULT_THETA[case])
    if theta < 0:
        raise ValueError(f"theta must be nonnegative, got {theta}")
    if check:
        _require(case, problem, scheme, theta)
    if beta is not None:
        scheme = scheme.with_beta(beta)
    sp = spectral_quantities(scheme, problem)
    mu, l = problem.mu, problem.l

    if case == "Smooth":
        a_max = min(mu / (l**2 * (1 + 2 * theta)), 1.0 / (2 * l - mu))
    elif case == "Indicator":
        a_max = 1.0 / l
    else:
        a_max = 1.0 / (l * (1 + 2 * theta))

    if scheme.name == "NPGA-DLM":
        b_max = _dlm_beta_bound(case, problem, scheme, theta)
    else:
        b_max = _beta_bound_value(case, mu, sp.sigma_max_A_block, sp.sigma_max_C, theta)

    cert = RateCertificate(
        case=case, theta=float(theta),
        alpha_max=Bound(a_max, True), beta_max=Bound(b_max, False), gamma_max=None,
        sigma_max_A_block=sp.sigma_max_A_block, sigma_max_C=sp.sigma_max_C,
        sigma_max_B=sp.sigma_max_B, sigma_min_nz_B=sp.sigma_min_nz_B,
        mu=mu, l=l, l_h=problem.h.l_h, smooth_modulus=smooth_modulus,
    )
    if case in ("Case1_ATC", "Indicator"):
        cert.gamma_max = Bound(1.0, True)
    elif alpha is not None and beta is not None:
        cert.gamma_max = gamma_bound(cert, problem, scheme, alpha, beta)
    return cert


def rate(case, problem: Problem, scheme: NetworkScheme, steps: StepSizes, safety=0.999,
         smooth_modulus="per_agent") -> RateCertificate:
    """Full certificate for ``steps``: contraction factor and Lyapunov weights.

    Raises
    ------
    AssumptionError
        A case assumption fails.
    ValueError
        ``steps`` lie outside the box; the message names the violated inequality.
    """
    case = _case(case)
    a, b, g, th = steps.alpha, steps.beta, steps.gamma, steps.theta
    cert = step_bounds(case, problem, scheme, theta=th, alpha=a, beta=b,
                       smooth_modulus=smooth_modulus)
    scheme = scheme.with_beta(b)
    for name, val, bnd in (("alpha", a, cert.alpha_max), ("beta", b, cert.beta_max),
                           ("gamma", g, cert.gamma_max)):
        if not bnd.admits(val, safety):
            op = "<" if bnd.strict else "<="
            raise ValueError(f"{case}: {name} = {val!r} violates {name} {op} {bnd.value!r}")

    mu, l = problem.mu, problem.l
    sA, sC, sB, sb = cert.sigma_max_A_block, cert.sigma_max_C, cert.sigma_max_B, cert.sigma_min_nz_B
    omega = 1.0 - g * sB**2
    c1 = 1.0 - a * b * sA**2 * (1.0 / (1.0 - sC) + th)
    c2 = a / b
    c3 = a / (b * g)
    delta3 = 1.0 - g * sb**2

    if case in ("Case1", "Case1_ATC"):
        E = build_E(problem, scheme.C, a, b)
        if not E.positive_definite:
            raise AssumptionError("E_definite", f"smallest eigenvalue of E is {E.eta_min:.3e}")
        delta1 = 1.0 - a * mu * (1.0 - a * l * (1 + 2 * th))
        delta2 = 1.0 - a * b * E.eta_min
        delta = max(delta1, delta2 / omega if case == "Case1" else delta2, delta3)
        cert.eta_min_nz_E = E.eta_min
    elif case == "Indicator":
        F = build_F(problem, scheme, a, b, g)
        if not F.positive_definite:
            raise AssumptionError("F_definite", f"smallest eigenvalue of F is {F.eta_min:.3e}")
        delta1 = 1.0 - a * mu * (1.0 - a * l)
        delta2 = 1.0 - a * b * F.eta_min
        delta = max(delta1, delta2, delta3)
        cert.eta_min_nz_F = F.eta_min
    else:
        kappa = _kappa(b, problem, smooth_modulus)
        delta1 = 1.0 - a * (mu - 2 * th * a * l**2)
        delta2 = 1.0 / (kappa**2 * omega)
        delta = max(delta1, delta2, delta3)
        cert.kappa = kappa

    cert.steps = steps
    cert.delta, cert.delta1, cert.delta2, cert.delta3 = delta, delta1, delta2, delta3
    cert.omega, cert.c1, cert.c2, cert.c3 = omega, c1, c2, c3
    if not c1 > 0:
        raise ValueError(f"{case}: Lyapunov weight c1 = {c1!r} is not positive")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"{case}: contraction factor {delta!r} outside (0, 1)")
    return cert


def suggest_steps(case, problem, scheme, theta=None, safety=0.9,
                  smooth_modulus="per_agent", check=True) -> StepSizes:
    """``safety`` times each bound; ``gamma`` is set after ``alpha`` and ``beta``.

    Solver parameters pinned by a scheme alias (``theta`` for DCPA, ``theta``
    and ``gamma`` for DCDA) override the suggestion.
    """
    case = _case(case)
    pinned = scheme.pinned
    theta = pinned.get("theta", DEFAULT_THETA[case] if theta is None else theta)
    cert = step_bounds(case, problem, scheme, theta=theta, smooth_modulus=smooth_modulus,
                       check=check)
    alpha = safety * cert.alpha_max.value
    beta = safety * cert.beta_max.value
    if "gamma" in pinned:
        gamma = pinned["gamma"]
    else:
        gamma = safety * gamma_bound(cert, problem, scheme, alpha, beta).value
    return StepSizes(alpha=alpha, beta=beta, gamma=gamma, theta=theta)


@dataclass
class AutoChoice:
    case: str | None
    steps: StepSizes
    certificate: RateCertificate | None
    candidates: dict


def tightest(problem, scheme, theta=None, safety=0.9, smooth_modulus="per_agent") -> AutoChoice:
    """Among the applicable cases, the suggested steps with the smallest certified ``delta``.

    When a pinned parameter puts the steps outside every box (``gamma = 1`` for
    DCDA) the steps of the first applicable case are returned uncertified.
    """
    cands = {}
    fallback = None
    for case in CASES:
        th = scheme.pinned.get("theta", DEFAULT_THETA[case] if theta is None else theta)
        if case_failures(case, problem, scheme, th):
            continue
        steps = suggest_steps(case, problem, scheme, theta=th, safety=safety,
                              smooth_modulus=smooth_modulus)
        fallback = fallback or (case, steps)
        try:
            cands[case] = (steps, rate(case, problem, scheme, steps, smooth_modulus=smooth_modulus))
        except ValueError:
            continue
    if cands:
        best = min(cands, key=lambda c: cands[c][1].delta)
        steps, cert = cands[best]
        return AutoChoice(best, steps, cert, {c: v[1].delta for c, v in cands.items()})
    if fallback is None:
        raise AssumptionError("no_case", f"no certified regime applies to {scheme.label}")
    return AutoChoice(None, fallback[1], None, {})


# -- Lyapunov functions ------------------------------------------------------


def lyapunov(cert: RateCertificate, state: SolverState, fixed_point, scheme: NetworkScheme,
             steps: StepSizes | None = None) -> float:
    """The proof Lyapunov function of ``cert.case`` at ``state``.

    ``fixed_point`` is an :class:`npga.oracle.FixedPoint`.  The indicator-case
    function weights the ``v`` error by ``I - gamma B^2``.
    """
    if state.y is None:
        raise ValueError("Lyapunov functions need the y sequence (four-sequence engine)")
    fp = fixed_point
    for name in ("x_star", "lambda_star", "v_star", "y_star_c"):
        if getattr(fp, name, None) is None:
            raise ValueError(f"fixed point lacks {name}")
    g = (steps or cert.steps).gamma
    ex = float(np.sum((state.x - fp.x_star) ** 2))
    el = float(np.sum((state.lam - fp.lambda_star[None, :]) ** 2))
    ey = float(np.sum((state.y - fp.y_star_c) ** 2))
    c1, c2, c3 = cert.c1, cert.c2, cert.c3
    if cert.case == "Case1":
        return (c1 * ex + c3 * ey) / cert.omega + c2 * el
    if cert.case == "Case1_ATC":
        return c1 * ex + c2 * el + c3 * ey
    if cert.case == "Indicator":
        ev = state.v - fp.v_star[None, :]
        weighted = ev - g * (scheme.with_beta(cert.steps.beta).B2 @ ev)
        return c1 * ex + c2 * float(np.sum(ev * weighted)) + c3 * ey
    return cert.delta2 * ex + c2 * el + c3 * cert.delta2 * ey

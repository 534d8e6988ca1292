"""Network-matrix schemes ``(B^2, C, D)`` that define the NPGA variants.

All matrices are kept at ``n x n``; they act on per-agent blocks stored as
rows of an ``(n, p)`` array, which is the same as applying ``M kron I_p`` to
the stacked vector.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from npga.graph import Check, MixingMatrix

SCHEMES = {
    # lazy: row meets B^2 <= I and C < I only after W -> (I + W) / 2
    "NPGA-DIGing": dict(comm_rounds=2, lazy=True, atc=False),
    "NPGA-EXTRA": dict(comm_rounds=1, lazy=False, atc=False),
    "NPGA-DLM": dict(comm_rounds=1, lazy=False, atc=False),
    "NPGA-P2D2": dict(comm_rounds=1, lazy=False, atc=False),
    "NPGA-Aug-DGM": dict(comm_rounds=2, lazy=True, atc=True),
    "NPGA-ATC-tracking": dict(comm_rounds=2, lazy=True, atc=True),
    "NPGA-Exact-diffusion": dict(comm_rounds=1, lazy=False, atc=True),
    "NPGA-NIDS": dict(comm_rounds=1, lazy=False, atc=True),
    "NPGA-I": dict(comm_rounds=2, lazy=True, atc=True),
    "NPGA-II": dict(comm_rounds=2, lazy=True, atc=True),
}

# alias -> (scheme, forced c_param, solver parameters pinned by the alias)
ALIASES = {
    "DCPA": ("NPGA-P2D2", 1.0, {"theta": 1.0}),
    "DCDA": ("NPGA-Exact-diffusion", None, {"theta": 0.0, "gamma": 1.0}),
}


def _key(name: str) -> str:
    return name.replace("_", "-").replace(" ", "-").lower()


_LOOKUP = {_key(k): k for k in SCHEMES} | {_key(k): k for k in ALIASES}
# short names without the prefix ("nids", "extra"); "I" and "II" stay prefixed
_LOOKUP |= {_key(k)[5:]: k for k in SCHEMES if k not in ("NPGA-I", "NPGA-II")}


def canonical_name(name: str) -> str:
    try:
        return _LOOKUP[_key(name)]
    except KeyError:
        known = ", ".join(list(SCHEMES) + list(ALIASES))
        raise ValueError(f"unknown scheme {name!r}; known: {known}") from None


def principal_sqrt(M, tol: float = 1e-9) -> np.ndarray:
    """Symmetric PSD square root via a dense eigendecomposition.

    Eigenvalues of magnitude at most ``tol * max(1, ||M||)`` are treated as
    exact zeros (their square roots would otherwise leak ``sqrt(eps)`` noise into
    the null space); anything more negative is rejected.
    """
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    eig, vec = np.linalg.eigh(M)
    scale = max(1.0, float(np.abs(eig).max()) if eig.size else 0.0)
    if eig.size and eig[0] < -tol * scale:
        raise ValueError(f"matrix is not positive semidefinite: eigenvalue {eig[0]:.3e}")
    root = np.sqrt(np.where(eig > tol * scale, eig, 0.0))
    S = (vec * root) @ vec.T
    return 0.5 * (S + S.T)


@dataclass(frozen=True, eq=False)
class NetworkScheme:
    """One NPGA variant. ``B`` is derived lazily from ``B2``."""

    name: str
    B2: np.ndarray
    C: np.ndarray
    D: np.ndarray
    comm_rounds: int
    c_param: float | None = None
    beta: float | None = None
    lazy: bool = False
    alias: str | None = None
    pinned: dict = field(default_factory=dict)
    W: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.B2.shape[0]

    @property
    def label(self) -> str:
        return self.alias or self.name

    @property
    def is_atc(self) -> bool:
        return not np.allclose(self.D, np.eye(self.n))

    @cached_property
    def B(self) -> np.ndarray:
        return principal_sqrt(self.B2)

    def with_beta(self, beta: float) -> NetworkScheme:
        """Rebuild a beta-dependent scheme (NPGA-DLM); other schemes are returned as is."""
        if self.name != "NPGA-DLM" or beta == self.beta:
            return self
        return build_scheme(self.alias or self.name, MixingMatrix(self.W), self.c_param,
                            beta=beta, lazy=self.lazy)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "alias": self.alias,
            "c_param": self.c_param,
            "beta": self.beta,
            "lazy": self.lazy,
            "comm_rounds": self.comm_rounds,
            "pinned": dict(self.pinned),
            "B2": self.B2.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def build_scheme(name, W, c_param=None, beta=None, lazy=False) -> NetworkScheme:
    """Assemble ``(B^2, C, D)`` for a named NPGA variant.

    Parameters
    ----------
    name : str
        One of :data:`SCHEMES` or an alias in :data:`ALIASES` (``DCPA``, ``DCDA``).
    W : MixingMatrix or ndarray
        Mixing matrix of the communication graph.
    c_param : float, optional
        Tunable constant for NPGA-DLM, NPGA-P2D2 and NPGA-NIDS.
    beta : float, optional
        Dual step size; required by NPGA-DLM whose ``B^2 = C = c beta L``.
    lazy : bool
        Replace ``W`` by ``(I + W) / 2`` before building.
    """
    alias = None
    pinned = {}
    canon = canonical_name(name)
    if canon in ALIASES:
        alias = canon
        canon, forced_c, pinned = ALIASES[canon]
        if forced_c is not None:
            c_param = forced_c
    W = W.W if isinstance(W, MixingMatrix) else np.asarray(W, dtype=float)
    original_W = W
    n = W.shape[0]
    I = np.eye(n)
    if lazy:
        W = 0.5 * (I + W)
    Lw = I - W

    if canon in ("NPGA-DLM", "NPGA-P2D2", "NPGA-NIDS"):
        if c_param is None:
            c_param = 1.0 if canon == "NPGA-P2D2" else 0.5
        if c_param <= 0:
            raise ValueError(f"{canon} needs c_param > 0, got {c_param}")
    if canon == "NPGA-P2D2" and c_param > 1:
        warnings.warn(f"NPGA-P2D2 with c={c_param} > 1 may violate B^2 <= I", stacklevel=2)
    if canon == "NPGA-NIDS" and c_param > 0.5:
        warnings.warn(f"NPGA-NIDS with c={c_param} > 1/2 may violate B^2 <= I", stacklevel=2)

    if canon == "NPGA-DIGing":
        B2, C, D = Lw @ Lw, I - W @ W, I
    elif canon == "NPGA-EXTRA":
        B2, C, D = 0.5 * Lw, 0.5 * Lw, I
    elif canon == "NPGA-DLM":
        if beta is None:
            raise ValueError("NPGA-DLM depends on the dual step size; pass beta")
        # graph Laplacian is recovered from W's off-diagonal pattern
        adj = (np.abs(W - np.diag(np.diag(W))) > 0).astype(float)
        L = np.diag(adj.sum(axis=1)) - adj
        B2 = C = c_param * beta * L
        D = I
    elif canon == "NPGA-P2D2":
        B2, C, D = 0.5 * c_param * Lw, 0.5 * Lw, I
    elif canon == "NPGA-Aug-DGM":
        B2, C, D = Lw @ Lw, np.zeros((n, n)), W @ W
    elif canon == "NPGA-ATC-tracking":
        B2, C, D = Lw @ Lw, Lw, W
    elif canon == "NPGA-Exact-diffusion":
        B2, C, D = 0.5 * Lw, np.zeros((n, n)), 0.5 * (I + W)
    elif canon == "NPGA-NIDS":
        B2, C, D = c_param * Lw, np.zeros((n, n)), I - c_param * Lw
    elif canon == "NPGA-I":
        B2, C, D = Lw, np.zeros((n, n)), W @ W
    elif canon == "NPGA-II":
        B2, C, D = Lw, Lw, W
    else:  # pragma: no cover - canonical_name guards this
        raise ValueError(canon)

    sym = lambda M: 0.5 * (M + M.T)  # noqa: E731
    return NetworkScheme(
        name=canon,
        B2=sym(np.array(B2, dtype=float)),
        C=sym(np.array(C, dtype=float)),
        D=sym(np.array(D, dtype=float)),
        comm_rounds=SCHEMES[canon]["comm_rounds"],
        c_param=c_param,
        beta=beta if canon == "NPGA-DLM" else None,
        lazy=lazy,
        alias=alias,
        pinned=dict(pinned),
        W=original_W,
    )


def needs_lazy(name: str) -> bool:
    """Whether the variant only meets ``B^2 <= I`` / ``C < I`` after ``W -> (I+W)/2``."""
    canon = canonical_name(name)
    if canon in ALIASES:
        canon = ALIASES[canon][0]
    return SCHEMES[canon]["lazy"]


def _nullspace_is_ones(M, tol) -> tuple[bool, float]:
    """``Null(M) = span(1)`` for symmetric PSD ``M``.

    Witness is the second-smallest eigenvalue relative to the largest, or the
    residual ``||M 1||`` when the all-ones vector is not in the null space.
    """
    n = M.shape[0]
    ones = np.ones(n) / np.sqrt(n)
    eig = np.linalg.eigvalsh(M)
    top = max(float(np.abs(eig).max()), 1e-300)
    res = float(np.linalg.norm(M @ ones))
    if res > tol * top:
        return False, res
    if n == 1:
        return True, 0.0
    second = float(eig[1]) / top
    return second > tol, second


@dataclass
class AssumptionReport:
    a4_i: Check
    a4_ii: Check
    a4_iii: Check
    a4_iv: Check
    a6: Check
    a7: Check
    a9: Check

    NAMES = ("a4_i", "a4_ii", "a4_iii", "a4_iv", "a6", "a7", "a9")

    @property
    def a4(self) -> bool:
        return self.a4_i.passed and self.a4_ii.passed and self.a4_iii.passed and self.a4_iv.passed

    def passed(self, name: str) -> bool:
        if name == "a4":
            return self.a4
        return getattr(self, name).passed

    def failing(self, names) -> list[str]:
        out = []
        for name in names:
            if name == "a4":
                out += [k for k in self.NAMES[:4] if not getattr(self, k).passed]
            elif not getattr(self, name).passed:
                out.append(name)
        return out

    def as_dict(self) -> dict:
        return {
            k: {"passed": bool(getattr(self, k).passed), "witness": getattr(self, k).witness,
                "detail": getattr(self, k).detail}
            for k in self.NAMES
        }


def check_assumptions(s: NetworkScheme, tol: float = 1e-9) -> AssumptionReport:
    """Spectral checks of the structural assumptions on ``(B^2, C, D)``."""
    B2, C, D = s.B2, s.C, s.D
    n = B2.shape[0]
    if not (C.shape == D.shape == (n, n)):
        raise ValueError("scheme matrices must share one square shape")
    I = np.eye(n)

    c_norm = float(np.abs(C).max())
    if c_norm <= tol:
        a4_i = Check(True, c_norm, "C = 0")
    else:
        ok, w = _nullspace_is_ones(C, tol)
        a4_i = Check(ok, w, "Null(C) = span(1)")

    ok, w = _nullspace_is_ones(B2, tol)
    a4_ii = Check(ok, w, "Null(B^2) = span(1)")

    c_eig = np.linalg.eigvalsh(C)
    b_top = float(np.linalg.eigvalsh(B2)[-1])
    ok = c_eig[0] >= -tol and c_eig[-1] < 1.0 - tol and b_top <= 1.0 + tol
    worst = float(c_eig[0]) if c_eig[0] < -tol else (float(c_eig[-1]) if c_eig[-1] >= 1.0 - tol else b_top)
    a4_iii = Check(bool(ok), worst, "0 <= C < I and B^2 <= I")

    asym = float(np.abs(D - D.T).max())
    neg = float(D.min())
    rows = float(np.abs(D.sum(axis=1) - 1.0).max())
    cols = float(np.abs(D.sum(axis=0) - 1.0).max())
    ok = asym <= tol and neg >= -tol and rows <= tol and cols <= tol
    worst = max(asym, rows, cols, max(-neg, 0.0))
    a4_iv = Check(bool(ok), worst, "D symmetric, nonnegative, doubly stochastic")

    if c_norm <= tol:
        a6 = Check(False, c_norm, "C = 0 has a nontrivial null space")
    else:
        ok, w = _nullspace_is_ones(C, tol)
        a6 = Check(ok, w, "Null(C) = span(1)")

    r7 = float(np.linalg.eigvalsh(I - B2 - D @ D)[0])
    a7 = Check(r7 >= -tol, r7, "smallest eigenvalue of I - B^2 - D^2")

    r9 = float(np.linalg.eigvalsh(I - B2 - D @ (I - C) @ D)[0])
    a9 = Check(r9 >= -tol, r9, "smallest eigenvalue of I - B^2 - D(I - C)D")

    return AssumptionReport(a4_i, a4_ii, a4_iii, a4_iv, a6, a7, a9)

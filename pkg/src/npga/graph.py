"""Communication graphs and mixing matrices."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"graph needs at least one node, got n={self.n}")
        normalized = set()
        for e in self.edges:
            i, j = (int(e[0]), int(e[1]))
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
            pair = (min(i, j), max(i, j))
            if pair in normalized:
                raise ValueError(f"duplicate edge {pair}")
            normalized.add(pair)
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def from_edges(cls, n, edges) -> Graph:
        return cls(n, frozenset(tuple(e) for e in edges))

    @classmethod
    def complete(cls, n) -> Graph:
        return cls(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))

    @classmethod
    def path(cls, n) -> Graph:
        return cls(n, frozenset((i, i + 1) for i in range(n - 1)))

    @classmethod
    def cycle(cls, n) -> Graph:
        return cls(n, frozenset((min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n)))

    @property
    def m(self) -> int:
        return len(self.edges)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def neighbors(self) -> list[list[int]]:
        nbrs = [[] for _ in range(self.n)]
        for i, j in self.sorted_edges():
            nbrs[i].append(j)
            nbrs[j].append(i)
        return nbrs

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    def to_edgelist(self) -> str:
        """Serialize as ``"n m"`` followed by one ``"i j"`` line per edge."""
        lines = [f"{self.n} {self.m}"]
        lines += [f"{i} {j}" for i, j in self.sorted_edges()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist(cls, text: str) -> Graph:
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 2:
            raise ValueError("edge list must start with a 'n m' header line")
        n, m = int(rows[0][0]), int(rows[0][1])
        body = rows[1:]
        if len(body) != m:
            raise ValueError(f"header announces {m} edges, found {len(body)}")
        edges = []
        for r in body:
            if len(r) != 2:
                raise ValueError(f"malformed edge line: {' '.join(r)!r}")
            edges.append((int(r[0]), int(r[1])))
        return cls.from_edges(n, edges)

    def save(self, path) -> None:
        Path(path).write_text(self.to_edgelist())

    @classmethod
    def load(cls, path) -> Graph:
        return cls.from_edgelist(Path(path).read_text())


def erdos_renyi(n: int, prob: float, seed: int) -> Graph:
    """Draw a G(n, prob) graph; pairs ``(i, j)``, ``i < j`` are visited in
    lexicographic order and kept when a uniform draw falls below ``prob``."""
    if n < 2:
        raise ValueError(f"Erdos-Renyi graph needs n >= 2, got {n}")
    if not 0.0 < prob <= 1.0:
        raise ValueError(f"edge probability must lie in (0, 1], got {prob}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < prob
    return Graph(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())))


def connected_erdos_renyi(n: int, prob: float, seed: int, max_attempts: int = 1000):
    """Resample with ``seed, seed+1, ...`` until the draw is connected.

    Returns
    -------
    graph : Graph
    attempts : int
        Number of draws taken (1 when the first draw is connected).
    """
    for attempt in range(max_attempts):
        g = erdos_renyi(n, prob, seed + attempt)
        if is_connected(g):
            return g, attempt + 1
    raise RuntimeError(
        f"no connected G({n}, {prob}) draw within {max_attempts} attempts from seed {seed}"
    )


def is_connected(g: Graph) -> bool:
    nbrs = g.neighbors()
    seen = [False] * g.n
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return all(seen)


@dataclass(frozen=True)
class LaplacianMatrix:
    L: np.ndarray
    degrees: np.ndarray


@dataclass(frozen=True)
class MixingMatrix:
    W: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[0]

    def lazy(self) -> MixingMatrix:
        """Return ``(I + W) / 2``, whose spectrum lies in ``(0, 1]``."""
        return MixingMatrix(0.5 * (np.eye(self.n) + self.W))


def laplacian(g: Graph) -> LaplacianMatrix:
    deg = g.degrees()
    return LaplacianMatrix(np.diag(deg.astype(float)) - g.adjacency(), deg)


def mixing_matrix_laplacian(g: Graph, c: float = 1.0) -> MixingMatrix:
    """Laplacian-method mixing matrix ``W = I - L / (max_degree + c)``."""
    if c <= 0:
        raise ValueError(f"Laplacian-method constant must be positive, got {c}")
    if not is_connected(g):
        raise ValueError("mixing matrix requires a connected graph")
    lap = laplacian(g)
    tau = lap.degrees.max() + c
    return MixingMatrix(np.eye(g.n) - lap.L / tau)


@dataclass
class Check:
    passed: bool
    witness: float
    detail: str = ""


@dataclass
class ValidationReport:
    checks: dict[str, Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def __getitem__(self, name) -> Check:
        return self.checks[name]


def validate_mixing(W, g: Graph, tol: float = 1e-9) -> ValidationReport:
    """Check symmetry, sparsity pattern, null space and spectrum of ``W``."""
    W = W.W if isinstance(W, MixingMatrix) else np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape != (g.n, g.n):
        raise ValueError(f"mixing matrix shape {W.shape} does not match n={g.n}")
    n = g.n
    checks = {}

    asym = float(np.max(np.abs(W - W.T))) if n else 0.0
    checks["symmetry"] = Check(asym <= tol, asym, "max |W - W^T|")

    pattern = np.eye(n, dtype=bool) | g.adjacency().astype(bool)
    on = W[pattern]
    off = W[~pattern]
    min_on = float(on.min())
    max_off = float(np.max(np.abs(off))) if off.size else 0.0
    checks["sparsity"] = Check(
        min_on > tol and max_off <= tol,
        min_on if min_on <= tol else max_off,
        "w_ij > 0 on diagonal/edges, 0 elsewhere",
    )

    Ws = 0.5 * (W + W.T)
    eig = np.linalg.eigvalsh(np.eye(n) - Ws)
    ones_res = float(np.linalg.norm((np.eye(n) - W) @ np.ones(n)))
    lam2 = float(eig[1]) if n > 1 else 1.0
    checks["null_space"] = Check(
        ones_res <= tol * np.sqrt(n) and lam2 > tol,
        lam2,
        "(I - W) 1 = 0 and second-smallest eigenvalue of I - W positive",
    )

    w_eig = np.linalg.eigvalsh(Ws)
    lo, hi = float(w_eig[0]), float(w_eig[-1])
    checks["spectrum"] = Check(
        lo > -1.0 + tol and hi <= 1.0 + tol,
        lo if lo <= -1.0 + tol else hi,
        "eigenvalues of W in (-1, 1]",
    )
    return ValidationReport(checks)

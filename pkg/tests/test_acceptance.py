"""Acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line; the lines are
also collected and repeated in the pytest terminal summary.
"""

import json
import time
from dataclasses import replace

import numpy as np

from npga import oracle, theory
from npga.cli import main
from npga.graph import connected_erdos_renyi, mixing_matrix_laplacian
from npga.problem import AgentSpec, IndicatorBall, Problem, build_elastic_net_problem
from npga.problem import partition_features, synthesize_dataset
from npga.schemes import SCHEMES, build_scheme, needs_lazy
from npga.solver import AssumptionError, StepSizes, init_state, run
from npga.solver import step_four_sequence, step_rewritten

from conftest import ACCEPTANCE

SLACK = 1e-9


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


def lyapunov_trace(problem, scheme, steps, cert, iters):
    """Lyapunov values along a four-sequence run from zero initialization."""
    sol = oracle.centralized_pga(problem)
    x_star, lam_star = sol.x_star, sol.lambda_star
    scheme = scheme.with_beta(steps.beta)
    fp = oracle.construct_fixed_point(problem, scheme, steps.beta, x_star, lam_star,
                                      alpha=steps.alpha)
    state = init_state(problem, scheme)
    values = [theory.lyapunov(cert, state, fp, scheme)]
    for _ in range(iters):
        state = step_four_sequence(state, problem, scheme, steps)
        values.append(theory.lyapunov(cert, state, fp, scheme))
    return np.array(values)


def contraction_excess(L, delta):
    """``max_k L[k+1] - delta L[k] - SLACK L[0]`` over ``k >= 1``; nonpositive means it holds."""
    return float(np.max(L[2:] - delta * L[1:-1] - SLACK * L[0]))


# -- 1 -----------------------------------------------------------------------


def test_criterion_1_case1_contraction_dcpa(ridge):
    t0 = time.perf_counter()
    s = build_scheme("DCPA", ridge.W)
    steps = theory.suggest_steps("Case1", ridge.problem, s)
    cert = theory.rate("Case1", ridge.problem, s, steps)
    L = lyapunov_trace(ridge.problem, s, steps, cert, 2000)
    elapsed = time.perf_counter() - t0
    exc = contraction_excess(L, cert.delta)
    report(1, exc <= 0 and elapsed < 10 and steps.theta == 1.0,
           f"DCPA Case1 delta={cert.delta:.8f} max excess={exc:.3e} time={elapsed:.2f}s")


# -- 2 -----------------------------------------------------------------------


def test_criterion_2_atc_contraction_and_tighter_rate(ridge):
    lines, ok = [], True
    for name in ("NPGA-II", "NPGA-ATC-tracking"):
        s = build_scheme(name, ridge.W, lazy=True)
        base = theory.suggest_steps("Case1_ATC", ridge.problem, s)
        steps = replace(base, gamma=0.9)
        cert = theory.rate("Case1_ATC", ridge.problem, s, steps)
        outside = True
        if "Case1" in theory.applicable_cases(ridge.problem, s, steps.theta):
            c1 = theory.step_bounds("Case1", ridge.problem, s, theta=steps.theta,
                                    alpha=steps.alpha, beta=steps.beta)
            outside = not c1.gamma_max.admits(0.9)
        L = lyapunov_trace(ridge.problem, s, steps, cert, 2000)
        exc = contraction_excess(L, cert.delta)
        # both certificates at matched steps inside the smaller box
        matched = theory.suggest_steps("Case1", ridge.problem, s)
        d1 = theory.rate("Case1", ridge.problem, s, matched).delta
        d2 = theory.rate("Case1_ATC", ridge.problem, s, matched).delta
        ok &= exc <= 0 and outside and d2 <= d1
        lines.append(f"{name}: delta={cert.delta:.8f} excess={exc:.3e} "
                     f"gamma outside Case1 box={outside} matched delta {d2:.8f}<={d1:.8f}")
    report(2, ok, "; ".join(lines))


# -- 3 -----------------------------------------------------------------------


def test_criterion_3_indicator_contraction(logistic, rng):
    prob = logistic.problem
    sol = logistic.solution
    other = oracle.centralized_pga(prob, x0=rng.standard_normal(prob.d),
                                   lambda0=rng.standard_normal(prob.p))
    unique = (np.linalg.norm(other.x_star - sol.x_star) < 1e-6
              and np.linalg.norm(other.lambda_star - sol.lambda_star) < 1e-6)
    lines, ok = [f"oracle unique={unique}"], unique
    for name, kw in (("NPGA-NIDS", {"c_param": 0.4}), ("NPGA-Aug-DGM", {"lazy": True})):
        s = build_scheme(name, logistic.W, **kw)
        steps = theory.suggest_steps("Indicator", prob, s)
        cert = theory.rate("Indicator", prob, s, steps)
        L = lyapunov_trace(prob, s, steps, cert, 2000)
        exc = contraction_excess(L, cert.delta)
        ok &= exc <= 0 and steps.theta == 0.0
        lines.append(f"{name}: delta={cert.delta:.8f} excess={exc:.3e}")
    report(3, ok, "; ".join(lines))


# -- 4 -----------------------------------------------------------------------


def test_criterion_4_smooth_contraction_and_gap(enet):
    prob = enet.problem
    s = build_scheme("NPGA-EXTRA", enet.W)
    steps = theory.suggest_steps("Smooth", prob, s)
    cert = theory.rate("Smooth", prob, s, steps)
    fp = oracle.construct_fixed_point(prob, s, steps.beta, *enet.xl, alpha=steps.alpha)
    tr = run(prob, s, steps, max_iters=10_000, stop=1e-6, oracle_solution=enet.xl,
             fixed_point=fp, certificate=cert, timing=False, kkt=False)
    L = np.array([r.lyapunov for r in tr.records])
    exc = contraction_excess(L, cert.delta)
    it = tr.iterations_to(1e-6)
    report(4, exc <= 0 and it is not None,
           f"NPGA-EXTRA Smooth delta={cert.delta:.8f} excess={exc:.3e} gap<1e-6 at k={it}")


# -- 5 -----------------------------------------------------------------------


def test_criterion_5_engine_equivalence(small, rng):
    prob = small.problem
    x0 = rng.standard_normal(prob.d)
    lam0 = rng.standard_normal((prob.n, prob.p))
    worst = {}
    for name in SCHEMES:
        kw = {"beta": 0.05} if name == "NPGA-DLM" else {}
        s = build_scheme(name, small.W, lazy=needs_lazy(name), **kw)
        try:
            steps = theory.tightest(prob, s).steps
        except AssumptionError:
            steps = StepSizes(0.5 / prob.l, 0.05, 0.5)
        s = s.with_beta(steps.beta)
        a = b = init_state(prob, s, x0, lam0)
        err = 0.0
        for _ in range(200):
            a = step_four_sequence(a, prob, s, steps)
            b = step_rewritten(b, prob, s, steps)
            err = max(err, float(np.abs(a.x - b.x).max()), float(np.abs(a.lam - b.lam).max()))
        worst[name] = err
    top = max(worst.values())
    report(5, len(worst) == 10 and top < 1e-8,
           f"10 schemes x 200 iterations, max |four_seq - rewritten| = {top:.3e}")


# -- 6 -----------------------------------------------------------------------


def _recovery(problem, scheme, W, steps, direct, rng):
    start = init_state(problem, scheme, rng.standard_normal(problem.d),
                       rng.standard_normal((problem.n, problem.p)))
    a = b = start
    per_step = 0.0
    for _ in range(100):
        nxt = step_four_sequence(a, problem, scheme, steps)
        one = direct(replace(a, y=None), problem, W, steps)
        per_step = max(per_step, float(np.abs(nxt.x - one.x).max()),
                       float(np.abs(nxt.lam - one.lam).max()))
        a = nxt
        b = direct(b, problem, W, steps)
    traj = max(float(np.abs(a.x - b.x).max()), float(np.abs(a.lam - b.lam).max()))
    return per_step, traj


def test_criterion_6_dcpa_dcda_recovery(ridge, logistic, rng):
    dcpa = build_scheme("DCPA", ridge.W)
    s1 = theory.suggest_steps("Case1", ridge.problem, dcpa)
    p1, t1 = _recovery(ridge.problem, dcpa, ridge.W, s1, oracle.dcpa_step, rng)
    dcda = build_scheme("DCDA", logistic.W)
    s2 = theory.tightest(logistic.problem, dcda).steps
    p2, t2 = _recovery(logistic.problem, dcda, logistic.W, s2, oracle.dcda_step, rng)
    ok = max(p1, p2) < 1e-10 and max(t1, t2) < 1e-8
    report(6, ok, f"DCPA step {p1:.2e} / 100 steps {t1:.2e}; DCDA step {p2:.2e} / 100 steps {t2:.2e}")


# -- 7 -----------------------------------------------------------------------


def test_criterion_7_fixed_points(ridge, logistic, enet):
    worst_res, worst_move, worst_kkt = 0.0, 0.0, 0.0
    for inst in (ridge, logistic, enet):
        prob = inst.problem
        for name in SCHEMES:
            kw = {"NPGA-DLM": {"beta": 0.01}, "NPGA-NIDS": {"c_param": 0.4}}.get(name, {})
            s = build_scheme(name, inst.W, lazy=needs_lazy(name), **kw)
            steps = StepSizes(0.5 / prob.l, 0.01, 0.5, theta=0.5)
            fp = oracle.construct_fixed_point(prob, s, steps.beta, *inst.xl, alpha=steps.alpha)
            worst_res = max(worst_res, max(fp.residuals.values()))
            s = s.with_beta(steps.beta)
            start = fp.state()
            for stepper in (step_four_sequence, step_rewritten):
                nxt = stepper(start, prob, s, steps)
                for f in ("x", "v", "lam"):
                    worst_move = max(worst_move, float(np.linalg.norm(getattr(nxt, f) - getattr(start, f))))
                if nxt.y is not None:
                    worst_move = max(worst_move, float(np.linalg.norm(nxt.y - start.y)))
    # necessity: a converged decentralized run is a saddle point
    s = build_scheme("NPGA-II", ridge.W, lazy=True)
    steps = theory.tightest(ridge.problem, s).steps
    tr = run(ridge.problem, s, steps, max_iters=30_000, stop=1e-11, oracle_solution=ridge.xl,
             timing=False, kkt=False)
    end = tr.final_state
    worst_kkt = oracle.kkt_residual(ridge.problem, end.x, end.lam.mean(axis=0))
    ok = worst_res < 1e-8 and worst_move < 1e-9 and worst_kkt < 1e-8
    report(7, ok, f"max residual {worst_res:.2e}, max one-step move {worst_move:.2e}, "
                  f"KKT of converged NPGA-II {worst_kkt:.2e}")


# -- 8 -----------------------------------------------------------------------


def _validate(capsys, *args):
    code = main(["validate", *args, "--json"])
    out = capsys.readouterr().out
    payload = json.loads(next(ln for ln in out.splitlines() if ln.startswith("{")))
    return code, {k: v["passed"] for k, v in payload["checks"].items()}


def test_criterion_8_assumption_matrix(capsys):
    graph = ["--n", "13", "--prob", "0.3", "--seed", "0"]
    claims = []

    def claim(desc, holds):
        claims.append((desc, bool(holds)))

    cta = {"NPGA-EXTRA": [], "NPGA-DLM": ["--beta", "0.01"], "NPGA-DIGing": [],
           "NPGA-P2D2": ["--c-param", "1.0"]}
    for name, extra in cta.items():
        _, chk = _validate(capsys, "--scheme", name, *graph, *extra)
        claim(f"{name} a9", chk["a9"])
        claim(f"{name} fails a7", not chk["a7"])
    _, chk = _validate(capsys, "--scheme", "NPGA-P2D2", "--c-param", "0.5", *graph)
    claim("NPGA-P2D2 c=0.5 a9", chk["a9"])
    for name in ("NPGA-Aug-DGM", "NPGA-ATC-tracking", "NPGA-Exact-diffusion", "NPGA-I",
                 "NPGA-II"):
        _, chk = _validate(capsys, "--scheme", name, *graph)
        claim(f"{name} a9", chk["a9"])
    for name in ("NPGA-ATC-tracking", "NPGA-II"):
        code, chk = _validate(capsys, "--scheme", name, *graph, "--require", "a4,a6,a7,a9")
        claim(f"{name} a7", chk["a7"] and code == 0)

    # NIDS: every graph admits c <= 1/2; for any c > 1/2 some graph fails.
    # A two-node graph with Laplacian constant eps has threshold (1 + eps)/2.
    graphs = [graph, ["--n", "2", "--prob", "1.0", "--mix-c", "1e-4"],
              ["--n", "8", "--prob", "0.5", "--seed", "3", "--mix-c", "0.05"]]
    for c in (0.1, 0.3, 0.5):
        for g in graphs:
            code, chk = _validate(capsys, "--scheme", "NPGA-NIDS", "--c-param", str(c), *g,
                                  "--require", "a9")
            claim(f"NIDS c={c} a9 on {' '.join(g)}", chk["a9"] and code == 0)
    for c in (0.51, 0.6, 0.75, 0.9):
        code, _ = _validate(capsys, "--scheme", "NPGA-NIDS", "--c-param", str(c), *graphs[1],
                            "--require", "a9")
        claim(f"NIDS c={c} fails a9 on the two-node graph", code == 3)
    code, _ = _validate(capsys, "--scheme", "NPGA-NIDS", "--c-param", "0.9", *graph,
                        "--require", "a9")
    claim("NIDS c=0.9 fails a9 on the experiment graph", code == 3)
    # the single-graph threshold is 1/(1 - lambda_min(W))
    g, _ = connected_erdos_renyi(13, 0.3, 0)
    lmin = float(np.linalg.eigvalsh(mixing_matrix_laplacian(g).W)[0])
    thr = 1.0 / (1.0 - lmin)
    below, _ = _validate(capsys, "--scheme", "NPGA-NIDS", "--c-param", str(thr * 0.999), *graph)
    _, chk_above = _validate(capsys, "--scheme", "NPGA-NIDS", "--c-param", str(thr * 1.001), *graph)
    claim(f"NIDS threshold 1/(1-lambda_min W)={thr:.4f} on the experiment graph",
          below == 0 and not chk_above["a9"])

    failed = [d for d, h in claims if not h]
    report(8, not failed, f"{len(claims) - len(failed)}/{len(claims)} claims reproduced"
           + (f"; failing: {failed}" if failed else ""))


# -- 9 -----------------------------------------------------------------------


def _random_doubly_stochastic(n, rng):
    M = np.zeros((n, n))
    w = rng.dirichlet(np.ones(3))
    for wk in w:
        P = np.eye(n)[rng.permutation(n)]
        M += wk * 0.5 * (P + P.T)
    return M


def _random_connected_laplacian(n, rng):
    while True:
        A = np.triu((rng.random((n, n)) < 0.5) * rng.uniform(0.1, 2.0, (n, n)), 1)
        A = A + A.T
        L = np.diag(A.sum(axis=1)) - A
        if n == 1 or np.linalg.eigvalsh(L)[1] > 1e-8:
            return L


def test_criterion_9_spectral_lemmas(rng):
    # singular values of M H are bounded by ||M|| times those of H
    worst2 = -np.inf
    for _ in range(100):
        m, n = rng.integers(1, 21, size=2)
        M = rng.standard_normal((m, n))
        H = rng.standard_normal((n, n))
        H = H + H.T
        sv_mh = np.linalg.svd(M @ H, compute_uv=False)
        sv_h = np.linalg.svd(H, compute_uv=False)
        k = min(m, n)
        gap = sv_mh[:k] - np.linalg.norm(M, 2) * sv_h[:k]
        worst2 = max(worst2, float(gap.max() / max(1.0, sv_h[0] * np.linalg.norm(M, 2))))

    # coupled Gram matrix is positive definite on qualifying tuples
    worst4 = np.inf
    for _ in range(100):
        n = int(rng.integers(2, 7))
        p = int(rng.integers(1, 4))
        d = [int(x) for x in rng.integers(1, 4, size=n)]
        while sum(d) < p:
            d[0] += 1
        blocks = [rng.standard_normal((p, di)) for di in d]
        if np.linalg.matrix_rank(np.hstack(blocks)) < p:
            continue
        prob = Problem([AgentSpec(A=B, f_grad=lambda x: x, mu=1.0, l=1.0) for B in blocks],
                       IndicatorBall(np.zeros(p), 1.0))
        M = _random_doubly_stochastic(n, rng)
        H = _random_connected_laplacian(n, rng)
        c = float(rng.uniform(1e-2, 10))
        G = theory.coupled_gram(prob, M, H, c)
        worst4 = min(worst4, G.eta_min / max(1.0, np.abs(np.linalg.eigvalsh(G.M)).max()))
    ok = worst2 <= 1e-10 and worst4 > 0
    report(9, ok, f"singular-value bound max violation {worst2:.2e} (slack 1e-10); "
                  f"coupled Gram min relative eigenvalue {worst4:.2e}")


# -- 10 ----------------------------------------------------------------------


def test_criterion_10_oracle(ridge, logistic, enet):
    worst = 0.0
    for seed in range(5):
        X, Y = synthesize_dataset(6, 9, cond=3.0, seed=seed)
        for weight in (0.5, 1.0, 2.0):
            prob = build_elastic_net_problem(X, Y, partition_features(9, 3), weight, 0.0)
            res = oracle.centralized_pga(prob)
            p = X.shape[0]
            s = 1.0 / (2 * p)
            x = np.linalg.solve(weight * np.eye(9) + 2 * s * X.T @ X, 2 * s * X.T @ Y)
            lam = 2 * s * (X @ x - Y)
            worst = max(worst, float(np.linalg.norm(res.x_star - x)),
                        float(np.linalg.norm(res.lambda_star - lam)))
    kkt = max(oracle.kkt_residual(i.problem, *i.xl) for i in (ridge, logistic, enet))
    report(10, worst < 1e-8 and kkt < 1e-10,
           f"closed-form error {worst:.2e}; KKT at oracle output {kkt:.2e}")


# -- 11 ----------------------------------------------------------------------

STRUCTURES = {
    "ridge": {"kind": "ridge",
              "data": {"source": "synthetic", "p": 10, "d": 14, "cond": 2, "seed": 1},
              "n_agents": 13},
    "logistic": {"kind": "logistic",
                 "data": {"source": "synthetic", "p": 10, "d": 12, "cond": 2, "seed": 3},
                 "n_agents": 7, "rho": 0.1, "slack_reg": 1e-3},
    "elastic_net": {"kind": "elastic_net",
                    "data": {"source": "synthetic", "p": 10, "d": 14, "cond": 2, "seed": 1,
                             "scale": 5.0},
                    "n_agents": 13, "alpha_reg": 1.0, "rho": 0.5},
}


def test_criterion_11_comparison(tmp_path, capsys):
    lines, ok = [], True
    for label, problem in STRUCTURES.items():
        paths = []
        for scheme in ("NPGA-II", "NPGA-ATC-tracking", "DCPA"):
            cfg = {"problem": problem, "graph": {"prob": 0.3, "seed": 0},
                   "scheme": {"name": scheme}, "steps": "auto", "max_iters": 60_000,
                   "stop": 1e-6}
            path = tmp_path / f"{label}-{scheme}.json"
            path.write_text(json.dumps(cfg))
            paths.append(str(path))
        out = tmp_path / label
        code = main(["compare", *paths, "--out", str(out)])
        rep = json.loads((out / "compare_report.json").read_text())
        runs = rep["runs"]
        atc = [runs[k]["iterations_to_threshold"] for k in ("NPGA-II", "NPGA-ATC-tracking")]
        dcpa = runs["DCPA"]["iterations_to_threshold"]
        best = min((a for a in atc if a is not None), default=None)
        hit = code == 0 and best is not None and (dcpa is None or best <= dcpa)
        ok &= hit
        lines.append(f"{label}: NPGA-II={atc[0]} ATC-tracking={atc[1]} DCPA={dcpa} "
                     f"(report {out / 'compare_report.json'})")
    capsys.readouterr()
    report(11, ok, "; ".join(lines))

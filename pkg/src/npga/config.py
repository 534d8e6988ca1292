"""Experiment configuration: JSON schema and resolution to solver inputs.

A config names a problem (synthetic or CSV data), a random communication
graph, a scheme and either explicit step sizes or ``"auto"`` / ``"auto:<case>"``.
Unknown fields are rejected.  Example::

    {
      "problem": {"kind": "ridge",
                  "data": {"source": "synthetic", "p": 10, "d": 14, "cond": 2, "seed": 1},
                  "n_agents": 13},
      "graph": {"prob": 0.3, "seed": 0, "c": 1.0},
      "scheme": {"name": "NPGA-II"},
      "steps": "auto",
      "max_iters": 5000,
      "stop": 1e-6
    }
"""

from __future__ import annotations

import importlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from npga import theory
from npga.graph import Graph, MixingMatrix, connected_erdos_renyi, mixing_matrix_laplacian
from npga.problem import (
    Problem,
    build_elastic_net_problem,
    build_logistic_problem,
    build_ridge_problem,
    load_csv_dataset,
    partition_features,
    synthesize_dataset,
)
from npga.schemes import NetworkScheme, build_scheme, needs_lazy
from npga.solver import AssumptionError, StepSizes


class ConfigError(ValueError):
    """Invalid or unresolvable configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticData(_Model):
    source: Literal["synthetic"] = "synthetic"
    p: int = Field(gt=0)
    d: int = Field(gt=0)
    cond: float = Field(default=10.0, ge=1.0)
    seed: int = 0
    noise: float = Field(default=0.01, ge=0.0)
    scale: float = Field(default=1.0, gt=0.0)


class CsvData(_Model):
    source: Literal["csv"]
    path: str
    standardize: bool = True
    add_intercept: bool = True


DataSpec = Annotated[Union[SyntheticData, CsvData], Field(discriminator="source")]


class ProblemSpec(_Model):
    kind: Literal["ridge", "logistic", "elastic_net", "custom"]
    data: DataSpec | None = None
    n_agents: int | None = Field(default=None, gt=0)
    partition: list[int] | None = None
    radius: float | None = Field(default=None, gt=0.0)
    rho: float | None = None
    slack_reg: float = Field(default=0.0, ge=0.0)
    alpha_reg: float | None = Field(default=None, gt=0.0)
    factory: str | None = None
    factory_args: dict = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "custom":
            if not self.factory:
                raise ValueError("custom problems need 'factory' as 'module:function'")
        elif self.data is None:
            raise ValueError(f"{self.kind} problems need a 'data' section")
        if self.kind != "custom" and self.n_agents is None and self.partition is None:
            raise ValueError("give either 'n_agents' or 'partition'")
        if self.kind == "logistic" and self.rho is None:
            raise ValueError("logistic problems need 'rho'")
        if self.kind == "elastic_net" and (self.rho is None or self.alpha_reg is None):
            raise ValueError("elastic_net problems need 'rho' and 'alpha_reg'")
        return self


class GraphSpec(_Model):
    n: int | None = Field(default=None, ge=2)
    prob: float = Field(default=0.3, gt=0.0, le=1.0)
    seed: int = 0
    c: float = Field(default=1.0, gt=0.0)
    edgelist: str | None = None


class SchemeSpec(_Model):
    name: str
    c_param: float | None = Field(default=None, gt=0.0)
    lazy: Literal["auto", "on", "off"] = "auto"


class ExplicitSteps(_Model):
    alpha: float = Field(gt=0.0)
    beta: float = Field(gt=0.0)
    gamma: float = Field(gt=0.0)
    theta: float = Field(default=0.0, ge=0.0)


class OutputSpec(_Model):
    trace: str = "trace.csv"
    summary: str = "summary.json"
    certificate: str = "certificate.json"


class ExperimentConfig(_Model):
    problem: ProblemSpec
    graph: GraphSpec = Field(default_factory=GraphSpec)
    scheme: SchemeSpec
    steps: ExplicitSteps | str = "auto"
    safety: float = Field(default=0.9, gt=0.0, lt=1.0)
    theta: float | None = Field(default=None, ge=0.0)
    smooth_modulus: Literal["per_agent", "literal"] = "per_agent"
    engine: Literal["four_seq", "rewritten"] = "four_seq"
    max_iters: int = Field(default=1000, ge=0)
    stop: float | None = Field(default=None, gt=0.0)
    seed: int | None = None
    output: OutputSpec = Field(default_factory=OutputSpec)

    @model_validator(mode="after")
    def _check_steps(self):
        if isinstance(self.steps, str):
            s = self.steps
            if s != "auto":
                if not s.startswith("auto:"):
                    raise ValueError(f"steps must be 'auto', 'auto:<case>' or explicit, got {s!r}")
                theory._case(s.split(":", 1)[1])
        return self

    @property
    def auto_case(self) -> str | None:
        if isinstance(self.steps, str) and self.steps.startswith("auto:"):
            return theory._case(self.steps.split(":", 1)[1])
        return None


def _format_validation(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def load_config(path, seed=None) -> ExperimentConfig:
    """Parse a config file; ``seed`` overrides the top-level ``seed`` entry."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("--config", f"no such file {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"{path} is not valid JSON ({exc})") from None
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(None, f"{path}: {_format_validation(exc)}") from None
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    return cfg


# -- resolution --------------------------------------------------------------


@dataclass
class Resolved:
    config: ExperimentConfig
    problem: Problem
    graph: Graph
    W: MixingMatrix
    scheme: NetworkScheme
    steps: StepSizes
    case: str | None
    certificate: theory.RateCertificate | None
    notes: list[str]


def _dataset(spec: ProblemSpec, seed_override):
    data = spec.data
    if isinstance(data, CsvData):
        if not Path(data.path).is_file():
            raise ConfigError("problem.data.path", f"CSV file not found: {data.path}")
        try:
            return load_csv_dataset(data.path, data.standardize, data.add_intercept)
        except ValueError as exc:
            raise ConfigError("problem.data.path", str(exc)) from None
    seed = data.seed if seed_override is None else seed_override
    try:
        return synthesize_dataset(data.p, data.d, cond=data.cond, seed=seed, noise=data.noise,
                                  labels=spec.kind == "logistic", scale=data.scale,
                                  full_row_rank=spec.kind == "ridge")
    except ValueError as exc:
        raise ConfigError("problem.data", str(exc)) from None


def build_problem(spec: ProblemSpec, seed_override=None) -> Problem:
    if spec.kind == "custom":
        mod, _, fn = spec.factory.partition(":")
        try:
            factory = getattr(importlib.import_module(mod), fn)
        except (ImportError, AttributeError) as exc:
            raise ConfigError("problem.factory", f"cannot import {spec.factory} ({exc})") from None
        prob = factory(**spec.factory_args)
        if not isinstance(prob, Problem):
            raise ConfigError("problem.factory", "factory must return a Problem")
        return prob
    X, Y = _dataset(spec, seed_override)
    d = X.shape[1]
    if spec.partition is not None:
        partition = spec.partition
    else:
        n_feat = spec.n_agents - 1 if spec.kind == "logistic" else spec.n_agents
        try:
            partition = partition_features(d, n_feat)
        except ValueError as exc:
            raise ConfigError("problem.n_agents", str(exc)) from None
    try:
        if spec.kind == "ridge":
            return build_ridge_problem(X, Y, partition, radius=spec.radius)
        if spec.kind == "logistic":
            return build_logistic_problem(X, Y, partition, spec.rho, spec.slack_reg)
        return build_elastic_net_problem(X, Y, partition, spec.alpha_reg, spec.rho)
    except ValueError as exc:
        raise ConfigError("problem", str(exc)) from None


def build_graph(spec: GraphSpec, n, seed_override=None) -> tuple[Graph, list[str]]:
    notes = []
    if spec.n is not None and spec.n != n:
        raise ConfigError("graph.n", f"graph has {spec.n} nodes but the problem has {n} agents")
    if spec.edgelist is not None:
        try:
            g = Graph.load(spec.edgelist)
        except (OSError, ValueError) as exc:
            raise ConfigError("graph.edgelist", str(exc)) from None
        if g.n != n:
            raise ConfigError("graph.edgelist", f"edge list has {g.n} nodes, problem has {n} agents")
        return g, notes
    seed = spec.seed if seed_override is None else seed_override
    g, attempts = connected_erdos_renyi(n, spec.prob, seed)
    if attempts > 1:
        notes.append(f"graph resampled {attempts - 1} time(s) to obtain a connected draw")
    return g, notes


def resolve_lazy(spec: SchemeSpec) -> bool:
    if spec.lazy == "auto":
        return needs_lazy(spec.name)
    return spec.lazy == "on"


def _certify(problem, scheme, steps, smooth_modulus):
    best = None
    for case in theory.applicable_cases(problem, scheme, steps.theta):
        try:
            cert = theory.rate(case, problem, scheme, steps, smooth_modulus=smooth_modulus)
        except ValueError:
            continue
        if best is None or cert.delta < best.delta:
            best = cert
    return best


def resolve(cfg: ExperimentConfig, force=False) -> Resolved:
    """Build problem, graph, scheme and steps.

    Raises :class:`ConfigError` for unresolvable entries and
    :class:`AssumptionError` when ``auto:<case>`` is requested but the case
    does not apply (unless ``force``, which computes the case's steps anyway
    and omits the certificate).
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        problem = build_problem(cfg.problem, cfg.seed)
    graph, notes = build_graph(cfg.graph, problem.n, cfg.seed)
    W = mixing_matrix_laplacian(graph, cfg.graph.c)
    try:
        lazy = resolve_lazy(cfg.scheme)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            beta0 = cfg.steps.beta if isinstance(cfg.steps, ExplicitSteps) else 1e-3
            scheme = build_scheme(cfg.scheme.name, W, cfg.scheme.c_param, beta=beta0, lazy=lazy)
        notes += [str(w.message) for w in caught]
    except ValueError as exc:
        raise ConfigError("scheme", str(exc)) from None

    pinned = scheme.pinned
    theta = cfg.theta
    case, cert = None, None
    if isinstance(cfg.steps, ExplicitSteps):
        vals = cfg.steps.model_dump()
        for k, v in pinned.items():
            if vals[k] != v:
                notes.append(f"{scheme.label} pins {k} = {v}; configured {vals[k]} ignored")
                vals[k] = v
        steps = StepSizes(**vals)
        scheme = scheme.with_beta(steps.beta)
        cert = _certify(problem, scheme, steps, cfg.smooth_modulus)
        case = cert.case if cert else None
    elif cfg.auto_case is None:
        choice = theory.tightest(problem, scheme, theta=theta, safety=cfg.safety,
                                 smooth_modulus=cfg.smooth_modulus)
        steps, case, cert = choice.steps, choice.case, choice.certificate
        if cert is None:
            notes.append(f"pinned parameters of {scheme.label} leave every certified box; "
                         "no rate certificate")
    else:
        case = cfg.auto_case
        th = pinned.get("theta", theory.DEFAULT_THETA[case] if theta is None else theta)
        failures = theory.case_failures(case, problem, scheme, th)
        if failures and not force:
            culprit, detail = failures[0]
            raise AssumptionError(culprit, f"{case}: {detail}")
        steps = theory.suggest_steps(case, problem, scheme, theta=th, safety=cfg.safety,
                                     smooth_modulus=cfg.smooth_modulus, check=not failures)
        if failures:
            notes.append(f"forced: {case} assumptions fail ({', '.join(f for f, _ in failures)}); "
                         "certificate omitted")
        else:
            try:
                cert = theory.rate(case, problem, scheme, steps, smooth_modulus=cfg.smooth_modulus)
            except ValueError as exc:
                notes.append(f"no certificate: {exc}")
        scheme = scheme.with_beta(steps.beta)
    scheme = scheme.with_beta(steps.beta)
    return Resolved(cfg, problem, graph, W, scheme, steps, case, cert, notes)


def comparable_key(cfg: ExperimentConfig) -> str:
    """Problem and graph specification (after seed override) as a canonical string."""
    prob = cfg.problem.model_dump()
    graph = cfg.graph.model_dump()
    if cfg.seed is not None:
        graph["seed"] = cfg.seed
        if prob.get("data") and prob["data"].get("source") == "synthetic":
            prob["data"]["seed"] = cfg.seed
    return json.dumps({"problem": prob, "graph": graph}, sort_keys=True)


def dump_schema() -> str:
    return json.dumps(ExperimentConfig.model_json_schema(), indent=2)


__all__ = [
    "ConfigError", "ExperimentConfig", "Resolved", "build_graph", "build_problem",
    "comparable_key", "dump_schema", "load_config", "resolve",
]

"""Run configuration: nested dataclasses read from and written to JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .errors import InvalidSpec

METHODS = ("randalo", "bks_alo", "exact_alo", "kfold_cv", "loo_cv", "ridge_loo")
PENALTIES = ("ridge", "lasso", "elastic_net", "first_difference", "group_lasso", "kernel_ridge")


def cli_error(msg):
    return InvalidSpec(msg, module="cli")


@dataclass
class ModelSpec:
    loss: str = "squared"
    penalty: str = "lasso"
    lam: float | None = None  # None: sqrt(n)
    theta: float = 0.0  # ridge weight added to l1 penalties (elastic net)
    kernel: str = "rbf"
    gamma: float = 1.0
    group_size: int | None = None
    groups: list | None = None


@dataclass
class EstimatorSpec:
    methods: list = field(default_factory=lambda: ["randalo"])
    m: int = 50
    K: int = 5
    seed: int = 0
    subset_schedule: list | None = None
    risk: str | None = None  # defaults to squared_error, or misclassification for logistic loss


@dataclass
class SolverSpec:
    method: str = "auto"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_iter: int | None = None


@dataclass
class DataSpec:
    path: str | None = None
    format: str | None = None
    family: str = "gaussian_lasso"  # synthetic fallback when no path is given
    n: int = 200
    p: int | None = None
    seed: int = 0


@dataclass
class OutputSpec:
    path: str | None = None
    format: str = "csv"
    timing: bool = False


@dataclass
class RunConfig:
    name: str = "estimate"
    model: ModelSpec = field(default_factory=ModelSpec)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    data: DataSpec = field(default_factory=DataSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    threads: int | None = None

    def validate(self):
        for mth in self.estimator.methods:
            if mth not in METHODS:
                raise cli_error(f"estimator.methods: unknown method {mth!r}; expected one of {METHODS}")
        if self.model.penalty not in PENALTIES:
            raise cli_error(f"model.penalty: unknown penalty {self.model.penalty!r}; expected one of {PENALTIES}")
        if self.estimator.m < 2:
            raise cli_error("estimator.m: need at least 2 probes")
        if self.estimator.K < 2:
            raise cli_error("estimator.K: need at least 2 folds")
        if self.output.format not in ("csv", "jsonl"):
            raise cli_error(f"output.format: expected csv or jsonl, got {self.output.format!r}")
        return self

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise cli_error(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}." if path else ""
        raise cli_error(f"unknown config key {where}{unknown[0]}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        sub = f"{path}.{name}" if path else name
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(data):
    return _build(RunConfig, data, "").validate()


def loads(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise cli_error(f"config is not valid JSON: {exc}") from None
    return from_dict(data)


def load_config(path):
    with open(path) as fh:
        return loads(fh.read())

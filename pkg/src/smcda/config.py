"""Run configuration: YAML schema, validation and defaults.

Example (every key shown; ``dataset`` and ``schedule.kind`` are required)::

    seed: 0
    particles: 128          # J
    iterations: 200         # K
    eval_every: 10
    resample_threshold: 0.5 # resample when ESS < threshold * J
    output: trace.csv
    dataset:
      kind: idx             # idx | two_moons | gaussian_blobs | linear_gaussian
      train_images: data/train-images-idx3-ubyte.gz
      train_labels: data/train-labels-idx1-ubyte.gz
      test_images: data/t10k-images-idx3-ubyte.gz
      test_labels: data/t10k-labels-idx1-ubyte.gz
      train_limit: null
      test_limit: null
      # synthetic kinds instead take: n, n_test, noise, dim, classes, seed
    model:
      layers: [784, 32, 10]
      activation: relu
    prior:
      sigma: 1.0
    kernel:
      kind: hmc             # hmc | langevin
      step_size: 0.002
      leapfrog_steps: 3
    schedule:
      kind: constant        # constant | full_batch | ctr | linear | automated | sda
      C: 500
      kappa: 500
      redraw: false         # constant only: fresh C-point batch every iteration
      delta_S: 1.0          # sda only
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .annealing import KINDS as SCHEDULE_KINDS
from .kernels import KernelConfig
from .model import NetSpec, PriorSpec
from .numerics import DomainError

DATASET_KINDS = ("idx", "two_moons", "gaussian_blobs", "linear_gaussian")


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "seed": int, "particles": int, "iterations": int, "eval_every": int,
    "resample_threshold": float, "output": str,
    "dataset": {
        "kind": str, "train_images": str, "train_labels": str, "test_images": str,
        "test_labels": str, "train_limit": int, "test_limit": int,
        "n": int, "n_test": int, "noise": float, "dim": int, "classes": int, "seed": int,
    },
    "model": {"layers": list, "activation": str},
    "prior": {"sigma": float},
    "kernel": {"kind": str, "step_size": float, "leapfrog_steps": int},
    "schedule": {"kind": str, "C": int, "kappa": int, "redraw": bool, "delta_S": float},
}

DEFAULTS = {
    "seed": 0, "particles": 128, "iterations": 200, "eval_every": 10,
    "resample_threshold": 0.5, "output": "trace.csv",
    "dataset": {"train_limit": None, "test_limit": None, "n": 1000, "n_test": 500,
                "noise": 0.1, "dim": 2, "classes": 3, "seed": 0},
    "model": {"layers": [784, 32, 10], "activation": "relu"},
    "prior": {"sigma": 1.0},
    "kernel": {"kind": "hmc", "step_size": 0.002, "leapfrog_steps": 3},
    "schedule": {"C": 500, "kappa": 500, "redraw": False, "delta_S": 1.0},
}

REQUIRED = [("dataset", "kind"), ("schedule", "kind")]


@dataclass(frozen=True)
class RunConfig:
    raw: dict  # resolved document, defaults filled in
    net: NetSpec | None
    prior: PriorSpec
    kernel: KernelConfig
    schedule_kind: str
    C: int
    kappa: int
    J: int
    K: int
    seed: int
    eval_every: int
    output: str
    base_dir: str = "."  # relative dataset paths resolve against this

    @property
    def dataset(self) -> dict:
        return self.raw["dataset"]

    def resolve(self, path) -> Path:
        return Path(self.base_dir) / path

    @property
    def redraw(self) -> bool:
        return bool(self.raw["schedule"]["redraw"])

    @property
    def delta_S(self) -> float:
        return float(self.raw["schedule"]["delta_S"])

    @property
    def resample_threshold(self) -> float:
        return float(self.raw["resample_threshold"])

    def with_overrides(self, **top) -> RunConfig:
        doc = copy.deepcopy(self.raw)
        doc.update({k: v for k, v in top.items() if v is not None})
        return build_config(doc, self.base_dir)

    def dump(self, include_output: bool = True) -> str:
        doc = copy.deepcopy(self.raw)
        if not include_output:
            doc.pop("output", None)
        return yaml.safe_dump(doc, sort_keys=True, default_flow_style=None)


def _check_types(doc, schema, where=""):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    for key, val in doc.items():
        path = f"{where}.{key}" if where else key
        if key not in schema:
            raise ConfigError(f"unknown key {path!r}")
        want = schema[key]
        if isinstance(want, dict):
            _check_types(val, want, path)
        elif val is None:
            continue
        elif want is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{path}: expected a number, got {val!r}")
        elif want is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{path}: expected an integer, got {val!r}")
        elif not isinstance(val, want):
            raise ConfigError(f"{path}: expected {want.__name__}, got {val!r}")


def _merge(defaults, doc):
    out = copy.deepcopy(defaults)
    for k, v in doc.items():
        if isinstance(v, dict):
            out[k] = _merge(out.get(k, {}), v)
        else:
            out[k] = v
    return out


def parse_config(text: str) -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return build_config(doc or {})


def load_config(path) -> RunConfig:
    path = Path(path)
    cfg = parse_config(path.read_text())
    return build_config(cfg.raw, str(path.parent))


def build_config(doc: dict, base_dir: str = ".") -> RunConfig:
    _check_types(doc, _SCHEMA)
    for sec, key in REQUIRED:
        if key not in doc.get(sec, {}):
            raise ConfigError(f"missing required key '{sec}.{key}'")
    doc = _merge(DEFAULTS, doc)

    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}")

    ds = doc["dataset"]
    need(ds["kind"] in DATASET_KINDS, "dataset.kind", f"must be one of {DATASET_KINDS}")
    if ds["kind"] == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            need(ds.get(key), f"dataset.{key}", "required for idx datasets")
    else:
        need(ds["n"] >= 2, "dataset.n", "must be >= 2")
    need(doc["particles"] >= 2, "particles", "must be >= 2")
    need(doc["iterations"] >= 1, "iterations", "must be >= 1")
    need(doc["eval_every"] >= 1, "eval_every", "must be >= 1")
    need(0 < doc["resample_threshold"] <= 1, "resample_threshold", "must lie in (0, 1]")
    need(0 <= doc["seed"] < 2**64, "seed", "must be a 64-bit unsigned integer")
    sch = doc["schedule"]
    need(sch["kind"] in SCHEDULE_KINDS, "schedule.kind", f"must be one of {SCHEDULE_KINDS}")
    need(sch["C"] >= 1, "schedule.C", "must be >= 1")
    need(sch["kappa"] >= 1, "schedule.kappa", "must be >= 1")
    need(sch["delta_S"] != 0, "schedule.delta_S", "must be non-zero")
    need(not sch["redraw"] or sch["kind"] == "constant", "schedule.redraw", "only valid for the constant schedule")

    try:
        kernel = KernelConfig(float(doc["kernel"]["step_size"]), int(doc["kernel"]["leapfrog_steps"]),
                              doc["kernel"]["kind"])
    except DomainError as exc:
        raise ConfigError(f"kernel: {exc}") from None
    try:
        prior = PriorSpec(float(doc["prior"]["sigma"]))
    except DomainError as exc:
        raise ConfigError(f"prior.sigma: {exc}") from None
    net = None
    if ds["kind"] != "linear_gaussian":
        try:
            net = NetSpec(tuple(doc["model"]["layers"]), doc["model"]["activation"])
        except (DomainError, TypeError) as exc:
            raise ConfigError(f"model: {exc}") from None

    return RunConfig(
        raw=doc, net=net, prior=prior, kernel=kernel, schedule_kind=sch["kind"],
        C=int(sch["C"]), kappa=int(sch["kappa"]), J=int(doc["particles"]), K=int(doc["iterations"]),
        seed=int(doc["seed"]), eval_every=int(doc["eval_every"]), output=str(doc["output"]),
        base_dir=base_dir,
    )

"""End-to-end runs: data loading, the annealed SMC loop, predictive metrics and trace files."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annealing import ScheduleConfig, SdaState, batch_size, sda_advance
from .config import ConfigError, RunConfig
from .data import Dataset, GaussianPosterior, SubsetWindow, load_idx, make_synthetic
from .model import LinearGaussian
from .numerics import STREAM_BATCH, DomainError, RngStream
from .smc import IterRecord, ParticleEnsemble, SamplerError, init_ensemble, normalize, smc_step
from .target import TargetContext

log = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "k", "M_k", "prefix_end", "beta", "ess", "resampled", "mean_log_target", "log_z_increment",
    "n_divergent", "test_loss", "test_accuracy", "sampler_ms", "wall_time_ms",
)
TIMING_COLUMNS = ("sampler_ms", "wall_time_ms")


def evaluate_predictive(e: ParticleEnsemble, spec, X, y):
    """Weighted-ensemble predictive metrics on a labelled test set.

    Returns ``(mean log predictive probability of the true label, accuracy in %)``.
    The first value is a log-likelihood, so higher is better.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise DomainError("empty test set")
    w = normalize(e.log_weights)
    live = np.flatnonzero(w > 0)
    probs = np.einsum("j,jmc->mc", w[live], spec.predict_proba(e.thetas[live], X))
    p_true = probs[np.arange(len(y)), y]
    with np.errstate(divide="ignore"):
        loss = float(np.mean(np.log(p_true)))
    acc = float(np.mean(probs.argmax(axis=1) == y) * 100.0)
    return loss, acc


@dataclass
class Problem:
    train: Dataset
    test: Dataset | None
    model: object
    posterior: GaussianPosterior | None = None


def load_problem(cfg: RunConfig) -> Problem:
    ds = cfg.dataset
    kind = ds["kind"]
    if kind == "idx":
        train = load_idx(cfg.resolve(ds["train_images"]), cfg.resolve(ds["train_labels"]), ds["train_limit"])
        test = load_idx(cfg.resolve(ds["test_images"]), cfg.resolve(ds["test_labels"]), ds["test_limit"])
        if train.features.shape[1] != cfg.net.layer_sizes[0]:
            raise ConfigError(f"model.layers: input size {cfg.net.layer_sizes[0]} does not match "
                              f"{train.features.shape[1]} features")
        return Problem(train, test, cfg.net)
    if kind == "linear_gaussian":
        train, post = make_synthetic("linear_gaussian", ds["n"], ds["noise"], ds["seed"],
                                     dim=ds["dim"], prior_sigma=cfg.prior.sigma)
        return Problem(train, None, LinearGaussian(ds["dim"], ds["noise"]), post)
    n, n_test = ds["n"], ds["n_test"]
    full = make_synthetic(kind, n + n_test, ds["noise"], ds["seed"], dim=ds["dim"], classes=ds["classes"])
    order = RngStream(ds["seed"]).child(STREAM_BATCH).generator.permutation(full.n)
    tr, te = order[:n], order[n:]
    train = Dataset(full.features[tr], full.labels[tr])
    test = Dataset(full.features[te], full.labels[te]) if n_test > 0 else None
    return Problem(train, test, cfg.net)


class Run:
    """Iterates an annealed SMC sampler for one configuration.

    Exposes the per-iteration target so callers (tests, the CLI) can inspect
    the ensemble between iterations.
    """

    def __init__(self, cfg: RunConfig, problem: Problem | None = None):
        self.cfg = cfg
        self.problem = problem or load_problem(cfg)
        self.rng = RngStream(cfg.seed)
        self.train = self.problem.train.shuffled(self.rng)
        N = self.train.n
        try:
            # C and kappa play no role in full-batch runs, so the defaults must not reject small data
            C, kappa = (min(cfg.C, N), min(cfg.kappa, N)) if cfg.schedule_kind == "full_batch" else (cfg.C, cfg.kappa)
            self.schedule = ScheduleConfig(cfg.schedule_kind, C, kappa, cfg.K, N)
        except DomainError as exc:
            raise ConfigError(f"schedule: {exc}") from None
        self.sda = SdaState.start(cfg.C, N, cfg.delta_S) if cfg.schedule_kind == "sda" else None
        self.ensemble: ParticleEnsemble | None = None
        self.records: list[IterRecord] = []

    @property
    def permutation_digest(self) -> str:
        return hashlib.sha256(self.train.permutation.astype("<i8").tobytes()).hexdigest()

    def context(self, k: int) -> TargetContext:
        N = self.train.n
        common = dict(data=self.train, model=self.problem.model, prior=self.cfg.prior)
        if self.sda is not None:
            return TargetContext(window=self.sda.window, mode="sda", beta=self.sda.beta, **common)
        M = batch_size(self.schedule, k)
        idx = None
        if self.cfg.redraw:
            gen = self.rng.child(STREAM_BATCH, k).generator
            idx = np.sort(gen.choice(N, size=M, replace=False))
        return TargetContext(window=SubsetWindow(0, M, N), mode="scaled", batch_indices=idx, **common)

    def start(self):
        self.ensemble = init_ensemble(self.cfg.J, self.context(0), self.cfg.prior, self.problem.model, self.rng)

    def step(self) -> IterRecord:
        t0 = time.perf_counter()
        k = self.ensemble.k
        ctx = self.context(k)
        self.ensemble, rec = smc_step(self.ensemble, ctx, self.cfg.kernel, self.rng, self.cfg.resample_threshold)
        rec.prefix_end = ctx.window.prefix_end
        if self.sda is not None:
            self.sda = sda_advance(self.sda, self.ensemble, ctx, self.cfg.kappa)
        rec.sampler_ms = (time.perf_counter() - t0) * 1e3
        last = k == self.cfg.K - 1
        if self.problem.test is not None and ((k + 1) % self.cfg.eval_every == 0 or last):
            rec.test_loss, rec.test_accuracy = self.evaluate()
        rec.wall_time_ms = (time.perf_counter() - t0) * 1e3
        self.records.append(rec)
        return rec

    def evaluate(self):
        t = self.problem.test
        return evaluate_predictive(self.ensemble, self.problem.model, t.features, t.labels)

    def posterior_mean(self) -> np.ndarray:
        w = normalize(self.ensemble.log_weights)
        return w @ self.ensemble.thetas


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def _row(rec: IterRecord):
    return [_fmt(getattr(rec, c, None)) for c in TRACE_COLUMNS]


def run_experiment(cfg: RunConfig, output=None, problem: Problem | None = None) -> tuple[Path, bool]:
    """Run one configuration and write its trace; returns ``(path, completed)``.

    The trace starts with a ``#`` comment block echoing the resolved config,
    then one CSV row per iteration and a final ``summary`` row. Apart from
    the timing columns the file is a deterministic function of the config.
    """
    out = Path(output or cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, problem)
    head = io.StringIO()
    head.write("# smcda trace\n# config:\n")
    for line in cfg.dump(include_output=False).splitlines():
        head.write(f"#   {line}\n")
    head.write(f"# train_n: {run.train.n}\n# permutation_sha256: {run.permutation_digest}\n")

    error = None
    t_start = None
    try:
        run.start()
        # the summary wall time covers the K iterations, matching the per-row times
        t_start = time.perf_counter()
        for k in range(cfg.K):
            rec = run.step()
            if k % max(1, cfg.K // 20) == 0 or k == cfg.K - 1:
                log.info("k=%d M_k=%d beta=%.3g ess=%.1f acc=%s", rec.k, rec.M_k, rec.beta, rec.ess,
                         rec.test_accuracy)
    except SamplerError as exc:
        error = exc
        log.error("sampler failed: %s", exc)
    total_ms = (time.perf_counter() - t_start) * 1e3 if t_start is not None else 0.0

    with open(out, "w", newline="") as fh:
        fh.write(head.getvalue())
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in run.records:
            writer.writerow(_row(rec))
        if error is None:
            last = run.records[-1]
            summary = dict(
                k="summary", M_k=run.train.n, test_loss=last.test_loss, test_accuracy=last.test_accuracy,
                sampler_ms=sum(r.sampler_ms for r in run.records), wall_time_ms=total_ms,
            )
            writer.writerow([_fmt(summary.get(c)) for c in TRACE_COLUMNS])
            if run.problem.posterior is not None:
                fh.write("# posterior_mean: " + " ".join(repr(float(v)) for v in run.posterior_mean()) + "\n")
            fh.write("# status: complete\n")
        else:
            fh.write(f"# status: incomplete ({type(error).__name__}: {error})\n")
    return out, error is None


def read_trace(path):
    """Parse a trace file into ``(comment_lines, rows)`` with rows as dicts of strings."""
    comments, body = [], []
    for line in Path(path).read_text().splitlines():
        (comments if line.startswith("#") else body).append(line)
    rows = list(csv.DictReader(body))
    return comments, rows


def strip_timing(path) -> str:
    """Trace text with the wall-time columns removed, for determinism comparisons."""
    comments, rows = read_trace(path)
    keep = [c for c in TRACE_COLUMNS if c not in TIMING_COLUMNS]
    lines = comments + [",".join(keep)] + [",".join(r[c] for c in keep) for r in rows]
    return "\n".join(lines) + "\n"

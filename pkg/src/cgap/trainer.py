"""Training loop, checkpoints, ablation suite and beta sweep."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, NonFiniteError, finite_difference_check
from .config import TrainingConfig
from .data import DownstreamLabels, UrbanRegionGraph
from .evaluation import evaluate_regression_task
from .model import GraphContext, forward, init_params

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_HEADER = ["epoch", "l_r", "l_mob", "l_poi", "l_total"]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, breakdown: dict | None, cause: Exception):
        self.epoch = epoch
        self.breakdown = breakdown
        super().__init__(f"non-finite value at epoch {epoch} ({cause}); last losses: {breakdown}")


@dataclass
class Checkpoint:
    config: TrainingConfig
    params: dict[str, np.ndarray]
    final_loss: dict
    epochs: int
    initial_loss: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "config": self.config.to_dict(),
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()} for k, v in self.params.items()},
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "epochs": self.epochs,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> Checkpoint:
        doc = json.loads(text)
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
        params = {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
        return cls(TrainingConfig.from_dict(doc["config"]), params, doc["final_loss"], doc["epochs"],
                   doc.get("initial_loss", {}), doc["version"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> Checkpoint:
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return self.to_json() == other.to_json()


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    history: list[dict]

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, LOG_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(self.history)
        return buf.getvalue()


def _eval_loss(ctx, params, config) -> dict:
    return forward(ctx, params, config, training=False).breakdown(config.beta).as_dict()


def train(graph: UrbanRegionGraph, config: TrainingConfig, ctx: GraphContext | None = None) -> TrainingResult:
    """Full-batch Adam training; deterministic for a given config and graph.

    ``history`` holds the training-mode losses of every epoch (before that
    epoch's update). ``initial_loss`` and ``final_loss`` on the checkpoint are
    inference-mode (dropout off) losses before and after training.
    """
    ctx = ctx or GraphContext.build(graph, config.mu)
    rng = np.random.default_rng(config.seed)
    params = init_params(ctx, config, rng)
    opt = Adam(lr=config.lr)
    initial = _eval_loss(ctx, params, config)
    history = []
    last = None
    for epoch in range(config.epochs):
        try:
            fp = forward(ctx, params, config, training=True, rng=rng)
            bd = fp.breakdown(config.beta)
            if not np.isfinite(bd.l_total):
                raise NonFiniteError("total_loss")
            grads = fp.tape.backward(fp.loss)
        except NonFiniteError as exc:
            raise TrainingDiverged(epoch, last, exc) from exc
        last = bd.as_dict()
        history.append({"epoch": epoch, **last})
        opt.step(params, grads)
        if epoch % 100 == 0:
            log.debug("epoch %d %s", epoch, last)
    try:
        final = _eval_loss(ctx, params, config)
    except NonFiniteError as exc:
        raise TrainingDiverged(config.epochs, last, exc) from exc
    ckpt = Checkpoint(config, params, final, config.epochs, initial)
    return TrainingResult(ckpt, history)


def embed(checkpoint: Checkpoint, graph: UrbanRegionGraph, ctx: GraphContext | None = None) -> np.ndarray:
    """Inference pass returning the n x d region representation."""
    config = checkpoint.config
    feats = checkpoint.params.get("features")
    if feats is None or feats.shape != (graph.n_regions, config.dim):
        shape = None if feats is None else feats.shape
        raise ValueError(f"checkpoint features {shape} do not fit a graph of {graph.n_regions} regions")
    ctx = ctx or GraphContext.build(graph, config.mu)
    expected = set(init_params(ctx, config, np.random.default_rng(0)))
    if expected != set(checkpoint.params):
        raise ValueError("checkpoint parameters do not match the graph's pooling hierarchy")
    return forward(ctx, checkpoint.params, config, training=False).e_hat.value.copy()


def gradient_check(graph: UrbanRegionGraph, config: TrainingConfig, seed: int = 0, h: float = 1e-5):
    """Max relative autodiff-vs-central-difference error at a random generic point.

    The point avoids the zero-bias initialization, where ReLUs sit exactly on
    their kink: weights are uniform(+-sqrt(3/fan_in)), biases uniform(+-0.1).
    Dropout is forced off.
    """
    config = config.replace(dropout=0.0)
    ctx = GraphContext.build(graph, config.mu)
    rng = np.random.default_rng(seed)
    params = {}
    for name, v in init_params(ctx, config, rng).items():
        if name.endswith("bias"):
            params[name] = rng.uniform(-0.1, 0.1, v.shape)
        else:
            params[name] = rng.uniform(-1.0, 1.0, v.shape) * np.sqrt(3.0 / v.shape[0])
    return finite_difference_check(lambda p: forward(ctx, p, config).loss, params, h=h)


# -- experiments -----------------------------------------------------------------

ABLATIONS = {
    "full": {},
    "cgap_l": {"pooling": "linear"},
    "cgap_no_g": {"attention_mode": "no_global"},
    "poi_only": {"data_mode": "poi_only"},
    "mobility_only": {"data_mode": "mobility_only"},
}
SUITE_HEADER = ["variant", "l_total", "crime_mae", "crime_rmse", "crime_r2",
                "checkin_mae", "checkin_rmse", "checkin_r2"]
DEFAULT_BETAS = (0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("CGAP_THREADS", "1")))
    except ValueError:
        return 1


def _run_variant(args):
    graph, labels, config, lam, folds = args
    result = train(graph, config)
    e_hat = embed(result.checkpoint, graph)
    row = {"l_total": result.checkpoint.final_loss["l_total"]}
    for task in ("crime", "checkin"):
        rep = evaluate_regression_task(e_hat, labels, task, lam=lam, folds=folds, seed=config.seed)
        row.update({f"{task}_mae": rep.mae, f"{task}_rmse": rep.rmse, f"{task}_r2": rep.r2})
    return row


def _map(fn, jobs):
    workers = _workers()
    if workers == 1 or len(jobs) == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_ablation_suite(graph: UrbanRegionGraph, labels: DownstreamLabels, config: TrainingConfig,
                       lam: float = 0.01, folds: int = 5, variants=tuple(ABLATIONS)) -> list[dict]:
    """Train every ablation variant with the shared seed and score its embeddings."""
    jobs = [(graph, labels, config.replace(**ABLATIONS[v]), lam, folds) for v in variants]
    rows = _map(_run_variant, jobs)
    return [{"variant": v, **r} for v, r in zip(variants, rows)]


def beta_sweep(graph: UrbanRegionGraph, labels: DownstreamLabels, config: TrainingConfig,
               betas=DEFAULT_BETAS, lam: float = 0.01, folds: int = 5) -> list[dict]:
    """Crime-task R^2 of the embeddings trained at each beta."""
    jobs = [(graph, labels, config.replace(beta=float(b)), lam, folds) for b in betas]
    rows = _map(_run_variant, jobs)
    return [{"beta": float(b), "r2": r["crime_r2"]} for b, r in zip(betas, rows)]


def rows_to_csv(rows: list[dict], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return buf.getvalue()

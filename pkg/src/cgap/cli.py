"""Command-line entry point.

Every subcommand writes its outputs plus a JSON run manifest. Exit codes:
0 success, 1 invalid input (bad flags, config or data), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .config import ATTENTION_MODES, DATA_MODES, POOLING_MODES, TrainingConfig
from .data import dataset_hash, generate_synthetic_city, load_city_dataset, memory_accounting, save_city_dataset
from .evaluation import evaluate_landuse, evaluate_regression_task
from .model import GraphContext, forward
from .trainer import (
    ABLATIONS,
    DEFAULT_BETAS,
    SUITE_HEADER,
    Checkpoint,
    beta_sweep,
    embed,
    gradient_check,
    rows_to_csv,
    run_ablation_suite,
    train,
)

log = logging.getLogger("cgap")

GRADCHECK_TOL = 1e-4
DEFAULT_LAMBDA = 0.01


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- output helpers ----------------------------------------------------------------


def write_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@dataclass
class RunManifest:
    command: str
    config: dict
    dataset_hash: str | None
    seed: int | None
    outputs: list[str] = field(default_factory=list)
    wall_clock: float = 0.0

    def write(self, path) -> Path:
        return write_atomic(path, dump_json({f.name: getattr(self, f.name) for f in fields(self)}))


def embeddings_csv(region_ids, e_hat: np.ndarray) -> str:
    header = ["region_id"] + [f"e_{k}" for k in range(e_hat.shape[1])]
    lines = [",".join(header)]
    lines += [",".join([rid] + [repr(float(x)) for x in row]) for rid, row in zip(region_ids, e_hat)]
    return "\n".join(lines) + "\n"


def read_embeddings(path, region_ids) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if not header or header[0] != "region_id":
            raise ValueError(f"{path}: expected header region_id,e_0,...")
        rows = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            rows[parts[0]] = [float(x) for x in parts[1:]]
    missing = [r for r in region_ids if r not in rows]
    if missing:
        raise ValueError(f"{path}: no embedding for regions {missing[:5]}")
    return np.array([rows[r] for r in region_ids])


# -- config resolution ---------------------------------------------------------------

_CONFIG_FIELDS = {f.name: f for f in fields(TrainingConfig)}
_EXTRA_KEYS = {"lam": float, "folds": int}


def _coerce(key: str, value: str):
    if key in _EXTRA_KEYS:
        return _EXTRA_KEYS[key](value)
    if key == "alpha":
        parts = [float(v) for v in value.split(",")]
        return parts[0] if len(parts) == 1 else tuple(parts)
    kind = type(getattr(TrainingConfig(), key))
    return kind(value)


def read_config_file(path) -> dict:
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _CONFIG_FIELDS and key not in _EXTRA_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = _coerce(key, value)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad value {value!r} for {key}")
    return out


def resolve(args) -> tuple[TrainingConfig, dict]:
    """Defaults, then the config file, then explicit flags."""
    merged = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in list(_CONFIG_FIELDS) + list(_EXTRA_KEYS):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = _coerce(key, value) if key == "alpha" else value
    extra = {k: merged.pop(k) for k in list(merged) if k in _EXTRA_KEYS}
    extra.setdefault("lam", DEFAULT_LAMBDA)
    extra.setdefault("folds", 5)
    return TrainingConfig.from_dict(merged), extra


# -- parser ---------------------------------------------------------------------------


def _training_flags(p):
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--mu", type=int)
    p.add_argument("--alpha", help="one value, or comma-separated per layer")
    p.add_argument("--gcn-layers", dest="gcn_layers", type=int)
    p.add_argument("--attention-mode", dest="attention_mode", choices=ATTENTION_MODES)
    p.add_argument("--pooling", choices=POOLING_MODES)
    p.add_argument("--data-mode", dest="data_mode", choices=DATA_MODES)


def _eval_flags(p):
    p.add_argument("--lam", type=float, help=f"Lasso penalty (default {DEFAULT_LAMBDA})")
    p.add_argument("--folds", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cgap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic city bundle")
    p.add_argument("--regions", type=int, required=True)
    p.add_argument("--communities", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train and write a checkpoint plus loss log")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    _training_flags(p)

    p = sub.add_parser("embed", help="export region embeddings from a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="downstream metrics for exported embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--task", choices=("crime", "checkin", "landuse", "all"), default="all")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _eval_flags(p)

    p = sub.add_parser("ablate", help="train every ablation variant and score it")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default=",".join(ABLATIONS))
    _training_flags(p)
    _eval_flags(p)

    p = sub.add_parser("sweep-beta", help="crime R^2 across loss weights")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--betas", default=",".join(str(b) for b in DEFAULT_BETAS))
    _training_flags(p)
    _eval_flags(p)

    p = sub.add_parser("gradcheck", help="autodiff vs central differences")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="gradcheck.json")
    p.add_argument("--h", type=float, default=1e-5)
    _training_flags(p)

    p = sub.add_parser("report", help="dump the pooling hierarchy and memory accounting")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="include the learned global feature")
    p.add_argument("--mu", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    return parser


# -- commands -------------------------------------------------------------------------


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def cmd_generate(args):
    graph, labels = generate_synthetic_city(args.regions, args.communities, args.seed)
    out = Path(args.out)
    paths = save_city_dataset(out, graph, labels)
    cfg = {"regions": args.regions, "communities": args.communities}
    return out, cfg, dataset_hash(out), args.seed, [str(p) for p in paths]


def cmd_train(args):
    config, _ = resolve(args)
    graph, _ = load_city_dataset(args.data)
    result = train(graph, config)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.csv")
    write_atomic(out, result.checkpoint.to_json())
    write_atomic(log_path, result.log_csv())
    print(dump_json({"initial_loss": result.checkpoint.initial_loss, "final_loss": result.checkpoint.final_loss}),
          end="")
    return out, config.to_dict(), dataset_hash(args.data), config.seed, [str(out), str(log_path)]


def cmd_embed(args):
    graph, _ = load_city_dataset(args.data)
    ckpt = Checkpoint.load(args.checkpoint)
    e_hat = embed(ckpt, graph)
    out = write_atomic(args.out, embeddings_csv(graph.region_ids, e_hat))
    return out, ckpt.config.to_dict(), dataset_hash(args.data), ckpt.config.seed, [str(out)]


def cmd_eval(args):
    config, extra = resolve(args)
    graph, labels = load_city_dataset(args.data)
    e_hat = read_embeddings(args.embeddings, graph.region_ids)
    tasks = ("crime", "checkin", "landuse") if args.task == "all" else (args.task,)
    reports = []
    for task in tasks:
        if task == "landuse":
            reports.append(evaluate_landuse(e_hat, labels, seed=config.seed).as_dict())
        else:
            rep = evaluate_regression_task(e_hat, labels, task, lam=extra["lam"], folds=extra["folds"],
                                           seed=config.seed)
            reports.append(rep.as_dict())
    doc = reports[0] if len(reports) == 1 else reports
    out = write_atomic(args.out, dump_json(doc))
    return out, {"seed": config.seed, **extra, "task": args.task}, dataset_hash(args.data), config.seed, [str(out)]


def cmd_ablate(args):
    config, extra = resolve(args)
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise ValueError(f"unknown variants {unknown}; choose from {list(ABLATIONS)}")
    graph, labels = load_city_dataset(args.data)
    rows = run_ablation_suite(graph, labels, config, lam=extra["lam"], folds=extra["folds"], variants=variants)
    out = write_atomic(args.out, rows_to_csv(rows, SUITE_HEADER))
    return out, {**config.to_dict(), **extra}, dataset_hash(args.data), config.seed, [str(out)]


def cmd_sweep_beta(args):
    config, extra = resolve(args)
    try:
        betas = [float(b) for b in args.betas.split(",")]
    except ValueError:
        raise ValueError(f"bad --betas {args.betas!r}")
    if any(not 0.0 <= b <= 1.0 for b in betas):
        raise ValueError("betas must lie in [0, 1]")
    graph, labels = load_city_dataset(args.data)
    rows = beta_sweep(graph, labels, config, betas, lam=extra["lam"], folds=extra["folds"])
    out = write_atomic(args.out, rows_to_csv(rows, ["beta", "r2"]))
    return out, {**config.to_dict(), **extra, "betas": betas}, dataset_hash(args.data), config.seed, [str(out)]


def cmd_gradcheck(args):
    config, _ = resolve(args)
    graph, _ = load_city_dataset(args.data)
    worst, per_param = gradient_check(graph, config, seed=config.seed, h=args.h)
    doc = {"max_relative_error": worst, "per_param": per_param, "tolerance": GRADCHECK_TOL,
           "passed": bool(worst < GRADCHECK_TOL)}
    out = write_atomic(args.out, dump_json(doc))
    print(f"max relative error {worst:.3e}")
    return out, config.to_dict(), dataset_hash(args.data), config.seed, [str(out)]


def cmd_report(args):
    config, _ = resolve(args)
    graph, _ = load_city_dataset(args.data)
    ckpt = None
    if args.checkpoint:
        ckpt = Checkpoint.load(args.checkpoint)
        config = ckpt.config
    ctx = GraphContext.build(graph, config.mu)
    layers = [{"layer": l, "n_nodes": p.n_nodes, "n_clusters": p.n_clusters,
               "membership": p.membership.tolist()} for l, p in enumerate(ctx.partitions)]
    sizes = [graph.n_regions] + [p.n_clusters for p in ctx.partitions]
    doc = {"n_regions": graph.n_regions, "mu": config.mu, "sizes": sizes, "layers": layers,
           "memory": memory_accounting(graph, config.mu)}
    if ckpt is not None and ckpt.params.keys() >= {"attn.key"}:
        fp = forward(ctx, ckpt.params, config)
        doc["global_feature"] = fp.hierarchy.global_feature.value.ravel().tolist()
    out = write_atomic(args.out, dump_json(doc))
    return out, config.to_dict(), dataset_hash(args.data), config.seed, [str(out)]


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "embed": cmd_embed,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep-beta": cmd_sweep_beta,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        out, cfg, dhash, seed, outputs = COMMANDS[args.command](args)
        manifest = RunManifest(args.command, cfg, dhash, seed, outputs, time.perf_counter() - start)
        manifest.write(_manifest_path(Path(out)))
    except (ValueError, FileNotFoundError, UsageError) as exc:
        print(f"cgap {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"cgap {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if args.command == "gradcheck" and not json.loads(Path(out).read_text())["passed"]:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Experiment harness.

    python3 -m softnce estimate --jobs 4 --output results/fig1
    python3 -m softnce train --set train.loss_id=st_infonce --set train.epsilon=0.1
    python3 -m softnce sweep --config ablation.json
    python3 -m softnce verify --joints 1000 --eps-grid 11
    python3 -m softnce grad-check --set loss=sd_infonce --set scoring=cosine

A run is described by one JSON document (``--config``) layered over the
command's defaults; ``--set a.b=value`` and the dedicated flags win over
the file. Every CSV gets a ``<name>.meta.json`` sidecar with the resolved
config and seed list. Exit codes: 0 success, 1 config error, 2 audit
failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, astuple, dataclass, fields

import numpy as np

from . import __version__
from .distributions import GmmSpec, label_smooth, make_modes, sample_gmm_dataset
from .evaluation import (
    DiscreteJoint,
    calibration,
    kl_estimation_error,
    mi_bound_audit,
    random_joint,
    topk_accuracy,
)
from .gradients import SCORINGS, finite_difference_check, random_instance
from .losses import (
    LOSS_IDS,
    NoiseModel,
    energy_ce_form,
    infonce_loss,
    nll_loss,
    soft_target_ce_loss,
    soft_target_infonce_loss,
)
from .models import ScoringModel, TrainConfig, forward_logits, init_model, train
from .numerics import child_seeds, make_rng, softmax

log = logging.getLogger("softnce")

EXIT_OK, EXIT_CONFIG, EXIT_AUDIT, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_ALIGNMENTS = [0, 10, 20, 30, 40, 50, 60, 70, 80]
SWEEP_KEYS = ("alignment_percents", "epsilons", "batch_sizes")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    seed: int
    loss_id: str
    alignment_percent: float
    epsilon: float
    batch_size: int
    metric: str
    value: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def sort_key(self):
        return (self.alignment_percent, self.epsilon, self.batch_size, self.seed, self.loss_id, self.metric)

    def cells(self) -> list[str]:
        out = []
        for v in astuple(self):
            out.append(repr(float(v)) if isinstance(v, float) else str(v))
        return out


# --------------------------------------------------------------------------
# configuration


def default_config(command: str) -> dict:
    cfg = {
        "experiment": command,
        "gmm": asdict(GmmSpec()),
        "train": asdict(TrainConfig()),
        "data": {"n_unique": 1600, "n_total": 32000, "n_test": 10000, "label_theta": "unit"},
        "kl_over": "unique",
        "losses": ["nll", "infonce"],
        "sweep": {},
        "seeds": [0],
        "output_dir": "results",
    }
    if command == "estimate":
        cfg["sweep"] = {"alignment_percents": list(DEFAULT_ALIGNMENTS)}
        cfg["seeds"] = list(range(10))
    elif command == "train":
        cfg["train"]["loss_id"] = "st_infonce"
        cfg["train"]["epsilon"] = 0.1
    elif command == "sweep":
        cfg["losses"] = ["soft_ce", "st_infonce"]
    elif command == "verify":
        cfg["verify"] = {
            "joints": 1000,
            "eps_grid": 11,
            "independent_joints": 100,
            "grad_instances": 10,
            "identity_batches": 200,
            "seed": 0,
        }
    elif command == "grad-check":
        cfg["grad"] = {
            "loss": "st_infonce",
            "scoring": "dot",
            "seed": 0,
            "n": 4,
            "k": 5,
            "d": 6,
            "epsilon": 0.1,
            "temperature": 1.0,
            "step": 1e-3,
            "tolerance": 1e-5,
        }
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``dotted.key=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    leaf = parts[-1]
    if leaf not in node and node is not cfg.get("sweep"):
        raise ConfigError(f"unknown config key {key!r}")
    node[leaf] = _parse_value(raw)


def _merge(base: dict, extra: dict, path: str = "") -> None:
    for k, v in extra.items():
        if k not in base and path != "sweep.":
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base.get(k), dict) and isinstance(v, dict):
            _merge(base[k], v, path + k + ".")
        else:
            base[k] = v


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = default_config(command)
    if args.config:
        try:
            with open(args.config) as fh:
                _merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    for assignment in args.set or []:
        apply_override(cfg, assignment)
    if args.output is not None:
        cfg["output_dir"] = args.output
    if args.kl_over is not None:
        cfg["kl_over"] = args.kl_over
    if args.label_theta is not None:
        cfg["data"]["label_theta"] = args.label_theta
    if args.noise is not None:
        cfg["train"]["noise"] = args.noise
    if args.extra_negatives is not None:
        cfg["train"]["extra_negatives"] = args.extra_negatives
    if command == "verify":
        if args.joints is not None:
            cfg["verify"]["joints"] = args.joints
        if args.eps_grid is not None:
            cfg["verify"]["eps_grid"] = args.eps_grid
    if command == "grad-check":
        if args.loss is not None:
            cfg["grad"]["loss"] = args.loss
        if args.scoring is not None:
            cfg["grad"]["scoring"] = args.scoring
    validate_config(command, cfg)
    return cfg


def validate_config(command: str, cfg: dict) -> None:
    try:
        GmmSpec.from_dict(cfg["gmm"])
        TrainConfig.from_dict(cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds must be a non-empty list")
    if not all(isinstance(s, int) and 0 <= s < 2**64 for s in seeds):
        raise ConfigError("seeds must be unsigned 64-bit integers")
    if cfg["kl_over"] not in ("unique", "full"):
        raise ConfigError("kl_over must be 'unique' or 'full'")
    if cfg["data"]["label_theta"] not in ("unit", "scaled"):
        raise ConfigError("label_theta must be 'unit' or 'scaled'")
    data = cfg["data"]
    if not 1 <= data["n_unique"] <= data["n_total"] or data["n_test"] < 1:
        raise ConfigError("need 1 <= n_unique <= n_total and n_test >= 1")
    unknown = [loss for loss in cfg["losses"] if loss not in LOSS_IDS]
    if unknown or not cfg["losses"]:
        raise ConfigError(f"losses must be a non-empty subset of {LOSS_IDS}")
    for key, values in cfg["sweep"].items():
        if key not in SWEEP_KEYS:
            raise ConfigError(f"unknown sweep list {key!r}")
        if not isinstance(values, list):
            raise ConfigError(f"sweep.{key} must be a list")
    if command == "sweep":
        if not cfg["sweep"]:
            raise ConfigError("sweep needs at least one sweep list")
        if any(len(v) == 0 for v in cfg["sweep"].values()):
            raise ConfigError("empty sweep product")
    if command in ("estimate", "sweep"):
        # catches invalid sweep points before any training starts
        for a, e, b in _grid(cfg):
            try:
                GmmSpec.from_dict({**cfg["gmm"], "alignment_percent": a})
                for loss in cfg["losses"]:
                    TrainConfig.from_dict({**cfg["train"], "epsilon": e, "batch_size": b, "loss_id": loss})
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
    if command == "grad-check":
        g = cfg["grad"]
        if g["loss"] not in LOSS_IDS or g["scoring"] not in SCORINGS:
            raise ConfigError("grad-check needs a known loss and scoring")


def _grid(cfg: dict) -> list[tuple[float, float, int]]:
    sweep = cfg["sweep"]
    alignments = sweep.get("alignment_percents", [cfg["gmm"]["alignment_percent"]])
    epsilons = sweep.get("epsilons", [cfg["train"]["epsilon"]])
    batches = sweep.get("batch_sizes", [cfg["train"]["batch_size"]])
    return [(float(a), float(e), int(b)) for a, e, b in itertools.product(alignments, epsilons, batches)]


# --------------------------------------------------------------------------
# output


def _ensure_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {path!r} is not writable: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path!r} is not writable")


def write_meta(csv_path: str, command: str, cfg: dict, extra: dict | None = None) -> str:
    stem = os.path.splitext(csv_path)[0]
    meta = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "seeds": cfg["seeds"],
        "kl": {"direction": "forward: KL(true || model)", "over": cfg["kl_over"]},
    }
    meta.update(extra or {})
    path = stem + ".meta.json"
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_rows(path: str, rows: list[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ResultRow.columns())
        for r in rows:
            w.writerow(r.cells())


def write_table(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


def _flag(row: ResultRow) -> ResultRow:
    return ResultRow(*astuple(row)[:6], row.metric + "_flagged", 1.0)


def _clean(rows: list[ResultRow]) -> tuple[list[ResultRow], list[dict]]:
    out, flagged = [], []
    for r in rows:
        if math.isfinite(r.value):
            out.append(r)
        else:
            out.append(_flag(r))
            flagged.append(asdict(_flag(r)))
    return sorted(out, key=ResultRow.sort_key), flagged


def _run_cells(fn, cells: list, jobs: int) -> list:
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, cells))
    return [fn(c) for c in cells]


# --------------------------------------------------------------------------
# GMM experiment cells


@dataclass
class _CellData:
    theta: np.ndarray
    dataset: object
    test: object
    init: ScoringModel
    train_seed: int


def _cell_data(cfg: dict, alignment: float, seed: int) -> _CellData:
    """Dataset, test set and initial model shared by every loss in a cell."""
    spec = GmmSpec.from_dict({**cfg["gmm"], "alignment_percent": alignment})
    theta = make_modes(spec)
    data = cfg["data"]
    ds_seed, init_seed, train_seed, test_seed = child_seeds(seed, 4)
    ds = sample_gmm_dataset(
        spec, data["n_unique"], data["n_total"], theta, make_rng(ds_seed), label_theta=data["label_theta"]
    )
    test = sample_gmm_dataset(
        spec, data["n_test"], data["n_test"], theta, make_rng(test_seed), label_theta=data["label_theta"]
    )
    init = init_model(spec.n_modes, spec.dim, make_rng(init_seed))
    return _CellData(theta, ds, test, init, train_seed)


def _train_one(cfg: dict, cell: _CellData, loss_id: str, **overrides):
    tc = TrainConfig.from_dict({**cfg["train"], **overrides, "loss_id": loss_id, "seed": cell.train_seed})
    return train(cell.dataset, tc, cell.init)


def _kl_points(cfg: dict, cell: _CellData) -> np.ndarray:
    return cell.dataset.unique_inputs if cfg["kl_over"] == "unique" else cell.dataset.inputs


def classification_metrics(model: ScoringModel, inputs, labels) -> dict:
    logits = forward_logits(model, inputs)
    probs = softmax(logits, axis=1)
    report = calibration(probs, labels)
    return {
        "top1": topk_accuracy(logits, labels, 1),
        "top5": topk_accuracy(logits, labels, min(5, model.k)),
        "ece": report.ece,
    }, report


def _estimate_cell(args) -> list[ResultRow]:
    cfg, alignment, seed = args
    cell = _cell_data(cfg, alignment, seed)
    rows = []
    for loss_id in cfg["losses"]:
        try:
            result = _train_one(cfg, cell, loss_id)
            kl = kl_estimation_error(cell.theta, result.final_model, _kl_points(cfg, cell))
        except FloatingPointError as exc:
            log.warning("alignment %s seed %s %s: %s", alignment, seed, loss_id, exc)
            kl = math.nan
        rows.append(
            ResultRow(cfg["experiment"], seed, loss_id, alignment, float(cfg["train"]["epsilon"]),
                      int(cfg["train"]["batch_size"]), "kl", float(kl))
        )
    log.info("estimate cell alignment=%s seed=%s done", alignment, seed)
    return rows


def _sweep_cell(args) -> list[ResultRow]:
    cfg, alignment, epsilon, batch_size, seed = args
    cell = _cell_data(cfg, alignment, seed)
    rows = []
    for loss_id in cfg["losses"]:
        try:
            result = _train_one(cfg, cell, loss_id, epsilon=epsilon, batch_size=batch_size)
            metrics, _ = classification_metrics(result.final_model, cell.test.inputs, cell.test.hard_labels)
            metrics["kl"] = kl_estimation_error(cell.theta, result.final_model, _kl_points(cfg, cell))
        except FloatingPointError as exc:
            log.warning("sweep cell %s: %s", args[1:], exc)
            metrics = {m: math.nan for m in ("top1", "top5", "ece", "kl")}
        for name in sorted(metrics):
            rows.append(ResultRow(cfg["experiment"], seed, loss_id, alignment, epsilon, batch_size, name,
                                  float(metrics[name])))
    log.info("sweep cell alignment=%s eps=%s batch=%s seed=%s done", alignment, epsilon, batch_size, seed)
    return rows


def summarize(rows: list[ResultRow], metric: str = "kl") -> list[list]:
    """Median and IQR per (alignment, loss) over seeds."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r.metric == metric:
            groups.setdefault((r.alignment_percent, r.loss_id), []).append(r.value)
    out = []
    for (a, loss), vals in sorted(groups.items()):
        q25, med, q75 = (float(v) for v in np.percentile(vals, [25, 50, 75]))
        out.append([a, loss, len(vals), med, q25, q75, q75 - q25])
    return out


SUMMARY_HEADER = ["alignment_percent", "loss_id", "n", "median", "q25", "q75", "iqr"]


# --------------------------------------------------------------------------
# commands


def cmd_estimate(cfg: dict, jobs: int = 1) -> int:
    out_dir = cfg["output_dir"]
    _ensure_dir(out_dir)
    alignments = [float(a) for a in cfg["sweep"].get("alignment_percents", DEFAULT_ALIGNMENTS)]
    cells = [(cfg, a, s) for a in alignments for s in cfg["seeds"]]
    rows, flagged = _clean([r for chunk in _run_cells(_estimate_cell, cells, jobs) for r in chunk])
    path = os.path.join(out_dir, "estimate.csv")
    write_rows(path, rows)
    write_meta(path, "estimate", cfg, {"n_rows": len(rows), "flagged": flagged})
    summary_path = os.path.join(out_dir, "estimate_summary.csv")
    write_table(summary_path, SUMMARY_HEADER, summarize(rows))
    write_meta(summary_path, "estimate", cfg, {"summary_of": "estimate.csv"})
    return EXIT_NUMERIC if flagged else EXIT_OK


def cmd_train(cfg: dict, jobs: int = 1) -> int:
    out_dir = cfg["output_dir"]
    _ensure_dir(out_dir)
    seed = cfg["seeds"][0]
    alignment = float(cfg["gmm"]["alignment_percent"])
    loss_id = cfg["train"]["loss_id"]
    cell = _cell_data(cfg, alignment, seed)
    try:
        result = _train_one(cfg, cell, loss_id)
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    model = result.final_model
    metrics, report = classification_metrics(model, cell.test.inputs, cell.test.hard_labels)
    metrics["kl"] = kl_estimation_error(cell.theta, model, _kl_points(cfg, cell))

    model.save(os.path.join(out_dir, "model.json"))
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(
            {**metrics, "epochs_run": result.epochs_run, "best_epoch": result.best_epoch},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    rel_path = os.path.join(out_dir, "reliability.csv")
    report.to_csv(rel_path)
    write_meta(rel_path, "train", cfg, {"ece": report.ece})

    eps, bs = float(cfg["train"]["epsilon"]), int(cfg["train"]["batch_size"])
    rows = [ResultRow(cfg["experiment"], seed, loss_id, alignment, eps, bs, k, float(v)) for k, v in metrics.items()]
    rows, flagged = _clean(rows)
    path = os.path.join(out_dir, "train.csv")
    write_rows(path, rows)
    write_meta(path, "train", cfg, {"n_rows": len(rows), "flagged": flagged})
    return EXIT_NUMERIC if flagged else EXIT_OK


def cmd_sweep(cfg: dict, jobs: int = 1) -> int:
    out_dir = cfg["output_dir"]
    _ensure_dir(out_dir)
    cells = [(cfg, a, e, b, s) for (a, e, b) in _grid(cfg) for s in cfg["seeds"]]
    rows, flagged = _clean([r for chunk in _run_cells(_sweep_cell, cells, jobs) for r in chunk])
    path = os.path.join(out_dir, "sweep.csv")
    write_rows(path, rows)
    write_meta(path, "sweep", cfg, {"n_rows": len(rows), "n_runs": len(cells) * len(cfg["losses"]),
                                    "flagged": flagged})
    return EXIT_NUMERIC if flagged else EXIT_OK


def _flip_sign(gz, gy):
    return -gz, -gy


def audit_mi_bound(rng, n_joints: int, eps_grid: int, n_independent: int, tol: float = 1e-12) -> dict:
    eps_values = np.linspace(0.0, 1.0, eps_grid) if eps_grid > 1 else np.array([0.0])
    failures, checks, min_lhs = [], 0, math.inf

    def fail(kind, joint, eps, res):
        if len(failures) < 10:
            failures.append({"kind": kind, "epsilon": float(eps), "table": joint.table.tolist(), **res})

    for _ in range(n_joints):
        joint = random_joint(rng)
        for eps in eps_values:
            res = mi_bound_audit(joint, float(eps))
            checks += 1
            min_lhs = min(min_lhs, res["lhs"])
            if res["lhs"] < -tol:
                fail("negative_lhs", joint, eps, res)
            if eps == 0.0 and abs(res["lhs"] - res["mi"]) > tol:
                fail("eps0_not_mi", joint, eps, res)
            if eps == 1.0 and abs(res["lhs"]) > tol:
                fail("eps1_not_zero", joint, eps, res)
    for _ in range(n_independent):
        pz = rng.dirichlet(np.ones(int(rng.integers(1, 7))))
        py = rng.dirichlet(np.ones(int(rng.integers(1, 7))))
        table = np.outer(pz, py)
        joint = DiscreteJoint(table / table.sum())
        for eps in eps_values:
            res = mi_bound_audit(joint, float(eps))
            checks += 1
            if abs(res["lhs"]) > tol:
                fail("independent_not_zero", joint, eps, res)
    return {"checks": checks, "min_lhs": float(min_lhs), "failures": failures, "passed": not failures}


def audit_gradients(rng, n_instances: int, tolerance: float = 1e-5, grad_hook=None) -> dict:
    """Finite-difference check of every loss under both scorings.

    Sizes are drawn with N <= 16, K <= 8 and 2 <= d <= 8; cosine scoring is
    piecewise constant in one dimension, so d starts at 2.
    """
    per_loss, failures = {}, []
    for loss_id in LOSS_IDS:
        for scoring in SCORINGS:
            worst = 0.0
            for _ in range(n_instances):
                n, k, d = int(rng.integers(2, 17)), int(rng.integers(2, 9)), int(rng.integers(2, 9))
                eps = float(rng.uniform(0.0, 0.5))
                temp = float(rng.choice([0.5, 1.0, 2.0]))
                inst = random_instance(loss_id, rng, n=n, k=k, d=d, scoring=scoring, epsilon=eps, temperature=temp)
                rep = finite_difference_check(loss_id, inst, tolerance=tolerance, grad_hook=grad_hook)
                worst = max(worst, rep.max_rel_error)
                if not rep.passed and len(failures) < 10:
                    failures.append({"loss": loss_id, "scoring": scoring, "n": n, "k": k, "d": d, **rep.to_dict()})
            per_loss[f"{loss_id}/{scoring}"] = float(worst)
    return {"max_rel_error": per_loss, "failures": failures, "passed": not failures}


def _random_batch(rng):
    n, k = int(rng.integers(1, 17)), int(rng.integers(2, 9))
    logits = rng.normal(scale=float(rng.choice([0.5, 2.0, 8.0])), size=(n, k))
    labels = rng.integers(0, k, size=n)
    noise = NoiseModel.from_probs(rng.dirichlet(np.full(k, 2.0)), float(rng.choice([0.1, 1.0, 3.0])))
    return logits, labels, noise


def audit_identities(rng, n_batches: int) -> dict:
    """Soft losses reduce to hard ones on one-hot targets; the energy form matches."""
    red_infonce = red_ce = form = 0.0
    for _ in range(n_batches):
        logits, labels, noise = _random_batch(rng)
        n, k = logits.shape
        onehot = label_smooth(labels, k, 0.0)
        if n >= 2:
            a = soft_target_infonce_loss(logits, onehot, noise).value
            b = infonce_loss(logits, labels, noise).value
            red_infonce = max(red_infonce, abs(a - b))
        red_ce = max(red_ce, abs(soft_target_ce_loss(logits, onehot).value - nll_loss(logits, labels).value))
        targets = rng.dirichlet(np.full(k, float(rng.choice([0.1, 1.0]))), size=n)
        extra = rng.dirichlet(np.ones(k), size=int(rng.integers(1, 5))) if n == 1 else None
        v10 = soft_target_infonce_loss(logits, targets, noise, extra).value
        v11 = energy_ce_form(logits, targets, noise, extra).value
        form = max(form, abs(v10 - v11))
    return {
        "reduction_infonce_max_abs": float(red_infonce),
        "reduction_ce_max_abs": float(red_ce),
        "form_max_abs": float(form),
        "passed": bool(red_infonce <= 1e-12 and red_ce <= 1e-12 and form <= 1e-9),
    }


def run_verify(cfg: dict, inject_fault: bool = False) -> dict:
    v = cfg["verify"]
    seeds = child_seeds(int(v["seed"]), 3)
    report = {
        "mi_bound": audit_mi_bound(make_rng(seeds[0]), int(v["joints"]), int(v["eps_grid"]),
                                   int(v["independent_joints"])),
        "gradients": audit_gradients(make_rng(seeds[1]), int(v["grad_instances"]),
                                     grad_hook=_flip_sign if inject_fault else None),
        "identities": audit_identities(make_rng(seeds[2]), int(v["identity_batches"])),
    }
    report["passed"] = all(part["passed"] for part in report.values())
    return report


def cmd_verify(cfg: dict, jobs: int = 1, inject_fault: bool = False) -> int:
    report = run_verify(cfg, inject_fault)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    out_dir = cfg["output_dir"]
    _ensure_dir(out_dir)
    with open(os.path.join(out_dir, "verify.json"), "w") as fh:
        fh.write(text + "\n")
    return EXIT_OK if report["passed"] else EXIT_AUDIT


def cmd_grad_check(cfg: dict, jobs: int = 1, inject_fault: bool = False) -> int:
    g = cfg["grad"]
    inst = random_instance(
        g["loss"], make_rng(int(g["seed"])), n=int(g["n"]), k=int(g["k"]), d=int(g["d"]),
        scoring=g["scoring"], epsilon=float(g["epsilon"]), temperature=float(g["temperature"]),
    )
    rep = finite_difference_check(
        g["loss"], inst, step=float(g["step"]), tolerance=float(g["tolerance"]),
        grad_hook=_flip_sign if inject_fault else None,
    )
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if rep.passed else EXIT_AUDIT


COMMANDS = {
    "estimate": cmd_estimate,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softnce", description="Soft-target InfoNCE experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="K=V", help="override a config key (dotted path)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--output", help="output directory")
        p.add_argument("--kl-over", choices=["unique", "full"])
        p.add_argument("--label-theta", choices=["unit", "scaled"])
        p.add_argument("--noise", choices=["uniform", "empirical"])
        p.add_argument("--extra-negatives", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("verify", "grad-check"):
            p.add_argument("--inject-fault", action="store_true", help="flip analytic gradient signs (self-test)")
        if name == "verify":
            p.add_argument("--joints", type=int)
            p.add_argument("--eps-grid", type=int)
        if name == "grad-check":
            p.add_argument("--loss", choices=LOSS_IDS)
            p.add_argument("--scoring", choices=SCORINGS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.jobs < 1:
        print("config error: --jobs must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = resolve_config(args.command, args)
        kw = {"jobs": args.jobs}
        if args.command in ("verify", "grad-check"):
            kw["inject_fault"] = args.inject_fault
        return COMMANDS[args.command](copy.deepcopy(cfg), **kw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

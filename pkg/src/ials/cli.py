"""Command line interface: split, train, evaluate, sweep.

Every option can also come from a flat key = value config file
(--config); explicit flags win over the file, the file wins over built-in
defaults.  Exit codes: 0 success, 2 usage or input errors, 1 anything
else that fails at runtime.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import metrics as mt
from .errors import IalsError, InputError
from .model import load_model, save_model
from .solver import Hyperparameters, train

log = logging.getLogger("ials")

ALPHA0_GRID_DEFAULT = (1.0, 0.3, 0.1, 0.03, 0.01, 0.003)
LAMBDA_STAR_GRID_DEFAULT = (0.1, 0.03, 0.01, 0.003, 0.001, 0.0003)


# ---------------------------------------------------------------------------
# config file + option merging
# ---------------------------------------------------------------------------

def load_config_file(path) -> dict[str, str]:
    """Flat "key = value" lines; # starts a comment; keys match the flag
    names with dashes or underscores interchangeable."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path} line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key == "lambda":  # matches the --lambda flag's lambda_ destination
            key = "lambda_"
        out[key] = value.strip().strip("\"'")
    return out


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(p) for p in str(text).split(",") if p.strip())
    except ValueError as exc:
        raise InputError(f"bad k list {text!r}: {exc}") from exc
    if not ks or min(ks) < 1:
        raise InputError(f"k values must be positive integers, got {text!r}")
    return ks


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(p) for p in str(text).split(",") if p.strip())
    except ValueError as exc:
        raise InputError(f"bad number list {text!r}: {exc}") from exc
    if not vals:
        raise InputError("empty value list")
    return vals


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise InputError(f"bad boolean {text!r}")


class Options:
    """Namespace + config file + defaults, consulted in that order."""

    _CONV = {int: int, float: float, str: str}

    def __init__(self, ns: argparse.Namespace):
        self.ns = ns
        self.config = load_config_file(ns.config) if getattr(ns, "config", None) else {}

    def get(self, name: str, conv=str, default=None):
        value = getattr(self.ns, name, None)
        if value is not None:
            return value
        if name in self.config:
            raw = self.config[name]
            try:
                return conv(raw)
            except (TypeError, ValueError) as exc:
                raise InputError(f"config key {name}: bad value {raw!r}") from exc
        return default

    def require(self, name: str, conv=str, flag: str | None = None):
        value = self.get(name, conv)
        if value is None:
            raise InputError(f"missing required option {flag or '--' + name.replace('_', '-')}")
        return value


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file; flags override it")
    p.add_argument("--seed", type=int, help="base RNG seed (default 0)")


def _add_hp_flags(p: argparse.ArgumentParser, with_dim: bool = True) -> None:
    if with_dim:
        p.add_argument("--dim", type=int, help="embedding dimension")
    p.add_argument("--alpha0", type=float, help="weight of the implicit all-pairs term")
    p.add_argument("--lambda", dest="lambda_", type=float,
                   help="L2 strength (direct mode)")
    p.add_argument("--lambda-star", type=float,
                   help="L2 strength on the nu-star reference scale (normalized mode)")
    p.add_argument("--nu", type=float, help="frequency exponent in [0,1] (default 1)")
    p.add_argument("--nu-star", type=float,
                   help="reference exponent for --lambda-star (default 1)")
    p.add_argument("--sigma-star", type=float, help="init scale (default 0.1)")
    p.add_argument("--solver", choices=["exact", "block"],
                   help="per-entity solver (default exact)")
    p.add_argument("--block-size", type=int, help="block solver block size (default 128)")
    p.add_argument("--projection-repeats", type=int,
                   help="block passes per fold-in projection (default 8)")


def _build_hp(opts: Options, dim: int | None = None, iterations: int | None = None,
              ) -> Hyperparameters:
    if dim is None:
        dim = opts.require("dim", int)
    if iterations is None:
        iterations = opts.get("iterations", int, 16)
    lambda_ = opts.get("lambda_", float)
    lambda_star = opts.get("lambda_star", float)
    if lambda_ is None and lambda_star is None:
        raise InputError("set one of --lambda / --lambda-star")
    return Hyperparameters(
        dim=dim,
        alpha0=opts.require("alpha0", float),
        lambda_=lambda_,
        lambda_star=lambda_star,
        nu=opts.get("nu", float, 1.0),
        nu_star=opts.get("nu_star", float, 1.0),
        iterations=iterations,
        sigma_star=opts.get("sigma_star", float, 0.1),
        seed=opts.get("seed", int, 0),
        solver=opts.get("solver", str, "exact"),
        block_size=opts.get("block_size", int, 128),
        projection_repeats=opts.get("projection_repeats", int, 8),
    )


def _eval_ks(opts: Options, protocol: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """(recall_ks, ndcg_ks); for loo the ndcg list doubles as the HR list."""
    recall_ks = opts.get("recall_ks", _parse_ks, (20, 50))
    default_ndcg = (10,) if protocol == "loo" else (100,)
    ndcg_ks = opts.get("ndcg_ks", _parse_ks, default_ndcg)
    return recall_ks, ndcg_ks


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_split(ns: argparse.Namespace) -> int:
    opts = Options(ns)
    data_path = opts.require("data")
    out_dir = opts.require("out")
    protocol = opts.require("protocol")
    seed = opts.get("seed", int, 0)

    data = ds.load_interactions(
        data_path,
        delimiter=opts.get("delimiter"),
        columns=opts.get("columns", str, "user,item,rating,time"),
        min_rating=opts.get("min_rating", float),
    )
    print(f"loaded: users={data.num_users} items={data.num_items} "
          f"interactions={data.num_pairs}")

    if protocol == "strong-gen":
        validation, test = ds.strong_generalization_split(
            data,
            n_holdout_users=opts.require("holdout_users", int),
            n_validation_users=opts.get("validation_users", int, 0),
            fold_in_fraction=opts.get("fold_in_fraction", float, 0.8),
            min_user_interactions=opts.get("min_user_interactions", int, 0),
            seed=seed,
        )
        ds.save_strong_generalization(out_dir, validation, test)
        ds.write_id_maps(out_dir, data)
        print(f"train interactions={validation.train.num_pairs} "
              f"validation users={len(validation.users)} test users={len(test.users)}")
    else:
        split = ds.leave_one_out_split(
            data,
            n_negatives=opts.get("negatives", int, 100),
            seed=seed,
            allow_seen_negatives=opts.get("allow_seen_negatives", _parse_bool, False),
        )
        ds.save_leave_one_out(out_dir, split)
        ds.write_id_maps(out_dir, data)
        print(f"train interactions={split.train.num_pairs} "
              f"holdout users={split.users.size} "
              f"negatives per user={split.negatives.shape[1]}")
    print(f"split written to {out_dir}")
    return 0


def _train_one(train_data, hp: Hyperparameters, out_dir: Path, seed: int,
               eval_fn=None) -> Path:
    """Train one model for one seed; returns the model file path."""
    hp = dataclasses.replace(hp, seed=seed)
    log_path = out_dir / f"train-seed{seed}.jsonl"
    model_path = out_dir / f"model-seed{seed}.bin"
    started = time.perf_counter()

    with open(log_path, "w", encoding="utf-8") as log_file:
        def observer(iteration, report, metrics):
            record = {
                "iteration": report.iteration,
                "L": report.L, "L_S": report.L_S, "L_I": report.L_I, "R": report.R,
            }
            if metrics is not None:
                record["validation"] = metrics.to_json_dict()
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
            extra = ""
            if metrics is not None:
                extra = " " + " ".join(f"{k}={v:.4f}" for k, v in metrics.means.items())
            log.info("seed %d iter %d/%d L=%.6g%s",
                     seed, iteration, hp.iterations, report.L, extra)

        model, _ = train(train_data, hp, observer=observer, eval_fn=eval_fn)

    save_model(model_path, model)
    log.info("seed %d done in %.1fs, model at %s",
             seed, time.perf_counter() - started, model_path)
    return model_path


def cmd_train(ns: argparse.Namespace) -> int:
    opts = Options(ns)
    split_dir = opts.require("split_dir")
    protocol = opts.require("protocol")
    out_dir = Path(opts.require("out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    repeats = opts.get("repeats", int, 1)
    if repeats < 1:
        raise InputError("--repeats must be >= 1")
    hp = _build_hp(opts)
    recall_ks, ndcg_ks = _eval_ks(opts, protocol)
    log_validation = opts.get("log_validation", _parse_bool, True)

    eval_fn = None
    if protocol == "strong-gen":
        validation, test = ds.load_strong_generalization(split_dir)
        train_data = test.train
        if log_validation and validation is not None and validation.users:
            def eval_fn(model, _split=validation):
                return mt.evaluate_strong_generalization(
                    model, _split, hp, recall_ks=recall_ks, ndcg_ks=ndcg_ks)
    else:
        split = ds.load_leave_one_out(split_dir)
        train_data = split.train

    base_seed = hp.seed
    paths = [_train_one(train_data, hp, out_dir, base_seed + r, eval_fn=eval_fn)
             for r in range(repeats)]
    print("\n".join(str(p) for p in paths))
    return 0


def _aggregate(reports: list[mt.MetricReport]) -> dict:
    """Single report stays flat; several become mean + <name>_std fields."""
    if len(reports) == 1:
        return reports[0].to_json_dict()
    names = list(reports[0].means)
    out: dict = {}
    for name in names:
        vals = np.array([r.means[name] for r in reports])
        out[name] = float(vals.mean())
        out[name + "_std"] = float(vals.std(ddof=1))
    out["n_users"] = reports[0].n_users
    out["n_models"] = len(reports)
    return out


def _evaluate_models(model_paths, split_dir, protocol, opts: Options) -> dict:
    recall_ks, ndcg_ks = _eval_ks(opts, protocol)
    reports = []
    if protocol == "strong-gen":
        validation, test = ds.load_strong_generalization(split_dir)
        part = opts.get("part", str, "test")
        if part == "validation":
            if validation is None or not validation.users:
                raise InputError(f"{split_dir} has no validation users")
            split = validation
        elif part == "test":
            split = test
        else:
            raise InputError(f"--part must be validation or test, got {part!r}")
        first = load_model(model_paths[0])
        hp = _build_hp(opts, dim=first.dim, iterations=0)
        for path in model_paths:
            model = load_model(path)
            reports.append(mt.evaluate_strong_generalization(
                model, split, hp, recall_ks=recall_ks, ndcg_ks=ndcg_ks))
    else:
        split = ds.load_leave_one_out(split_dir)
        for path in model_paths:
            model = load_model(path)
            reports.append(mt.evaluate_sampled(model, split, ks=ndcg_ks))
    return _aggregate(reports)


def cmd_evaluate(ns: argparse.Namespace) -> int:
    opts = Options(ns)
    split_dir = opts.require("split_dir")
    protocol = opts.require("protocol")
    if not ns.model:
        raise InputError("pass at least one --model file")
    result = _evaluate_models(ns.model, split_dir, protocol, opts)
    text = json.dumps(result, indent=2)
    print(text)
    out = opts.get("out")
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_sweep(ns: argparse.Namespace) -> int:
    opts = Options(ns)
    split_dir = opts.require("split_dir")
    protocol = opts.require("protocol")
    out_path = Path(opts.get("out", str, "sweep.csv"))
    recall_ks, ndcg_ks = _eval_ks(opts, protocol)
    seed = opts.get("seed", int, 0)

    alpha0_grid = opts.get("alpha0_grid", _parse_floats, ALPHA0_GRID_DEFAULT)
    lambda_grid = opts.get("lambda_grid", _parse_floats)
    lambda_star_grid = opts.get("lambda_star_grid", _parse_floats)
    if lambda_grid is not None and lambda_star_grid is not None:
        raise InputError("set only one of --lambda-grid / --lambda-star-grid")
    direct = lambda_grid is not None
    reg_grid = lambda_grid if direct else (lambda_star_grid or LAMBDA_STAR_GRID_DEFAULT)
    reg_field = "lambda_" if direct else "lambda_star"
    reg_col = "lambda" if direct else "lambda_star"

    if protocol == "strong-gen":
        validation, test = ds.load_strong_generalization(split_dir)
        if validation is None or not validation.users:
            raise InputError(f"{split_dir} has no validation users to sweep on")
        train_data = validation.train
        metric = opts.get("metric", str, f"ndcg@{ndcg_ks[0]}")

        def evaluate(model, hp):
            return mt.evaluate_strong_generalization(
                model, validation, hp, recall_ks=recall_ks, ndcg_ks=ndcg_ks)
    else:
        outer = ds.load_leave_one_out(split_dir)
        # No validation artifacts exist under leave-one-out, so carve an
        # inner validation split out of the training interactions.
        inner = ds.leave_one_out_split(
            outer.train, n_negatives=outer.negatives.shape[1], seed=seed)
        train_data = inner.train
        metric = opts.get("metric", str, f"hr@{ndcg_ks[0]}")

        def evaluate(model, hp):
            return mt.evaluate_sampled(model, inner, ks=ndcg_ks)

    base = Hyperparameters(
        dim=opts.require("dim", int),
        alpha0=alpha0_grid[0],
        **{reg_field: reg_grid[0]},
        nu=opts.get("nu", float, 1.0),
        nu_star=opts.get("nu_star", float, 1.0),
        iterations=opts.get("iterations", int, 16),
        sigma_star=opts.get("sigma_star", float, 0.1),
        seed=seed,
        solver=opts.get("solver", str, "exact"),
        block_size=opts.get("block_size", int, 128),
        projection_repeats=opts.get("projection_repeats", int, 8),
    )

    metric_names = None
    rows = []
    best = None
    for alpha0 in alpha0_grid:
        for reg in reg_grid:
            hp = dataclasses.replace(base, alpha0=alpha0, **{reg_field: reg})
            tag = f"alpha0={alpha0:g} {reg_col}={reg:g}"
            try:
                started = time.perf_counter()
                model, _ = train(train_data, hp)
                report = evaluate(model, hp)
                elapsed = time.perf_counter() - started
            except IalsError as exc:
                log.warning("grid point %s failed: %s", tag, exc)
                rows.append({"alpha0": alpha0, reg_col: reg, "status": f"error: {exc}"})
                continue
            if metric_names is None:
                metric_names = list(report.means)
                if metric not in metric_names:
                    raise InputError(
                        f"selection metric {metric!r} not among {metric_names}")
            row = {"alpha0": alpha0, reg_col: reg, "status": "ok"}
            row.update({k: report.means[k] for k in metric_names})
            rows.append(row)
            log.info("%s -> %s=%.4f (%.1fs)", tag, metric, report.means[metric], elapsed)
            if best is None or report.means[metric] > best[2]:
                best = (alpha0, reg, report.means[metric])

    fieldnames = ["alpha0", reg_col, "status"] + (metric_names or [])
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    print(f"sweep table written to {out_path}")

    if best is None:
        log.error("every grid point failed")
        return 1
    print(f"best: alpha0={best[0]:g} {reg_col}={best[1]:g} {metric}={best[2]:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ials",
        description="Implicit-feedback matrix factorization: split, train, "
                    "evaluate, sweep.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="materialize an evaluation split directory")
    _add_common(p)
    p.add_argument("--data", help="raw interaction file (csv/tsv, optionally .gz)")
    p.add_argument("--protocol", choices=["strong-gen", "loo"])
    p.add_argument("--out", help="split directory to write")
    p.add_argument("--delimiter", help="field separator (default: , or tab by extension)")
    p.add_argument("--columns", help="positional names, e.g. user,item,rating,time")
    p.add_argument("--min-rating", type=float,
                   help="keep rows with rating >= this (default: keep all)")
    p.add_argument("--holdout-users", type=int, help="strong-gen: #test users")
    p.add_argument("--validation-users", type=int,
                   help="strong-gen: #validation users (default 0)")
    p.add_argument("--fold-in-fraction", type=float,
                   help="strong-gen: revealed fraction per eval user (default 0.8)")
    p.add_argument("--min-user-interactions", type=int,
                   help="strong-gen: eligibility threshold for eval users")
    p.add_argument("--negatives", type=int, help="loo: sampled negatives (default 100)")
    p.add_argument("--allow-seen-negatives", action="store_const", const=True,
                   dest="allow_seen_negatives",
                   help="loo: sample negatives from all items except the holdout")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train and persist model(s) with a JSONL loss log")
    _add_common(p)
    p.add_argument("--split-dir", help="split directory from the split subcommand")
    p.add_argument("--protocol", choices=["strong-gen", "loo"])
    p.add_argument("--out", help="output directory for models and logs")
    _add_hp_flags(p)
    p.add_argument("--iterations", type=int, help="training iterations (default 16)")
    p.add_argument("--repeats", type=int,
                   help="train this many models with seeds seed..seed+n-1")
    p.add_argument("--recall-ks", dest="recall_ks", type=_parse_ks,
                   help="comma list, e.g. 20,50")
    p.add_argument("--ndcg-ks", dest="ndcg_ks", type=_parse_ks,
                   help="comma list, e.g. 100 (under loo this is the HR/NDCG k list)")
    p.add_argument("--no-log-validation", action="store_const", const=False,
                   dest="log_validation",
                   help="skip per-iteration validation metrics even if available")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate saved model(s) on a split")
    _add_common(p)
    p.add_argument("--model", nargs="+", help="model file(s); several -> mean and std")
    p.add_argument("--split-dir", help="split directory")
    p.add_argument("--protocol", choices=["strong-gen", "loo"])
    p.add_argument("--part", choices=["validation", "test"],
                   help="strong-gen part to score (default test)")
    _add_hp_flags(p, with_dim=False)
    p.add_argument("--recall-ks", dest="recall_ks", type=_parse_ks)
    p.add_argument("--ndcg-ks", dest="ndcg_ks", type=_parse_ks)
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid-search alpha0 x lambda on validation data")
    _add_common(p)
    p.add_argument("--split-dir")
    p.add_argument("--protocol", choices=["strong-gen", "loo"])
    p.add_argument("--out", help="CSV output path (default sweep.csv)")
    _add_hp_flags(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--alpha0-grid", type=_parse_floats, help="comma list of alpha0 values")
    p.add_argument("--lambda-grid", type=_parse_floats, help="comma list (direct mode)")
    p.add_argument("--lambda-star-grid", type=_parse_floats,
                   help="comma list (normalized mode; the default grid)")
    p.add_argument("--metric", help="selection metric name (default ndcg@100 / hr@10)")
    p.add_argument("--recall-ks", dest="recall_ks", type=_parse_ks)
    p.add_argument("--ndcg-ks", dest="ndcg_ks", type=_parse_ks)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        datefmt="%H:%M:%S")
    parser = make_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except InputError as exc:
        log.error("%s", exc)
        return 2
    except IalsError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 1


def entry_point() -> None:
    sys.exit(main())

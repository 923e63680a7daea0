"""``hmpp`` command line: simulate, train, search, evaluate, rescale-check, importance.

Exit codes: 0 success, 1 runtime error, 2 usage error. Log verbosity comes
from the HMPP_LOG environment variable (default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import evaluation as ev
from .core import read_dataset, write_dataset
from .models import FEATURES, KINDS, OracleModel, load_model, save_model
from .objectives import WeightingConfig
from .simulator import SimConfig, simulate_dataset
from .trainer import DEFAULT_GRID, TrainConfig, TrainingDiverged, hyperparameter_search, split_dataset, train

log = logging.getLogger("hmpp")

LAWS = {"log-uniform": "log_uniform", "log-trunc-exp": "log_truncated_exponential"}
ORACLE_FLAGS = {"true-rate": "true_rate", "plugin": "plugin_detached", "one": "constant_one"}


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _train_config(a) -> TrainConfig:
    return TrainConfig(
        objective=a.objective,
        weighting=WeightingConfig(a.gamma, a.epsilon, ORACLE_FLAGS[a.oracle]),
        epochs=a.epochs,
        learning_rate=a.lr,
        batch_size=a.batch,
        l1=a.l1,
        l2=a.l2,
        seed=a.seed,
        normalize_weights=not a.no_normalize,
        weight_refresh=a.weight_refresh,
        selection=a.selection,
        hidden=a.hidden,
        covariate=a.covariate,
    ).resolved()


def _load_model_arg(a):
    if a.model == "oracle":
        return OracleModel(a.oracle_scale), {"model": "oracle", "scale": a.oracle_scale}
    theta, tc = load_model(a.model)
    return theta, tc


def _eval_data(a, train_config: dict):
    data = read_dataset(a.data)
    if a.split == "test":
        if "objective" not in train_config:
            raise ValueError("--split test needs a trained model file carrying its train config")
        data = split_dataset(data, TrainConfig.from_dict(train_config))["test"]
    return data


def cmd_simulate(a):
    cfg = SimConfig(mode=a.mode, samples=a.samples, horizon=a.horizon, base_rate_law=LAWS[a.law],
                    seed=a.seed, covariate_noise=a.covariate_noise)
    log.info("simulate config %s", cfg.to_dict())
    write_dataset(simulate_dataset(cfg, threads=a.threads), a.out)


def cmd_train(a):
    tc = _train_config(a)
    log.info("train config %s model %s", tc.to_dict(), a.model)
    data = read_dataset(a.data)
    try:
        theta, report = train(data, tc, a.model)
    except TrainingDiverged as e:
        _write_json({"error": str(e), "state": e.state}, (a.out or "model.json") + ".diverged.json")
        raise
    log.info("trained in %.2fs, selected epoch %d", report.wall_clock, report.selected_epoch)
    meta = {**tc.to_dict(), "model_kind": a.model}
    save_model(theta, a.out, meta)
    if a.report:
        _write_json({"config": meta, **report.to_dict()}, a.report)


def cmd_search(a):
    base = _train_config(a)
    if base.objective == "mlpp":
        base = replace(base, objective="hmpp", weighting=WeightingConfig(10.0, 0.0, ORACLE_FLAGS[a.oracle]))
    if a.grid == "default":
        grid = DEFAULT_GRID
    else:
        with open(a.grid, encoding="utf-8") as f:
            grid = json.load(f)
    log.info("search base %s grid %s", base.to_dict(), grid)
    best, results = hyperparameter_search(read_dataset(a.data), grid, base, a.model)
    _write_json({"best": {**best.to_dict(), "model_kind": a.model}, "grid": grid, "results": results}, a.out)


def cmd_evaluate(a):
    model, tc = _load_model_arg(a)
    data = _eval_data(a, tc)
    preds = ev.mean_predicted_rates(model, data)
    report = ev.calibration_report(preds, data, a.groups)
    conc = ev.concordance_lowest_quartile(preds, data, a.bootstrap, a.seed, a.quartile_by, a.threads)
    files = ev.emit_calibration_artifacts(report, a.out_prefix, svg=not a.no_svg)
    out = {
        "config": {"groups": a.groups, "bootstrap": a.bootstrap, "seed": a.seed, "split": a.split,
                   "quartile_by": a.quartile_by, "train_config": tc},
        "calibration": report.to_dict(),
        "concordance_lowest_quartile": vars(conc),
    }
    _write_json(out, a.out_prefix + "evaluation.json")
    log.info("wrote %s", files)


def cmd_rescale_check(a):
    model, tc = _load_model_arg(a)
    data = _eval_data(a, tc)
    res = ev.ks_uniform_statistic(ev.rescale_intervals(model, data, a.censored))
    _write_json({"config": {"split": a.split, "censored": a.censored, "model": tc}, "ks": vars(res)}, a.out)


def cmd_importance(a):
    model, tc = _load_model_arg(a)
    if not hasattr(model, "rates"):
        raise ValueError("--model must be a trained model file for importance")
    data = _eval_data(a, tc)
    rows = [ev.permutation_importance(model, data, f, a.repeats, a.seed) for f in a.features]
    _write_json({"config": {"repeats": a.repeats, "seed": a.seed, "split": a.split, "train_config": tc},
                 "importance": rows}, a.out)


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmpp", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=1,
                        help="worker threads for simulation and bootstrap; results do not depend on it")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--mode", choices=["singly", "doubly"], default="singly")
    s.add_argument("--samples", type=_positive_int, default=2000)
    s.add_argument("--horizon", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--law", choices=sorted(LAWS), default="log-uniform")
    s.add_argument("--covariate-noise", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    def train_flags(t):
        t.add_argument("--data", required=True)
        t.add_argument("--objective", choices=["mlpp", "hmpp"], default="mlpp")
        t.add_argument("--model", choices=KINDS, default="loglinear")
        t.add_argument("--gamma", type=float, default=10.0)
        t.add_argument("--epsilon", type=float, default=0.0)
        t.add_argument("--oracle", choices=sorted(ORACLE_FLAGS), default="plugin")
        t.add_argument("--l1", type=float, default=0.0)
        t.add_argument("--l2", type=float, default=0.0)
        t.add_argument("--epochs", type=_positive_int, default=50)
        t.add_argument("--lr", type=float, default=1e-3)
        t.add_argument("--batch", type=_positive_int, default=8)
        t.add_argument("--seed", type=int, default=0)
        t.add_argument("--selection", choices=["tune_ll", "last"], default="tune_ll")
        t.add_argument("--weight-refresh", choices=["step", "epoch"], default="step")
        t.add_argument("--no-normalize", action="store_true")
        t.add_argument("--hidden", type=_positive_int, default=16)
        t.add_argument("--covariate", default="rate")

    t = sub.add_parser("train", parents=[common])
    train_flags(t)
    t.add_argument("--out", required=True)
    t.add_argument("--report")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("search", parents=[common])
    train_flags(g)
    g.add_argument("--grid", default="default", help="'default' or a JSON file of name -> values")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_search)

    def model_flags(m):
        m.add_argument("--model", required=True, help="model file, or 'oracle' for the generating rate")
        m.add_argument("--oracle-scale", type=float, default=1.0)
        m.add_argument("--data", required=True)
        m.add_argument("--split", choices=["all", "test"], default="all")

    e = sub.add_parser("evaluate", parents=[common])
    model_flags(e)
    e.add_argument("--groups", type=_positive_int, default=10)
    e.add_argument("--bootstrap", type=_positive_int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--quartile-by", choices=["predicted", "true_rate"], default="predicted")
    e.add_argument("--no-svg", action="store_true")
    e.add_argument("--out-prefix", default="results/")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("rescale-check", parents=[common])
    model_flags(r)
    r.add_argument("--censored", choices=["concatenate", "drop"], default="concatenate",
                   help="carry each sequence's censored tail into the next, or drop it")
    r.add_argument("--out", default="-")
    r.set_defaults(func=cmd_rescale_check)

    i = sub.add_parser("importance", parents=[common])
    model_flags(i)
    i.add_argument("--repeats", type=_positive_int, default=20)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--features", nargs="+", choices=FEATURES, default=list(FEATURES))
    i.add_argument("--out", default="-")
    i.set_defaults(func=cmd_importance)
    return p


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("HMPP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    log.info("resolved arguments %s", {k: v for k, v in vars(a).items() if k != "func"})
    try:
        a.func(a)
    except (ValueError, OSError, RuntimeError, KeyError) as e:
        print(f"hmpp {a.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

"""``eqodds`` command line.

Every subcommand prints ``key=value`` lines on stdout. Files are written only
here, never by the library modules. All randomness goes through ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import attain, postprocess, report, rocgeom, simulate, trainer
from .noise import LinearScm, NoiseLaw
from .probcore import (DeterministicClassifier, empirical_rates, eo_violation,
                       positive_rates)
from .statmod import KernelConfig, ci_test

OUT_ENV = "EQODDS_OUT"
DEFAULT_OUT = "eqodds-out"


class CliError(Exception):
    pass


def _emit(key: str, value) -> None:
    if isinstance(value, (float, np.floating)):
        value = repr(float(value))
    print(f"{key}={value}")


def _fmt_rates(rates) -> str:
    return ";".join(f"{a}:{r.fpr},{r.tpr}" for a, r in sorted(rates.items()))


def _write(path: Path, data, binary: bool = False) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if binary:
        path.write_bytes(data)
    else:
        path.write_text(data)


def _output_dir(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)


# ----------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    if args.kind == "scm":
        scm = LinearScm(args.q, args.b, args.c, args.d, NoiseLaw.parse(args.ex),
                        NoiseLaw.parse(args.eh), NoiseLaw.parse(args.ey))
        sample = simulate.gen_linear_scm(scm, args.n, args.seed, a_law=args.a_law,
                                         thm1=args.thm1)
    else:
        if args.joint:
            joint = simulate.read_joint(args.joint)
        else:
            joint = simulate.appendix_joint(args.appendix, exact=False)
        sample = simulate.gen_discrete(joint, args.n, args.seed)
    text = simulate.dump_csv(sample)
    if args.out:
        _write(Path(args.out), text)
        _emit("rows", sample.n)
        _emit("out", args.out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    data = simulate.load_csv(args.data, args.protected, args.target)
    task = "regression" if args.task == "reg" else "binary"
    spec = trainer.MlpSpec(widths=tuple(int(w) for w in args.widths.split(",")),
                           activation=args.activation,
                           noise_dim=args.noise_dim if args.stochastic else 0, task=task,
                           seed=args.seed, use_protected=not args.no_protected)
    cfg = trainer.TrainConfig(lam=args.lam, lr=args.lr, batch=args.batch, epochs=args.epochs,
                              ramp_epochs=args.ramp,
                              kernel=KernelConfig(bandwidth="variance", ridge=args.ridge))
    try:
        model = trainer.train(data, spec, cfg)
    except trainer.TrainingError as err:
        raise CliError(f"{err} (last finite epoch {err.last_finite_epoch})") from None
    out = Path(args.out)
    _write(out, trainer.to_bytes(model), binary=True)
    _write(out.with_name(out.name + ".json"), trainer.spec_sidecar(model, cfg))
    last = model.trace[-1] if model.trace else None
    _emit("params", model.n_params())
    if last:
        _emit("final_loss", last.loss)
        _emit("final_penalty", last.penalty)
        _emit("final_objective", last.objective)
    _emit("model", str(out))
    return 0


def _load_model(path: str):
    p = Path(path)
    return trainer.from_bytes(p.read_bytes(), p.with_name(p.name + ".json").read_text())


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    data = simulate.load_csv(args.data, args.protected, args.target)
    pred = trainer.predict(model, data.a, data.x, simulate.rng_for(args.seed))
    out = data.with_predictions(pred)
    text = simulate.dump_csv(out, args.pred_col)
    if args.out:
        _write(Path(args.out), text)
        _emit("rows", out.n)
        if model.spec.task == "regression":
            _emit("mse", float(np.mean((pred - data.y) ** 2)))
        else:
            _emit("accuracy", float(np.mean(pred == data.y)))
        _emit("out", args.out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_citest(args) -> int:
    data = simulate.load_csv(args.data, args.protected, args.target, pred_col=args.pred_col)
    cfg = KernelConfig(perms=args.perms, ridge=args.ridge)
    res = ci_test(data.yhat, data.a, data.y, cfg, seed=args.seed)
    for line in res.lines():
        print(line)
    _emit("reject_at_0.05", res.p_value <= 0.05)
    return 0


def _read_classifier(path: str):
    return simulate.classifier_from_json(Path(path).read_text())


def cmd_check(args) -> int:
    joint = simulate.read_joint(args.joint)
    clf = _read_classifier(args.clf)
    if not isinstance(clf, DeterministicClassifier):
        raise CliError("check needs a deterministic table ('f')")
    rep = attain.check_thm4(joint, clf)
    rates = positive_rates(joint, clf)
    _emit("holds", rep.holds)
    _emit("failed_condition", rep.failed_condition)
    _emit("witness", ",".join(map(str, rep.witness)))
    _emit("max_gap", float(rep.max_gap))
    _emit("violation", str(eo_violation(rates)))
    _emit("rates", _fmt_rates({a: r for a, r in rates.items()}))
    return 0


def cmd_search(args) -> int:
    joint = simulate.read_joint(args.joint)
    found = attain.search_fair_deterministic(joint)
    _emit("fair_tables", len(found))
    _emit("nontrivial", sum(not f.is_constant() for f in found))
    for f in found:
        _emit("table", json.dumps(f.f.tolist()))
    return 0


def cmd_postprocess(args) -> int:
    costs = (args.cost_fp, args.cost_fn)
    if args.data:
        data = simulate.load_csv(args.data, args.protected, args.target, pred_col=args.pred_col)
        counts = np.zeros((int(data.a.max()) + 1, 2, 2))
        np.add.at(counts, (data.a.astype(int), data.y.astype(int), data.yhat.astype(int)), 1)
        table = counts / counts.sum()
        base = empirical_rates(data)
    else:
        joint = simulate.read_joint(args.joint).to_float()
        clf = _read_classifier(args.clf)
        table = postprocess.joint_ayyhat(joint, clf)
        base = positive_rates(joint, clf)
    params, point, loss = postprocess.fit_postprocess(table, costs, tau=args.tau)
    _emit("base_rates", _fmt_rates(base))
    _emit("beta0", json.dumps([float(v) for v in params.beta0]))
    _emit("beta1", json.dumps([float(v) for v in params.beta1]))
    _emit("fpr", float(point.fpr))
    _emit("tpr", float(point.tpr))
    _emit("loss", float(loss))
    return 0


def cmd_regions(args) -> int:
    joint = simulate.read_joint(args.joint).to_float()
    clf = _read_classifier(args.clf) if args.clf else postprocess.bayes_classifier(joint)
    rates = positive_rates(joint, clf)
    post = rocgeom.feasible_area_post(rates)
    inproc = postprocess.feasible_area_in(joint, args.grid)
    regions = [rocgeom.group_hull(g) for g in rates.values()] + [post, inproc]
    labels = [f"hull a={a}" for a in rates] + ["post-processing", "in-processing"]
    if args.pseudo:
        regions.append(postprocess.feasible_area_in_pseudo(joint, clf, args.grid))
        labels.append("in-processing + pseudo-constraints")
        _emit("hausdorff_pseudo_post", rocgeom.region_hausdorff(regions[-1], post))
    _emit("margin", float(rocgeom.nontriviality_margin(rates)))
    _emit("post_area", post.area())
    _emit("in_area", inproc.area())
    _emit("post_vertices", ";".join(f"{x!r},{y!r}" for x, y in post.vertices))
    if args.out:
        _write(Path(args.out), report.render_regions(regions, labels))
        _emit("svg", args.out)
    return 0


def _parse_seeds(args) -> tuple[int, ...]:
    if args.seeds:
        return tuple(int(s) for s in args.seeds.split(","))
    return tuple(range(args.seed, args.seed + args.n_seeds))


def cmd_experiment(args) -> int:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    try:
        spec = report.ExperimentSpec(args.pipeline, _parse_seeds(args), overrides)
    except report.UnknownPipelineError as err:
        print(f"eqodds experiment: error: {err}", file=sys.stderr)
        return 2
    bundle = report.run_experiment(spec)
    out = _output_dir(args.out) / spec.pipeline
    for name, blob in bundle.artifacts.items():
        _write(out / name, blob, binary=True)
    _emit("pipeline", spec.pipeline)
    _emit("seeds", ",".join(map(str, spec.seeds)))
    _emit("config_hash", spec.config_hash())
    _emit("out", str(out))
    _emit("status", "complete" if bundle.ok else "failed")
    for failure in bundle.failures:
        print(f"failure: {failure}", file=sys.stderr)
    if "summary.csv" in bundle.artifacts:
        sys.stdout.write(bundle.artifacts["summary.csv"].decode())
    return 0 if bundle.ok else 1


# ---------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eqodds", description=(
        "Equalized Odds under deterministic and stochastic prediction: simulation, "
        "training, testing and ROC geometry."))
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        p.set_defaults(func=func)
        return p

    def data_cols(p, pred=False):
        p.add_argument("--protected", default="a", help="protected column (default a)")
        p.add_argument("--target", default="y", help="target column (default y)")
        if pred:
            p.add_argument("--pred-col", default="yhat", help="prediction column (default yhat)")

    p = add("simulate", cmd_simulate, "draw a synthetic sample as CSV")
    p.add_argument("--kind", choices=("scm", "discrete"), default="scm")
    p.add_argument("--n", type=int, default=1000)
    for name, default in (("q", 0.7), ("b", 0.6), ("c", 0.9), ("d", 0.6)):
        p.add_argument(f"--{name}", type=float, default=default)
    p.add_argument("--ex", default="uniform:0.2", help="law of E_X, e.g. laplace:0.4")
    p.add_argument("--eh", default="uniform:0.2", help="law of E_H")
    p.add_argument("--ey", default="uniform:0.1", help="law of E_Y")
    p.add_argument("--a-law", choices=("bernoulli", "uniform"), default="bernoulli")
    p.add_argument("--thm1", action="store_true",
                   help="refuse models where X does not drive Y or A and Y are independent")
    p.add_argument("--joint", help="joint table file for --kind discrete")
    p.add_argument("--appendix", choices=("expL", "expR", "indep"), default="expR")
    p.add_argument("--out", help="output CSV (default stdout)")

    p = add("train", cmd_train, "fit a penalized feed-forward predictor")
    p.add_argument("--data", required=True)
    data_cols(p)
    p.add_argument("--task", choices=("reg", "bin"), default="reg")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--stochastic", type=int, choices=(0, 1), default=0)
    p.add_argument("--noise-dim", type=int, default=4,
                   help="noise inputs of a stochastic model (default 4)")
    p.add_argument("--widths", default="30,30")
    p.add_argument("--activation", choices=("selu", "tanh"), default="selu")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--ramp", type=int, default=0, help="epochs over which lambda ramps up")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--ridge", type=float, default=1e-3, help="KMCD ridge of the penalty")
    p.add_argument("--no-protected", action="store_true",
                   help="do not feed the protected column to the model")
    p.add_argument("--out", required=True, help="model file; a .json sidecar is written next to it")

    p = add("predict", cmd_predict, "apply a trained model to a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    data_cols(p, pred=True)
    p.add_argument("--out", help="output CSV (default stdout)")

    p = add("citest", cmd_citest, "conditional independence test of prediction and A given Y")
    p.add_argument("--data", required=True)
    data_cols(p, pred=True)
    p.add_argument("--perms", type=int, default=199)
    p.add_argument("--ridge", type=float, default=1e-3)

    p = add("check", cmd_check, "coverage and matching conditions for a deterministic table")
    p.add_argument("--joint", required=True)
    p.add_argument("--clf", required=True, help='JSON file {"f": [[...]]}')

    p = add("search", cmd_search, "enumerate all deterministic tables satisfying EO")
    p.add_argument("--joint", required=True)

    p = add("postprocess", cmd_postprocess, "fit EO post-processing of a binary predictor")
    p.add_argument("--data", help="CSV with a binary prediction column")
    data_cols(p, pred=True)
    p.add_argument("--joint", help="joint table file (with --clf) instead of --data")
    p.add_argument("--clf", help='JSON file {"f": ...} or {"p1": ...}')
    p.add_argument("--cost-fp", type=float, default=1.0)
    p.add_argument("--cost-fn", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.0, help="allowed rate gap (0 = exact EO)")

    p = add("regions", cmd_regions, "ROC feasible areas of post- and in-processing")
    p.add_argument("--joint", required=True)
    p.add_argument("--clf", help="base classifier (default: cost-minimizing table)")
    p.add_argument("--grid", type=int, default=postprocess.DEFAULT_GRID)
    p.add_argument("--pseudo", action="store_true", help="add the pseudo-constrained region")
    p.add_argument("--out", help="SVG file")

    p = add("experiment", cmd_experiment, "run a named experiment pipeline")
    p.add_argument("pipeline", help=f"one of: {', '.join(report.PIPELINES)}")
    p.add_argument("--seeds", help="comma-separated seed list (overrides --seed/--n-seeds)")
    p.add_argument("--n-seeds", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="parameter override")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or {DEFAULT_OUT})")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, simulate.IngestionError, ValueError, FileNotFoundError) as err:
        print(f"eqodds {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

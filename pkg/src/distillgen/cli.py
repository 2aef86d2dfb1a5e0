"""Command-line front end: contexts, collect, distill, eval and theory subcommands.

Every command is a pure function of its flags and input files.  Output
files are written atomically, floats carry 17 significant digits, and
exit codes are 0 (success), 2 (configuration or contract error),
3 (theorem hypothesis violated) and 4 (numeric failure).
"""

import argparse
import csv
import glob
import io
import json
import os
import sys

import numpy as np

from . import data as data_mod
from . import experiments as ex
from . import nn, theory
from .data import DatasetParseError, atomic_write_text
from .distill import curve_csv, default_config, train_ensemble
from .ensemble import Ensemble, EnsemblePolicy, aggregate, evaluate, fmt_float, results_csv
from .envs import fourrooms as fr
from .envs.reacher import ReacherContext, ReacherEnv, subgroup_contexts
from .errors import ConfigError, ContractError, HypothesisError, NumericError
from .losses import LOSS_KINDS, LossSpec
from .teachers import GridPlanner, PureExplorer

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NUMERIC = 0, 2, 3, 4


class CLIError(Exception):
    """Raised for bad flags or inputs; maps to exit code 2."""


def _dash(name):
    return name.replace("_", "-")


def _undash(name):
    return name.replace("-", "_")


def parse_seeds(text):
    """``'1..10'`` (inclusive range), ``'3'`` or ``'1,4,9'`` -> list of ints."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}; use '1..10' or '1,2,3'") from None


def _write(path, text):
    atomic_write_text(path, text)
    print(path)


# ---------------------------------------------------------------- contexts

def _context_doc(env, split, seed, contexts, extra=None):
    doc = {"env": env, "split": split, "seed": seed, "contexts": [c.to_dict() for c in contexts]}
    doc.update(extra or {})
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def load_contexts(path):
    """``(env name, contexts)`` from a contexts JSON file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CLIError(f"cannot read contexts file {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise CLIError(f"contexts file {path} is not valid JSON: {exc}") from None
    env = doc.get("env")
    cls = {"fourrooms": fr.FourRoomsContext, "reacher": ReacherContext}.get(env)
    if cls is None:
        raise CLIError(f"contexts file {path} names unknown env {env!r}")
    return env, [cls.from_dict(c) for c in doc["contexts"]]


def cmd_contexts(a):
    for name in ("train", "val", "test"):
        if getattr(a, name) < 1:
            raise CLIError(f"--{name} must be >= 1, got {getattr(a, name)}")
    if a.env == "fourrooms":
        splits = fr.fourrooms_generate(a.seed, a.train, a.val, a.test, size=a.grid_size)
        extra = {"grid_size": a.grid_size}
    else:
        if a.layout == "subgroup":
            train = subgroup_contexts(a.train)
        else:
            train = ex.base_contexts(a.seed, a.train)
        splits = (train, ex.reacher_test_contexts(a.val, a.seed, a.random_poses, stream=1),
                  ex.reacher_test_contexts(a.test, a.seed, a.random_poses, stream=0))
        extra = {"layout": a.layout, "random_poses": bool(a.random_poses)}
    for split, ctx in zip(("train", "val", "test"), splits):
        _write(os.path.join(a.out, f"{split}.json"), _context_doc(a.env, split, a.seed, ctx, extra))


# ---------------------------------------------------------------- collect

REACHER_KINDS = ("training-contexts", "plus-c4", "plus-ck", "plus-random")
GRID_KINDS = ("teacher", "explore-go", "mixed")


def cmd_collect(a):
    env_name, contexts = load_contexts(a.contexts)
    if a.env and a.env != env_name:
        raise CLIError(f"--env {a.env} does not match contexts file env {env_name}")
    if env_name == "reacher":
        if a.kind not in REACHER_KINDS:
            raise CLIError(f"dataset kind {a.kind!r} is not available on the reacher (choose from {REACHER_KINDS})")
        env = ReacherEnv()
        teacher = ex.make_reacher_teacher(a.teacher or "ik", env)
        if a.kind == "training-contexts":
            ds = data_mod.build_training_contexts(env, teacher, contexts, a.size)
        elif a.kind in ("plus-c4", "plus-ck"):
            k = 4 if a.kind == "plus-c4" else a.k
            ds = data_mod.build_plus_ck(env, teacher, contexts, k, a.size)
        else:
            ds = data_mod.build_plus_random(env, teacher, contexts, target_size=a.size,
                                            rng=ex.rng_for(a.seed, 12), k=a.k)
    else:
        if a.kind not in GRID_KINDS:
            raise CLIError(f"dataset kind {a.kind!r} is not available on fourrooms (choose from {GRID_KINDS})")
        if a.teacher not in (None, "planner"):
            raise CLIError("fourrooms datasets use the planner teacher")
        if a.size is None:
            raise CLIError("fourrooms datasets need --size")
        env = fr.FourRoomsEnv(contexts[0].size, encoding=a.encoding)
        teacher = GridPlanner(a.temperature)
        if a.kind == "teacher":
            ds = data_mod.build_training_contexts(env, teacher, contexts, a.size, seed=a.seed, targets=a.targets)
        elif a.kind == "explore-go":
            ds = data_mod.build_explore_go(env, teacher, PureExplorer(), a.K, a.size, contexts, seed=a.seed,
                                           targets=a.targets)
        else:
            ds = data_mod.build_mixed(env, teacher, PureExplorer(), a.size, contexts, seed=a.seed, targets=a.targets)
    ds.meta["flags"] = {k: v for k, v in sorted(vars(a).items()) if k not in ("func", "out")}
    data_mod.save(ds, a.out)
    print(a.out)


# ---------------------------------------------------------------- distill

def _load_dataset(path):
    if not os.path.exists(path):
        raise CLIError(f"dataset {path} does not exist")
    try:
        return data_mod.load(path)
    except DatasetParseError as exc:
        raise CLIError(f"cannot parse dataset {path}: {exc}") from None


def cmd_distill(a):
    ds = _load_dataset(a.data)
    loss = LossSpec(_undash(a.loss), entropy_weight=a.lam)
    if a.preset == "desk":
        base = ex.REACHER_TRAIN if ds.env == "reacher" else ex.GRID_TRAIN
    else:
        base = default_config(ds.env, ds.kind, loss.kind)
    over = {k: v for k, v in (("epochs", a.epochs), ("batch_size", a.batch), ("lr", a.lr),
                              ("optimizer", a.optimizer), ("shuffle_seed", a.shuffle_seed)) if v is not None}
    cfg = base.with_(**over)
    seeds = a.seeds if a.seeds is not None else list(range(1, a.N + 1))
    if len(seeds) != a.N:
        raise CLIError(f"--N {a.N} but {len(seeds)} seeds given")
    hidden = tuple(a.hidden) if a.hidden else (ex.REACHER_HIDDEN if ds.env == "reacher" else ex.GRID_HIDDEN)
    x = ds.features()
    out_dim = 2 if ds.env == "reacher" else fr.N_ACTIONS
    arch = nn.Architecture(x.shape[1], hidden, out_dim)
    res = train_ensemble(ds, arch, loss, cfg, seeds, features=x)
    for p, curve in zip(res.members(), res.curves.T):
        _write(os.path.join(a.out, f"model_{p.seed}.json"), p.to_json() + "\n")
        atomic_write_text(os.path.join(a.out, f"curve_{p.seed}.csv"), curve_csv(curve))
    meta = {"dataset": os.path.abspath(a.data), "kind": ds.kind, "env": ds.env, "loss": loss.kind,
            "semantics": "probability_vector" if loss.softmax_head else "action_vector",
            "config": {"epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr,
                       "optimizer": cfg.optimizer, "shuffle_seed": cfg.shuffle_seed},
            "seeds": seeds, "encoding": ds.meta.get("encoding")}
    _write(os.path.join(a.out, "ensemble.json"), json.dumps(meta, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------- eval

def load_ensemble(model_dir):
    """``(Ensemble, metadata)`` from a directory written by ``distill``; members ordered by seed."""
    meta_path = os.path.join(model_dir, "ensemble.json")
    if not os.path.exists(meta_path):
        raise CLIError(f"{model_dir} has no ensemble.json")
    with open(meta_path) as fh:
        meta = json.load(fh)
    paths = glob.glob(os.path.join(model_dir, "model_*.json"))
    if not paths:
        raise CLIError(f"no model files in {model_dir}")
    members = []
    for p in paths:
        with open(p) as fh:
            members.append(nn.Params.from_json(fh.read()))
    members.sort(key=lambda m: m.seed)
    arch = members[0].arch
    if any(m.arch != arch for m in members):
        raise CLIError(f"ensemble members in {model_dir} have differing architectures")
    return Ensemble(members, meta["semantics"]), meta


def _single_row(env, kind, loss, n, k, split, report, discounted):
    vals = report.discounted if discounted else report.returns
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return {"env": env, "dataset_kind": kind, "loss_kind": loss, "N": int(n), "subgroup_k": k, "split": split,
            "mean": float(np.mean(vals)), "std": std, "ci95": 1.96 * std / np.sqrt(len(vals)), "seeds": 1,
            "discounted": discounted}


def _svg_plot(rows, path):
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    rows = [r for r in rows if not r["discounted"]]
    fig, ax = plt.subplots(figsize=(4, 3))
    xs = [r["N"] for r in rows]
    ax.errorbar(xs, [r["mean"] for r in rows], yerr=[r["ci95"] for r in rows], marker="o", capsize=3)
    ax.set_xscale("log")
    ax.set_xlabel("ensemble size N")
    ax.set_ylabel(f"{rows[0]['split']} return")
    fig.tight_layout()
    buf = io.StringIO()
    plt.rcParams["svg.hashsalt"] = "distillgen"
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())


def cmd_eval(a):
    env_name, contexts = load_contexts(a.contexts)
    if env_name == "fourrooms":
        env = fr.FourRoomsEnv(contexts[0].size, encoding=a.encoding, max_steps=a.max_steps or 200)
    else:
        env = ReacherEnv()
    rows = []
    if a.policy == "planner":
        if env_name != "fourrooms":
            raise CLIError("--policy planner needs fourrooms contexts")
        rep = evaluate(GridPlanner(a.temperature), contexts, a.episodes, a.gamma, ex.rng_for(a.seed, 7), env)
        for disc in (False, True):
            rows.append(_single_row(env_name, "none", "none", 1, a.k, a.split, rep, disc))
    else:
        if not a.models:
            raise CLIError("--models is required for ensemble evaluation")
        loaded = [load_ensemble(d) for d in a.models]
        archs = {e.arch for e, _ in loaded}
        if len(archs) > 1:
            raise CLIError("ensembles have differing architectures")
        meta = loaded[0][1]
        if env_name == "fourrooms" and meta.get("encoding") and meta["encoding"] != a.encoding:
            raise CLIError(f"models were trained on {meta['encoding']!r} features, --encoding is {a.encoding!r}")
        sizes = a.N or [len(loaded[0][0])]
        for n in sizes:
            if any(n > len(e) for e, _ in loaded):
                raise CLIError(f"N={n} exceeds the ensemble size")
            reports = [evaluate(EnsemblePolicy(e.subset(n), deterministic=a.deterministic), contexts, a.episodes,
                                a.gamma, ex.rng_for(a.seed, 7), env) for e, _ in loaded]
            for disc in (False, True):
                if len(reports) == 1:
                    rows.append(_single_row(env_name, meta["kind"], meta["loss"], n, a.k, a.split, reports[0], disc))
                else:
                    agg = aggregate(reports, discounted=disc)
                    rows.append({"env": env_name, "dataset_kind": meta["kind"], "loss_kind": meta["loss"], "N": n,
                                 "subgroup_k": a.k, "split": a.split, "mean": agg.mean, "std": agg.std,
                                 "ci95": agg.ci95, "seeds": agg.n, "discounted": disc})
    _write(a.out, results_csv(rows))
    if a.plot:
        _svg_plot(rows, a.plot)
        print(a.plot)


# ---------------------------------------------------------------- theory

def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, (int, str, np.integer)) else fmt_float(v) for v in r])
    return buf.getvalue()


def cmd_theory_kappa(a):
    rows = ex.kappa_check(a.k, a.resolution)
    _write(a.out, _csv(("k", "kappa", "kappa_grid", "abs_diff"), [(k, v, g, abs(v - g)) for k, v, g in rows]))


def cmd_theory_ntk(a):
    res = ex.ntk_check(a.width, a.members, a.points, a.probes, a.steps, a.eta_scale, a.radius, a.seed)
    rows = [(i, m, g, abs(m - g)) for i, (m, g) in enumerate(zip(res.ensemble_mean, res.gp))]
    text = _csv(("probe", "ensemble_mean", "gp_mean", "abs_dev"), rows)
    text += _csv(("max_abs_dev", "interp_error", "eta", "steps"),
                 [(res.max_abs, res.interp_error, res.eta, res.steps)])
    _write(a.out, text)


def cmd_theory_tail(a):
    res = ex.tail_check(a.ensembles, a.members, a.deltas, a.pairs, a.seed)
    rows = [(d, e, b, int(e <= b)) for d, e, b in zip(res.deltas, res.empirical, res.bound)]
    text = _csv(("delta_over_sigma", "empirical", "bound", "covered"), rows)
    exact, upper = theory.delta_for_confidence(a.sigma, a.eps)
    text += _csv(("sigma", "eps", "delta_exact", "delta_upper", "hoorfar_dominates"),
                 [(a.sigma, a.eps, exact, upper, int(res.hoorfar_ok))])
    _write(a.out, text)


def cmd_theory_bounds(a):
    reports = ex.bound_reports(a.k, a.N, a.eps, a.gamma, a.LT, a.LR, a.Lpi, a.seed)
    _write(a.out, theory.bound_csv(reports))


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="distillgen", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("contexts", help="draw train/val/test context files")
    c.add_argument("--env", choices=("fourrooms", "reacher"), required=True, help="environment")
    c.add_argument("--seed", type=int, default=0, help="context seed")
    c.add_argument("--train", type=int, default=20,
                   help="number of training contexts (reacher subgroup layout: the order k of C_k)")
    c.add_argument("--val", type=int, default=8, help="number of validation contexts")
    c.add_argument("--test", type=int, default=20, help="number of test contexts")
    c.add_argument("--grid-size", type=int, default=13, help="grid side length (odd, >= 9)")
    c.add_argument("--layout", choices=("subgroup", "base"), default="subgroup",
                   help="reacher training layout: C_k shoulder angles in the default pose, "
                        "or C_n angles with random poses")
    c.add_argument("--random-poses", action="store_true", help="reacher val/test contexts start in random poses")
    c.add_argument("--out", default=".", help="output directory for train.json, val.json, test.json")
    c.set_defaults(func=cmd_contexts)

    c = sub.add_parser("collect", help="build a distillation dataset from a contexts file")
    c.add_argument("--contexts", required=True, help="contexts JSON (usually train.json)")
    c.add_argument("--env", choices=("fourrooms", "reacher"), help="optional check against the contexts file")
    c.add_argument("--kind", required=True, choices=REACHER_KINDS + GRID_KINDS, help="dataset kind")
    c.add_argument("--size", type=int, help="number of samples (grid: required; reacher: default keeps "
                                            "one trajectory per start)")
    c.add_argument("--K", type=int, default=50, help="Explore-Go: prefix length drawn from {0..K-1}")
    c.add_argument("--k", type=int, default=4, help="plus-ck / plus-random: subgroup order")
    c.add_argument("--targets", choices=("distill", "bc"), default="distill",
                   help="grid targets: teacher probabilities or actions actually taken")
    c.add_argument("--teacher", choices=("ik", "handcrafted", "planner"), help="teacher (reacher default ik)")
    c.add_argument("--temperature", type=float, default=0.5, help="grid planner softmax temperature")
    c.add_argument("--encoding", choices=tuple(fr.ENCODINGS), default="egocentric", help="grid network input")
    c.add_argument("--seed", type=int, default=0, help="collection seed")
    c.add_argument("--out", required=True, help="output JSON-lines dataset path")
    c.set_defaults(func=cmd_collect)

    c = sub.add_parser("distill", help="train N students on a dataset")
    c.add_argument("--data", required=True, help="dataset path written by collect")
    c.add_argument("--loss", required=True, choices=[_dash(k) for k in LOSS_KINDS], help="distillation loss")
    c.add_argument("--lam", type=float, default=0.0, help="entropy weight for kl-entropy")
    c.add_argument("--N", type=int, default=1, help="ensemble size")
    c.add_argument("--seeds", type=parse_seeds, help="member seeds, e.g. 1..10 (default 1..N)")
    c.add_argument("--preset", choices=("published", "desk"), default="published",
                   help="base hyperparameters: published defaults or the desk-scale schedule")
    c.add_argument("--epochs", type=int, help="override epochs")
    c.add_argument("--batch", type=int, help="override mini-batch size")
    c.add_argument("--lr", type=float, help="override learning rate")
    c.add_argument("--optimizer", choices=("adam", "sgd"), help="override optimizer")
    c.add_argument("--shuffle-seed", type=int, help="override shuffle stream seed")
    c.add_argument("--hidden", type=int, nargs="+", help="hidden layer widths")
    c.add_argument("--out", required=True, help="output directory for model and curve files")
    c.set_defaults(func=cmd_distill)

    c = sub.add_parser("eval", help="evaluate ensembles (or the grid planner) and write a results CSV")
    c.add_argument("--contexts", required=True, help="contexts JSON to evaluate on")
    c.add_argument("--models", nargs="+", help="one distill output directory per experiment seed")
    c.add_argument("--policy", choices=("ensemble", "planner"), default="ensemble", help="what to evaluate")
    c.add_argument("--temperature", type=float, default=0.0, help="planner temperature for --policy planner")
    c.add_argument("--N", type=int, nargs="+", help="nested ensemble sizes (prefixes by seed order)")
    c.add_argument("--split", default="test", help="split label written to the CSV")
    c.add_argument("--k", default="", help="subgroup label written to the CSV")
    c.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                   help="argmax actions on the grid (default) or sampling")
    c.add_argument("--episodes", type=int, default=1, help="episodes per context")
    c.add_argument("--gamma", type=float, default=0.99, help="discount for the discounted rows")
    c.add_argument("--encoding", choices=tuple(fr.ENCODINGS), default="egocentric", help="grid network input")
    c.add_argument("--max-steps", type=int, help="grid episode limit (default 200)")
    c.add_argument("--seed", type=int, default=0, help="seed for stochastic evaluation")
    c.add_argument("--plot", help="optional SVG plot of return against N")
    c.add_argument("--out", required=True, help="results CSV path")
    c.set_defaults(func=cmd_eval)

    t = sub.add_parser("theory", help="theory checks and bound reports")
    tsub = t.add_subparsers(dest="theory_command", required=True)
    c = tsub.add_parser("kappa", help="analytic kappa against brute-force grid search")
    c.add_argument("--k", type=int, nargs="+", default=list(range(1, 17)), help="subgroup orders")
    c.add_argument("--resolution", type=float, default=1e-4, help="grid step in radians")
    c.add_argument("--out", required=True, help="CSV path")
    c.set_defaults(func=cmd_theory_kappa)

    c = tsub.add_parser("ntk-check", help="trained wide ensemble against the closed-form NTK mean")
    c.add_argument("--width", type=int, default=2048, help="hidden width")
    c.add_argument("--members", type=int, default=100, help="ensemble size")
    c.add_argument("--points", type=int, default=3, help="training points")
    c.add_argument("--probes", type=int, default=5, help="probe points")
    c.add_argument("--steps", type=int, default=300, help="gradient-descent steps")
    c.add_argument("--eta-scale", type=float, default=0.2, help="step size over the largest NTK eigenvalue")
    c.add_argument("--radius", type=float, default=0.3, help="input radius")
    c.add_argument("--seed", type=int, default=0, help="seed")
    c.add_argument("--out", required=True, help="CSV path")
    c.set_defaults(func=cmd_theory_ntk)

    c = tsub.add_parser("tail-bound", help="Monte-Carlo tail-bound coverage and Lambert-W thresholds")
    c.add_argument("--sigma", type=float, default=1.0, help="sigma for the threshold row")
    c.add_argument("--eps", type=float, default=0.05, help="confidence level for the threshold row")
    c.add_argument("--ensembles", type=int, default=100_000, help="synthetic ensembles")
    c.add_argument("--members", type=int, default=10, help="members per synthetic ensemble")
    c.add_argument("--deltas", type=int, default=20, help="threshold grid size")
    c.add_argument("--pairs", type=int, default=1000, help="random (sigma, eps) pairs for the Hoorfar check")
    c.add_argument("--seed", type=int, default=0, help="seed")
    c.add_argument("--out", required=True, help="CSV path")
    c.set_defaults(func=cmd_theory_tail)

    c = tsub.add_parser("bounds", help="assemble both return-gap bounds for reacher ensembles")
    c.add_argument("--k", type=int, nargs="+", default=[2, 4, 8], help="training subgroup orders")
    c.add_argument("--N", type=int, default=10, help="ensemble size")
    c.add_argument("--eps", type=float, default=0.05, help="confidence level")
    c.add_argument("--gamma", type=float, default=0.3, help="discount factor")
    c.add_argument("--LT", type=float, default=1.0, help="Lipschitz constant of the transitions")
    c.add_argument("--LR", type=float, default=1.0, help="Lipschitz constant of the reward")
    c.add_argument("--Lpi", type=float, default=1.0, help="Lipschitz constant of the policy")
    c.add_argument("--seed", type=int, default=0, help="seed")
    c.add_argument("--out", required=True, help="CSV path")
    c.set_defaults(func=cmd_theory_bounds)
    return p


def _limit_threads():
    n = os.environ.get("IDL_THREADS")
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(int(n))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _limit_threads()
    try:
        args.func(args)
    except HypothesisError as exc:
        print(f"error: theorem hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CLIError, ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

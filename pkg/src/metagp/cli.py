"""Command-line entry point: reproducible runs over the library.

Subcommands: synth-data, train-module, build-meta, predict, evaluate,
baseline, benchmark. Every randomized step is driven by an explicit seed
from the resolved configuration, which each run echoes line by line, so
identical configs rerun bit-identically.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (DenseGP, ExpertCombination, dense_log_marginal,
                        expert_combination_predict)
from .data import (ColumnSchema, Dataset, SinGeneratorSpec, gen_synthetic_sin,
                   gen_two_moons, load_csv_dataset, partition_dataset,
                   save_csv_dataset)
from .exceptions import (AsymmetricInput, MetaGPError, NonFiniteEvaluation,
                         NotPositiveDefinite, SingularTriangular)
from .likelihoods import LikelihoodSpec
from .meta import meta_elbo, meta_predict, train_meta
from .metrics import compute_metrics, format_metrics_line
from .module_io import (load_any, load_module, save_meta, save_module,
                        save_mo_meta, validate_dictionary)
from .mogp import LMCConfig, mo_predict, train_mo_meta
from .predictive import GaussianYPredictive, Predictive
from .svgp import TrainConfig, module_predict, train_module

MODULE_SUFFIX = ".gpmod"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Flat key = value configuration files.

def read_config_file(path):
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def resolve_config(defaults, args):
    """defaults <- config file <- CLI overrides; unknown keys are fatal."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        for key, value in read_config_file(args.config).items():
            if key not in resolved:
                raise UsageError(f"unknown config key {key!r}")
            resolved[key] = value
    if getattr(args, "seed", None) is not None and "seed" in resolved:
        resolved["seed"] = args.seed
    if getattr(args, "quad", None) is not None and "n_quad" in resolved:
        resolved["n_quad"] = args.quad
    for key, value in sorted(resolved.items()):
        print(f"[config] {key} = {value}")
    return resolved


def _as_int(cfg, key):
    return int(cfg[key])


def _as_float(cfg, key):
    return float(cfg[key])


def _as_bool(cfg, key):
    v = str(cfg[key]).lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no"):
        return False
    raise UsageError(f"config key {key!r} expects a boolean, got {cfg[key]!r}")


def train_config_from(cfg):
    return TrainConfig(
        n_inducing=_as_int(cfg, "n_inducing"),
        max_iters=_as_int(cfg, "max_iters"),
        batch_size=_as_int(cfg, "batch_size"),
        learning_rate=_as_float(cfg, "learning_rate"),
        rel_tol=_as_float(cfg, "rel_tol"),
        seed=_as_int(cfg, "seed"),
        n_quad=_as_int(cfg, "n_quad"),
        optimize_inducing=_as_bool(cfg, "optimize_inducing"),
        optimize_hypers=_as_bool(cfg, "optimize_hypers"),
    )


TRAIN_KEYS = {
    "n_inducing": "10", "max_iters": "2000", "batch_size": "0",
    "learning_rate": "0.01", "rel_tol": "1e-6", "seed": "0", "n_quad": "20",
    "optimize_inducing": "true", "optimize_hypers": "true",
}


def expand_module_paths(paths):
    files = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files += sorted(p.glob(f"*{MODULE_SUFFIX}"))
        else:
            files.append(p)
    if not files:
        raise UsageError("no module files given (directories matched nothing)")
    return files


# ---------------------------------------------------------------------------
# Prediction files.

def write_predictions(path, pred):
    lines = []
    if isinstance(pred, GaussianYPredictive):
        lines.append("# family = gaussian_y")
        lines.append("mean\tvar\tvalid")
        for m, v, ok in zip(pred.mean, pred.var, pred.valid):
            lines.append(f"{m!r}\t{v!r}\t{int(ok)}")
    else:
        lik = pred.likelihood
        lines.append(f"# family = {lik.family}")
        if lik.family == "gaussian":
            lines.append(f"# log_noise_variance = {lik.log_noise_variance!r}")
        lines.append(f"# n_quad = {pred.n_quad}")
        nl = pred.latent_means.shape[0]
        lines.append("\t".join(
            f"latent_mean_{l + 1}\tlatent_var_{l + 1}" for l in range(nl)
        ))
        for i in range(pred.latent_means.shape[1]):
            cells = []
            for l in range(nl):
                cells += [repr(float(pred.latent_means[l, i])),
                          repr(float(pred.latent_vars[l, i]))]
            lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions(path):
    meta = {}
    rows = []
    header_seen = False
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if raw.startswith("#"):
            key, _, value = raw[1:].partition("=")
            meta[key.strip()] = value.strip()
        elif not header_seen:
            header_seen = True
        elif raw.strip():
            rows.append([float(t) for t in raw.split("\t")])
    arr = np.array(rows, dtype=np.float64)
    family = meta.get("family")
    if family == "gaussian_y":
        return GaussianYPredictive(arr[:, 0], arr[:, 1], arr[:, 2] > 0)
    lik = (LikelihoodSpec("gaussian", float(meta["log_noise_variance"]))
           if family == "gaussian" else LikelihoodSpec(family))
    nl = lik.n_latent
    means = np.stack([arr[:, 2 * l] for l in range(nl)])
    variances = np.stack([arr[:, 2 * l + 1] for l in range(nl)])
    return Predictive(means, variances, lik, int(meta.get("n_quad", "20")))


def schema_from(cfg):
    return ColumnSchema(
        inputs=tuple(t.strip() for t in cfg["inputs"].split(",") if t.strip()),
        target=cfg["target"],
        likelihood=cfg["likelihood"],
    )


SCHEMA_KEYS = {"inputs": "x1", "target": "y", "likelihood": "gaussian"}


# ---------------------------------------------------------------------------
# Subcommands.

def cmd_synth_data(args):
    defaults = {
        "kind": "sin", "n": "1000", "seed": "0", "noise_std": "0.5",
        "x_lo": "-10", "x_hi": "10",
        "amplitudes": "2,1,0.5", "frequencies": "0.5,2,5", "phases": "0,1,2",
    }
    cfg = resolve_config(defaults, args)
    n = _as_int(cfg, "n")
    if cfg["kind"] == "sin":
        spec = SinGeneratorSpec(
            amplitudes=tuple(float(t) for t in cfg["amplitudes"].split(",")),
            frequencies=tuple(float(t) for t in cfg["frequencies"].split(",")),
            phases=tuple(float(t) for t in cfg["phases"].split(",")),
            noise_std=_as_float(cfg, "noise_std"),
            x_range=(_as_float(cfg, "x_lo"), _as_float(cfg, "x_hi")),
            seed=_as_int(cfg, "seed"),
        )
        data = gen_synthetic_sin(spec, n)
        save_csv_dataset(data, args.out)
    elif cfg["kind"] == "two_moons":
        data = gen_two_moons(n, _as_float(cfg, "noise_std"), _as_int(cfg, "seed"))
        save_csv_dataset(data, args.out, target_name="label")
    else:
        raise UsageError(f"unknown generator kind {cfg['kind']!r}")
    print(f"wrote {data.n} rows to {args.out}")
    return 0


def cmd_train_module(args):
    cfg = resolve_config({**TRAIN_KEYS, **SCHEMA_KEYS}, args)
    data = load_csv_dataset(args.data, schema_from(cfg))
    module = train_module(data, train_config_from(cfg))
    save_module(module, args.out)
    print(f"module: M={module.n_inducing} elbo_star={module.elbo_star:.6f} -> {args.out}")
    return 0


def cmd_build_meta(args):
    defaults = {**TRAIN_KEYS, "n_inducing": "25", "q": "2"}
    cfg = resolve_config(defaults, args)
    # this command's input manifest is module files only: no dataset path
    # exists in its configuration, so no observation can be read
    paths = expand_module_paths(args.modules)
    modules = [load_module(p) for p in paths]
    config = train_config_from(cfg)
    if args.multi_output:
        meta = train_mo_meta(modules, LMCConfig(Q=_as_int(cfg, "q")), config)
        save_mo_meta(meta, args.out)
        print(f"mo-meta: Q={meta.lmc.Q} M={meta.Z_star.shape[0]} -> {args.out}")
    else:
        report = validate_dictionary(modules, for_single_output=True)
        print(report)
        meta = train_meta(modules, config)
        bound, _ = meta_elbo(meta, modules, want_grads=False)
        save_meta(meta, bound, args.out,
                  n_train=int(sum(m.n_train for m in modules)))
        print(f"meta: M={meta.n_inducing} bound={bound:.6f} -> {args.out}")
    return 0


def cmd_predict(args):
    cfg = resolve_config({**SCHEMA_KEYS, "n_quad": "20", "output": "0"}, args)
    kind, model = load_any(args.model)
    data = load_csv_dataset(args.data, schema_from(cfg))
    n_quad = _as_int(cfg, "n_quad")
    if kind == "module":
        pred = module_predict(model, data.X, n_quad)
    elif kind == "meta":
        pred = meta_predict(model, data.X, n_quad)
    else:
        pred = mo_predict(model, _as_int(cfg, "output"), data.X, n_quad)
    write_predictions(args.out, pred)
    print(f"wrote {data.n} predictions ({kind}) to {args.out}")
    return 0


def cmd_evaluate(args):
    cfg = resolve_config({**SCHEMA_KEYS, "name": "run"}, args)
    pred = read_predictions(args.pred)
    data = load_csv_dataset(args.data, schema_from(cfg))
    metrics = compute_metrics(pred, data.y)
    line = format_metrics_line(cfg["name"], metrics)
    print(line)
    out = Path(args.out)
    out.write_text(line + "\n", encoding="utf-8")
    report = {"name": cfg["name"], "n_points": int(data.n), **metrics}
    out.with_suffix(out.suffix + ".json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return 0


def cmd_baseline(args):
    cfg = resolve_config(SCHEMA_KEYS, args)
    paths = expand_module_paths(args.modules)
    modules = [load_module(p) for p in paths]
    data = load_csv_dataset(args.data, schema_from(cfg))
    combo = ExpertCombination(args.mode, modules)
    pred = expert_combination_predict(combo, data.X)
    n_bad = int(np.sum(~pred.valid))
    if n_bad:
        print(f"warning: {n_bad} points with non-positive aggregate precision")
    write_predictions(args.out, pred)
    print(f"wrote {data.n} {args.mode} predictions to {args.out}")
    return 0


BENCH_KEYS = {
    "n": "2000", "k": "10", "n_test": "500", "seed": "0",
    "noise_std": "0.5", "partition": "contiguous_by_input",
    "module_m": "5", "module_iters": "1500", "module_lr": "0.02",
    "meta_m": "25", "meta_iters": "1500", "meta_lr": "0.02",
    "joint_m": "25", "joint_iters": "1500", "joint_lr": "0.02",
    "joint_batch": "512", "dense_subsample": "1000", "n_quad": "20",
}


def cmd_benchmark(args):
    cfg = resolve_config(BENCH_KEYS, args)
    rows = run_benchmark(cfg)
    table = ["model\tnlpd\trmse\tmae"]
    table += [format_metrics_line(name, m) for name, m in rows]
    text = "\n".join(table) + "\n"
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def run_benchmark(cfg):
    """Desk-scale comparison: modules vs meta vs combination rules vs joint
    and dense references, all on one seeded synthetic regression split."""
    seed = _as_int(cfg, "seed")
    n, n_test = _as_int(cfg, "n"), _as_int(cfg, "n_test")
    spec = SinGeneratorSpec(noise_std=_as_float(cfg, "noise_std"), seed=seed)
    full = gen_synthetic_sin(spec, n + n_test)
    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(full.n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    train = Dataset(full.X[train_idx], full.y[train_idx], "gaussian", "train")
    test = Dataset(full.X[test_idx], full.y[test_idx], "gaussian", "test")

    shards = partition_dataset(train, _as_int(cfg, "k"), cfg["partition"], seed)
    module_cfg = TrainConfig(
        n_inducing=_as_int(cfg, "module_m"), max_iters=_as_int(cfg, "module_iters"),
        learning_rate=_as_float(cfg, "module_lr"), seed=seed,
        n_quad=_as_int(cfg, "n_quad"),
    )
    modules = []
    for i, shard in enumerate(shards):
        c = TrainConfig(**{**module_cfg.__dict__, "seed": seed + i})
        modules.append(train_module(shard, c))

    rows = []
    module_metrics = [compute_metrics(module_predict(m, test.X), test.y)
                      for m in modules]
    rows.append(("modules", {
        key: float(np.mean([mm[key] for mm in module_metrics]))
        for key in ("nlpd", "rmse", "mae")
    }))

    meta_cfg = TrainConfig(
        n_inducing=_as_int(cfg, "meta_m"), max_iters=_as_int(cfg, "meta_iters"),
        learning_rate=_as_float(cfg, "meta_lr"), seed=seed,
        n_quad=_as_int(cfg, "n_quad"),
    )
    meta = train_meta(modules, meta_cfg)
    rows.append(("meta", compute_metrics(meta_predict(meta, test.X), test.y)))

    for mode in ("poe", "gpoe", "bcm", "rbcm"):
        pred = expert_combination_predict(ExpertCombination(mode, modules), test.X)
        rows.append((mode, compute_metrics(pred, test.y)))

    joint_cfg = TrainConfig(
        n_inducing=_as_int(cfg, "joint_m"), max_iters=_as_int(cfg, "joint_iters"),
        learning_rate=_as_float(cfg, "joint_lr"), seed=seed,
        batch_size=_as_int(cfg, "joint_batch"), n_quad=_as_int(cfg, "n_quad"),
    )
    joint = train_module(train, joint_cfg)
    rows.append(("joint-svgp", compute_metrics(module_predict(joint, test.X), test.y)))

    # dense reference: exact GP under the joint model's hyperparameters,
    # conditioned on a seeded subsample when the training set exceeds the cap
    cap = _as_int(cfg, "dense_subsample")
    if train.n > cap:
        pick = np.random.default_rng(seed + 2).choice(train.n, size=cap, replace=False)
        dX, dy = train.X[pick], train.y[pick]
    else:
        dX, dy = train.X, train.y
    dense = DenseGP(dX, dy, joint.kernel, joint.likelihood.log_noise_variance)
    mean, var = dense_predict_y(dense, test.X)
    rows.append(("dense-gp", compute_metrics(GaussianYPredictive(mean, var), test.y)))
    return rows


def dense_predict_y(dense, X_star):
    from .baselines import dense_predict

    mean, var = dense_predict(dense, X_star)
    return mean, var + dense.noise_variance


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="metagp",
        description="train sparse GP modules and ensemble them without data",
    )
    parser.add_argument("--version", action="version", version=f"metagp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--quad", type=int, help="override quadrature order")
        p.add_argument("--out", required=out_required, help="output path")

    p = sub.add_parser("synth-data", help="generate a synthetic CSV dataset")
    common(p)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train-module", help="fit one GP module on a CSV shard")
    common(p)
    p.add_argument("--data", required=True, help="training CSV")
    p.set_defaults(fn=cmd_train_module)

    p = sub.add_parser("build-meta", help="fit a meta-GP from module files only")
    common(p)
    p.add_argument("--modules", nargs="+", required=True,
                   help=f"module files or directories of *{MODULE_SUFFIX}")
    p.add_argument("--multi-output", action="store_true",
                   help="multi-output (LMC) meta instead of single-output")
    p.set_defaults(fn=cmd_build_meta)

    p = sub.add_parser("predict", help="predict from a module or meta file")
    common(p)
    p.add_argument("--model", required=True, help="module or meta file")
    p.add_argument("--data", required=True, help="CSV with the input columns")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics of a predictions file vs targets")
    common(p)
    p.add_argument("--pred", required=True, help="predictions file")
    p.add_argument("--data", required=True, help="CSV with the target column")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("baseline", help="expert-combination predictions")
    common(p)
    p.add_argument("--modules", nargs="+", required=True)
    p.add_argument("--mode", required=True, choices=("poe", "gpoe", "bcm", "rbcm"))
    p.add_argument("--data", required=True, help="CSV with the input columns")
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("benchmark", help="desk-scale model comparison table")
    common(p, out_required=False)
    p.set_defaults(fn=cmd_benchmark)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (NotPositiveDefinite, SingularTriangular, NonFiniteEvaluation,
            AsymmetricInput) as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return 3
    except (MetaGPError, OSError) as exc:
        print(f"data error in {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

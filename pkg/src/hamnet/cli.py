"""``hamnet`` command-line interface.

    hamnet gen      --dataset NAME --samples S --seed U --out FILE.csv
    hamnet train    --spec FILE [--seed U] [--out DIR]
    hamnet eval     --model FILE --data FILE.csv|MNIST_DIR [--out pred.csv]
    hamnet diagnose --model FILE --mode gradnorms|spectrum|lemma1 --out FILE.csv [--data FILE.csv]
    hamnet grid     --spec FILE [--seed U] [--out FILE.csv]

``HAMNET_THREADS`` caps the BLAS thread pool. Exit status is 0 on success,
1 for usage, spec, format or I/O errors and 2 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys

import numpy as np

from .convnet import ConvHamiltonianNet
from .data import GENERATORS, augment_features, find_mnist, load_csv, load_mnist_idx, save_csv
from .diagnostics import (GradNormTrace, backward_sensitivity_norms, check_marginal_stability_spectrum,
                          default_layers, richardson_study)
from .experiment import SpecError, load_datasets, parse_spec, prepare_features, run_experiment
from .layers import HAMILTONIAN, forward_network
from .linalg import ConvergenceError
from .modelio import ModelDimensionError, load_model, save_model
from .training import TrainingDivergence, predict_proba

log = logging.getLogger("hamnet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


def _require(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s) {', '.join(missing)}")


def _load_spec(args):
    _require(args, "spec")
    spec = parse_spec(args.spec)
    if args.seed is not None:
        spec = spec.replace(seed=args.seed)
    return spec


def _out_path(args, name):
    """Output file ``name`` inside the ``--out`` directory (or the cwd)."""
    if os.path.isabs(name):
        return name
    base = args.out or "."
    os.makedirs(base, exist_ok=True)
    return os.path.join(base, name)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    _require(args, "out")
    if args.dataset not in GENERATORS:
        raise UsageError(f"gen: unknown dataset {args.dataset!r}; choose from {', '.join(GENERATORS)}")
    seed = 0 if args.seed is None else args.seed
    kw = {} if args.noise is None else {"noise_std": args.noise}
    d = GENERATORS[args.dataset](args.samples, seed=seed, **kw)
    if args.n is not None:
        d = augment_features(d, args.n)
    save_csv(d, args.out)
    print(f"wrote {len(d)} samples to {args.out}")


def cmd_train(args):
    spec = _load_spec(args)
    result = run_experiment(spec)
    model_path = _out_path(args, spec.model_out)
    save_model(model_path, result.params, result.head)
    result.history.to_csv(_out_path(args, spec.history_out))
    if spec.test_out and not spec.is_mnist:
        save_csv(result.test, _out_path(args, spec.test_out))
    print(f"train accuracy: {result.train_acc:.4f}")
    print(f"test accuracy: {result.test_acc:.4f}")
    print(f"model written to {model_path}")


def _load_eval_data(path, params, head):
    if os.path.isdir(path):
        files = find_mnist(path, "test")
        if files is None:
            raise UsageError(f"{path}: no MNIST test IDX files found")
        d = load_mnist_idx(*files)
    else:
        d = load_csv(path, M=None)
    if len(d) and d.y.max() >= head.M:
        raise ModelDimensionError(
            f"dimension mismatch: data has label {int(d.y.max())} but the model has {head.M} classes")
    return d, prepare_features(d.X, params)


def cmd_eval(args):
    _require(args, "model", "data")
    params, head = load_model(args.model)
    d, X = _load_eval_data(args.data, params, head)
    probs = predict_proba(params, head, X)
    pred = np.argmax(probs, axis=1)
    acc = float(np.mean(pred == d.y)) if len(d) else float("nan")
    out = args.out or "pred.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label", "pred"] + [f"p{k}" for k in range(probs.shape[1])])
        for i, (lab, p, row) in enumerate(zip(d.y, pred, probs)):
            w.writerow([i, int(lab), int(p)] + [repr(float(v)) for v in row])
    print(f"accuracy: {acc:.4f}")


def _probe_states(args, params, count=None):
    if args.data:
        X = prepare_features(load_csv(args.data).X, params)
    else:
        from .data import gen_double_moons
        seed = 0 if args.seed is None else args.seed
        X = prepare_features(gen_double_moons(500, seed=seed + 1000).X, params)
    return X if count is None else X[:count]


def cmd_diagnose(args):
    _require(args, "model", "mode", "out")
    params, head = load_model(args.model)
    if isinstance(params, ConvHamiltonianNet):
        raise UsageError("diagnose: convolutional models are not supported")
    if args.mode == "gradnorms":
        if params.N == 0:
            raise UsageError("diagnose: gradnorms needs at least one layer")
        layers = sorted(set(default_layers(params.N)) | {params.N - 1})
        trace = GradNormTrace()
        for j, v in backward_sensitivity_norms(params, _probe_states(args, params), layers):
            trace.add(0, j, v)
        trace.to_csv(args.out)
        return
    if params.variant not in HAMILTONIAN:
        raise UsageError(f"diagnose: mode {args.mode} needs an H1 or H2 model, got {params.variant}")
    if params.N == 0:
        raise UsageError(f"diagnose: mode {args.mode} needs at least one layer")
    if args.mode == "spectrum":
        X = _probe_states(args, params, count=8)
        _, cache = forward_network(X, params)
        failed = 0
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "max_re_lambda", "skew_residual"])
            for j in range(params.N):
                for k in range(len(X)):
                    r = check_marginal_stability_spectrum(params.K[j], params.b[j], cache.ys[j][k], params.J)
                    failed += not r.passed
                    w.writerow([f"layer{j}_sample{k}", repr(r.max_re_lambda), repr(r.skew_residual)])
        print(f"spectrum: {params.N * len(X) - failed}/{params.N * len(X)} cases pass")
        return
    # Richardson study: the first layer's weights define a time-invariant system
    y0 = _probe_states(args, params, count=1)[0]
    T = params.N * params.h
    rows = richardson_study(params.K[0], params.b[0], params.J, y0, T)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["steps", "h", "error", "ratio"])
        for N, h, err, ratio in rows:
            w.writerow([N, repr(h), repr(err), repr(ratio)])


def cmd_grid(args):
    spec = _load_spec(args)
    out = args.out or spec.grid_out
    archs = spec.grid_archs or [spec.arch]
    data = load_datasets(spec) if spec.grid_layers else None
    failures = 0
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arch", "layers", "test_acc", "params_per_layer"])
        fh.flush()
        for arch in archs:
            for N in spec.grid_layers:
                try:
                    r = run_experiment(spec, arch=arch, N=N, data=data)
                    acc, ppl = r.test_acc, r.params.params_per_layer()
                except (FloatingPointError, ConvergenceError) as exc:
                    log.error("cell %s N=%d failed: %s", arch, N, exc)
                    failures += 1
                    acc, ppl = math.nan, ""
                w.writerow([arch, N, repr(float(acc)), ppl])
                fh.flush()
                print(f"{arch} N={N}: test accuracy {acc:.4f}")
    if failures:
        raise _GridFailure(f"{failures} grid cell(s) failed; partial results in {out}")


class _GridFailure(FloatingPointError):
    pass


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "diagnose": cmd_diagnose,
            "grid": cmd_grid}


def build_parser():
    p = argparse.ArgumentParser(prog="hamnet", description="Hamiltonian deep neural networks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--spec")
        s.add_argument("--model")
        s.add_argument("--data")
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--mode", choices=("gradnorms", "spectrum", "lemma1") if name == "diagnose" else None)
        if name == "gen":
            s.add_argument("--dataset", default="double_moons")
            s.add_argument("--samples", type=int, default=5000)
            s.add_argument("--noise", type=float)
            s.add_argument("--n", type=int, help="zero-pad features to this dimension")
    return p


def _thread_limit():
    raw = os.environ.get("HAMNET_THREADS")
    if raw is None or raw == "":
        return None
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"HAMNET_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise UsageError(f"HAMNET_THREADS must be a positive integer, got {raw!r}")
    return value


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=_thread_limit()):
            COMMANDS[args.command](args)
    except (FloatingPointError, ConvergenceError) as exc:
        kind = "training diverged" if isinstance(exc, TrainingDivergence) else "numerical failure"
        print(f"hamnet: {kind}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, SpecError, ValueError, OSError) as exc:
        print(f"hamnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Experiment files and the train/evaluate pipeline behind the CLI.

An experiment file is plain text, one ``key = value`` per line; ``#`` starts
a comment. Example::

    dataset = swiss_roll
    arch = H2
    layers = 64
    horizon = 0.2        # h = horizon / layers unless h is given
    epochs = 50

Unknown keys, malformed values and unresolvable input paths are reported as
:class:`SpecError` with the offending line number.
"""
from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .convnet import CONV_VARIANTS, ConvHamiltonianNet
from .data import GENERATORS, Dataset, find_mnist, load_csv, load_mnist_idx
from .layers import VARIANTS, NetworkParams, OutputHead
from .training import TrainConfig, evaluate, train_coordinate_descent

log = logging.getLogger(__name__)


class SpecError(ValueError):
    def __init__(self, message, line=None, path=None):
        where = f"{path or '<spec>'}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.line = line


def _bool(s):
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_float(s):
    return None if s.lower() in ("", "none", "auto") else float(s)


def _opt_int(s):
    return None if s.lower() in ("", "none", "all") else int(s)


def _str_list(s):
    return [t.strip() for t in s.split(",") if t.strip()]


def _int_list(s):
    return [int(t) for t in _str_list(s)]


@dataclass
class ExperimentSpec:
    dataset: str = "double_moons"
    arch: str = "H1"
    layers: int = 4
    h: float | None = None
    horizon: float = 0.2
    n: int = 4
    time_invariant: bool = False
    train_size: int = 5000
    test_size: int = 5000
    noise: float | None = None
    test_data: str | None = None
    mnist_dir: str = "data/mnist"
    train_subset: int | None = None
    model_out: str = "model.hdnn"
    history_out: str = "history.csv"
    test_out: str | None = None
    grid_archs: list = field(default_factory=list)
    grid_layers: list = field(default_factory=list)
    grid_out: str = "grid.csv"
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def step(self) -> float:
        return self.step_for(self.layers)

    def step_for(self, N) -> float:
        if self.h is not None:
            return self.h
        return self.horizon / N if N else self.horizon

    @property
    def is_mnist(self) -> bool:
        return self.dataset == "mnist"

    def replace(self, **kw) -> "ExperimentSpec":
        cfg = {k: kw.pop(k) for k in list(kw) if k in _CONFIG_KEYS}
        out = dataclasses.replace(self, **kw)
        if cfg:
            out.config = dataclasses.replace(self.config, **cfg)
        return out


_CONFIG_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_PARSERS = {
    "dataset": str, "arch": str.upper, "layers": int, "h": _opt_float, "horizon": float,
    "n": int, "time_invariant": _bool, "train_size": int, "test_size": int,
    "noise": _opt_float, "test_data": str, "mnist_dir": str, "train_subset": _opt_int,
    "model_out": str, "history_out": str, "test_out": str,
    "grid_archs": lambda s: [a.upper() for a in _str_list(s)], "grid_layers": _int_list,
    "grid_out": str,
}
_ALIASES = {"N": "layers", "architecture": "arch", "lr_decay": "lr_decay_gamma"}


def parse_spec_text(text: str, path=None, base_dir=None) -> ExperimentSpec:
    values, cfg, lines = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"expected 'key = value', got {line!r}", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key in lines:
            raise SpecError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno, path)
        lines[key] = lineno
        try:
            if key in _PARSERS:
                values[key] = _PARSERS[key](value)
            elif key in _CONFIG_KEYS:
                cfg[key] = int(value) if _CONFIG_KEYS[key] in (int, "int") else float(value)
            else:
                raise SpecError(f"unknown key {key!r}", lineno, path)
        except SpecError:
            raise
        except ValueError as exc:
            raise SpecError(f"bad value for {key!r}: {exc}", lineno, path) from None
    try:
        config = TrainConfig(**cfg)
    except ValueError as exc:
        raise SpecError(str(exc), None, path) from None
    spec = ExperimentSpec(config=config, **values)
    _validate(spec, lines, path, base_dir)
    return spec


def parse_spec(path) -> ExperimentSpec:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise SpecError(f"cannot read experiment file: {exc.strerror}", None, path) from None
    return parse_spec_text(text, str(path), os.path.dirname(os.path.abspath(path)))


def _resolve(p, base_dir):
    if base_dir is None or os.path.isabs(p) or os.path.exists(p):
        return p
    cand = os.path.join(base_dir, p)
    return cand if os.path.exists(cand) else p


def _validate(spec, lines, path, base_dir):
    def fail(key, msg):
        raise SpecError(msg, lines.get(key), path)

    if spec.layers < 0:
        fail("layers", f"layers must be >= 0, got {spec.layers}")
    if spec.h is not None and not spec.h > 0:
        fail("h", f"h must be positive, got {spec.h}")
    if not spec.horizon > 0:
        fail("horizon", f"horizon must be positive, got {spec.horizon}")
    for key in ("train_size", "test_size"):
        if getattr(spec, key) <= 0:
            fail(key, f"{key} must be positive")
    allowed = CONV_VARIANTS if spec.is_mnist else VARIANTS
    if spec.is_mnist and "arch" not in lines:
        spec.arch = "H2"
    if spec.is_mnist and spec.time_invariant:
        fail("time_invariant", "time-invariant convolutional networks are not supported")
    for key, archs in (("arch", [spec.arch]), ("grid_archs", spec.grid_archs)):
        for a in archs:
            if a not in allowed:
                fail(key, f"architecture {a!r} not available for dataset {spec.dataset!r}; "
                          f"choose from {', '.join(allowed)}")
    if any(N < 0 for N in spec.grid_layers):
        fail("grid_layers", "layer counts must be >= 0")
    if spec.dataset not in GENERATORS and not spec.is_mnist:
        spec.dataset = _resolve(spec.dataset, base_dir)
        if not os.path.isfile(spec.dataset):
            fail("dataset", f"dataset {spec.dataset!r} is neither a generator "
                            f"({', '.join(GENERATORS)}, mnist) nor an existing CSV file")
    if spec.test_data is not None:
        spec.test_data = _resolve(spec.test_data, base_dir)
        if not os.path.isfile(spec.test_data):
            fail("test_data", f"test data file {spec.test_data!r} not found")
    if spec.is_mnist:
        spec.mnist_dir = _resolve(spec.mnist_dir, base_dir)
        if find_mnist(spec.mnist_dir, "train") is None or find_mnist(spec.mnist_dir, "test") is None:
            fail("mnist_dir", f"MNIST IDX files not found in {spec.mnist_dir!r}")
    elif spec.n < 2:
        fail("n", f"state dimension must be >= 2, got {spec.n}")


# ---------------------------------------------------------------------------
# pipeline


def load_datasets(spec: ExperimentSpec) -> tuple[Dataset, Dataset]:
    """Raw (un-augmented) train and test sets for ``spec``."""
    seed = spec.config.seed
    if spec.is_mnist:
        train = load_mnist_idx(*find_mnist(spec.mnist_dir, "train"))
        test = load_mnist_idx(*find_mnist(spec.mnist_dir, "test"))
        if spec.train_subset is not None:
            train = train.subset(slice(0, spec.train_subset))
        return train, test
    if spec.dataset in GENERATORS:
        gen = GENERATORS[spec.dataset]
        kw = {} if spec.noise is None else {"noise_std": spec.noise}
        return (gen(spec.train_size, seed=seed, **kw),
                gen(spec.test_size, seed=seed + 1000, **kw))
    train = load_csv(spec.dataset)
    test = load_csv(spec.test_data) if spec.test_data else train
    M = max(train.M, test.M)
    return Dataset(train.X, train.y, M, train.name), Dataset(test.X, test.y, M, test.name)


def prepare_features(X, params):
    """Zero-pad plain feature vectors up to the network state dimension."""
    X = np.asarray(X, dtype=np.float64)
    if isinstance(params, ConvHamiltonianNet) or X.shape[1] == params.n:
        return X
    if X.shape[1] > params.n:
        from .modelio import ModelDimensionError
        raise ModelDimensionError(
            f"dimension mismatch: data has {X.shape[1]} features, model state has {params.n}")
    out = np.zeros((len(X), params.n))
    out[:, :X.shape[1]] = X
    return out


def build_model(spec: ExperimentSpec, arch: str, N: int, n_features: int, M: int):
    seed = spec.config.seed
    h = spec.step_for(N)
    if spec.is_mnist:
        params = ConvHamiltonianNet.initialize(N, h, seed, variant=arch)
        return params, OutputHead.zeros(params.n, M)
    if n_features > spec.n:
        raise SpecError(f"n = {spec.n} is smaller than the {n_features} data features")
    if arch == "FCNN" and spec.h is None:
        h = 1.0
    params = NetworkParams.initialize(arch, spec.n, N, h, seed, tied=spec.time_invariant)
    return params, OutputHead.zeros(spec.n, M)


@dataclass
class RunResult:
    params: object
    head: OutputHead
    history: object
    train_acc: float
    test_acc: float
    test: Dataset


def run_experiment(spec: ExperimentSpec, arch=None, N=None, data=None, callback=None) -> RunResult:
    arch = arch or spec.arch
    N = spec.layers if N is None else N
    train, test = data or load_datasets(spec)
    params, head = build_model(spec, arch, N, train.n, train.M)
    Xtr = prepare_features(train.X, params)
    params, head, history = train_coordinate_descent(params, head, Xtr, train.y, spec.config, callback)
    train_acc = evaluate(params, head, Xtr, train.y)
    test_acc = evaluate(params, head, prepare_features(test.X, params), test.y)
    log.info("%s N=%d: train %.4f test %.4f", arch, N, train_acc, test_acc)
    return RunResult(params, head, history, train_acc, test_acc, test)

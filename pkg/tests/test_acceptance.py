"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary. Run
alone with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
MNIST files are looked up in ``$HAMNET_MNIST_DIR`` (default ``data/mnist``).
"""
import functools
import os
import sys
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from conftest import ACCEPTANCE_LINES
from hamnet.backprop import finite_difference_check
from hamnet.data import encode_idx, find_mnist, parse_idx
from hamnet.diagnostics import (check_marginal_stability_spectrum, exp_norm_envelope,
                                fcnn_vanishing_demo, gradient_norm_study, richardson_study,
                                similarity_bound)
from hamnet.experiment import parse_spec_text, run_experiment
from hamnet.layers import VARIANTS, NetworkParams, OutputHead, make_interconnection
from hamnet.modelio import dump_model, parse_model

pytestmark = pytest.mark.slow

MNIST_DIR = os.environ.get("HAMNET_MNIST_DIR", os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))


def record(number, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@functools.lru_cache(maxsize=None)
def table1_cell(dataset, arch, N, seed=0):
    """Test accuracy and wall time for one 2-D cell with the default training settings."""
    spec = parse_spec_text(f"dataset = {dataset}\narch = {arch}\nlayers = {N}\nseed = {seed}\n")
    start = time.perf_counter()
    acc = run_experiment(spec).test_acc
    return acc, time.perf_counter() - start


def test_criterion_1_double_moons_h1():
    cells = {N: table1_cell("double_moons", "H1", N) for N in (1, 2, 4)}
    ok = all(acc >= 0.99 for acc, _ in cells.values())
    detail = ", ".join(f"N={N}: {acc:.4f} ({t:.0f}s)" for N, (acc, t) in cells.items())
    record(1, ok, f"H1 double moons test accuracy >= 0.99 -> {detail}")


def test_criterion_2_swiss_roll_h1_h2():
    cells = {(a, N): table1_cell("swiss_roll", a, N) for a in ("H1", "H2") for N in (64, 4)}
    ok = all(acc >= (0.99 if N == 64 else 0.90) for (_, N), (acc, _) in cells.items())
    detail = ", ".join(f"{a} N={N}: {acc:.4f} ({t:.0f}s)" for (a, N), (acc, t) in cells.items())
    record(2, ok, f"swiss roll >= 0.99 at N=64, >= 0.90 at N=4 -> {detail}")


def test_criterion_3_expressivity_gap():
    mean = {a: np.mean([table1_cell("swiss_roll", a, 4, s)[0] for s in range(3)])
            for a in ("H1", "H2", "MS1", "MS2")}
    gap = min(mean["H1"], mean["H2"]) - max(mean["MS1"], mean["MS2"])
    detail = ", ".join(f"{a} {v:.4f}" for a, v in mean.items())
    record(3, gap >= 0.05, f"N=4 swiss roll, 3-seed means {detail}; gap {100 * gap:.1f} points (need >= 5)")


@pytest.mark.parametrize("tied, upper", [(False, 50.0), (True, 100.0)])
def test_criterion_4_gradient_norm_bands(tied, upper):
    trace, acc, _, _ = gradient_norm_study("H1", N=64, tied=tied)
    norms = np.asarray(trace.norm)
    iters = len(set(trace.iteration))
    ok = trace.layers() == list(range(0, 61, 10)) and iters == 960 and 0.5 <= norms.min() and norms.max() <= upper
    kind = "time-invariant" if tied else "time-varying"
    record(4, ok, f"{kind} 64-layer H1: norms in [{norms.min():.3f}, {norms.max():.3f}] over {iters} "
                  f"iterations (band [0.5, {upper:g}]), test accuracy {acc:.4f}")


def test_criterion_5_fcnn_vanishing_gradients():
    trace, acc = fcnn_vanishing_demo()
    series = trace.series(0)
    below = np.flatnonzero(series < 1e-3)
    first = int(below[0]) if len(below) else None
    ok = acc <= 0.60 and first is not None and first < 400
    record(5, ok, f"32-layer FCNN: test accuracy {acc:.4f} (need <= 0.60), "
                  f"j=0 norm first < 1e-3 at iteration {first} (need < 400)")


def test_criterion_6_mnist_reduced_scale():
    if find_mnist(MNIST_DIR, "train") is None or find_mnist(MNIST_DIR, "test") is None:
        record(6, False, f"MNIST IDX files not found in {os.path.abspath(MNIST_DIR)}; "
                         "set HAMNET_MNIST_DIR to a directory holding the four standard files")
    spec = parse_spec_text(
        f"dataset = mnist\nmnist_dir = {MNIST_DIR}\narch = H2\nlayers = 2\nh = 0.05\n"
        "train_subset = 10000\nepochs = 10\nbatch_size = 100\nlr = 0.04\nlr_decay_gamma = 0.8\n"
        "alpha = 1e-3\nalpha_c = 2e-4\ninner_head_iters = 0\n")
    start = time.perf_counter()
    r = run_experiment(spec)
    minutes = (time.perf_counter() - start) / 60
    record(6, r.test_acc >= 0.95 and len(r.test) == 10000,
           f"H2 N=2 MNIST (10k subset, 10 epochs): test accuracy {r.test_acc:.4f} "
           f"on {len(r.test)} images (need >= 0.95), {minutes:.1f} min")


def test_criterion_7_stability_suite():
    notes, ok = [], True
    for variant in ("H1", "H2"):
        worst_skew = worst_re = 0.0
        for seed in range(100):
            r = np.random.default_rng(seed)
            n = 2 * int(r.integers(1, 5))
            K, b, y = r.normal(size=(n, n)), r.normal(size=n), r.normal(size=n)
            rep = check_marginal_stability_spectrum(K, b, y, make_interconnection(variant, n))
            worst_skew, worst_re = max(worst_skew, rep.skew_residual), max(worst_re, rep.max_re_lambda)
        ok &= worst_skew < 1e-9 and worst_re < 1e-8
        notes.append(f"{variant} spectra: skew {worst_skew:.1e}, max|Re| {worst_re:.1e}")
    r = np.random.default_rng(100)
    K, b, y0 = 0.5 * r.normal(size=(4, 4)), r.normal(size=4), r.normal(size=4)
    for variant in ("H1", "H2"):
        rows = richardson_study(K, b, make_interconnection(variant, 4), y0, T=1.0)
        ratios = [row[3] for row in rows[1:]]
        ok &= all(1.8 < q < 2.2 for q in ratios)
        notes.append(f"{variant} Richardson ratios " + "/".join(f"{q:.3f}" for q in ratios))
    t_grid = np.linspace(0.0, 100.0, 101)
    bounded = True
    for seed in range(5):
        r = np.random.default_rng(200 + seed)
        K, b, y = r.normal(size=(4, 4)), r.normal(size=4), r.normal(size=4)
        D = 1.0 - np.tanh(K @ y + b) ** 2
        A = (K.T * D) @ K @ make_interconnection("H1", 4).T
        c = similarity_bound(K, b, y)
        env = exp_norm_envelope(A, t_grid)
        bounded &= all(s1 <= c * (1 + 1e-6) and s0 >= (1 - 1e-6) / c for s1, s0 in env)
    unstable = exp_norm_envelope(np.array([[0.05, 1.0], [-1.0, 0.05]]), t_grid)
    detected = unstable[-1][0] > 100.0
    ok &= bounded and detected
    notes.append(f"envelope bounded {bounded}, planted instability detected {detected}")
    record(7, ok, "; ".join(notes))


def test_criterion_8_gradient_correctness():
    worst, checked, failed = 0.0, 0, 0
    for k, variant in enumerate(VARIANTS):
        r = np.random.default_rng(k)
        p = NetworkParams.initialize(variant, 4, 3, 0.3 if variant != "FCNN" else 1.0, r)
        for b in p.b:
            b[:] = r.normal(0, 0.5, 4)
        head = OutputHead(r.normal(size=(1, 4)), r.normal(size=1), 2)
        rep = finite_difference_check(p, head, r.normal(size=(8, 4)), r.integers(0, 2, 8),
                                      alpha=5e-3, alpha_c=1e-4, rtol=1e-5)
        worst, checked, failed = max(worst, rep.max_rel_err), checked + rep.checked, failed + rep.failed
    record(8, failed == 0 and worst < 1e-5,
           f"{checked - failed}/{checked} coordinates agree, worst relative error {worst:.1e}")


def test_criterion_9_infrastructure():
    images = bytes.fromhex("00000803 00000002 00000002 00000002".replace(" ", "")) + bytes(range(8))
    idx_ok = encode_idx(parse_idx(images).array()) == images
    p = NetworkParams.initialize("H2", 4, 5, 0.04, 3)
    head = OutputHead(np.random.default_rng(1).normal(size=(1, 4)), np.array([0.3]), 2)
    raw = dump_model(p, head)
    model_ok = dump_model(*parse_model(raw)) == raw
    spec = parse_spec_text("layers = 4\nepochs = 2\ntrain_size = 1000\ntest_size = 200\nseed = 11\n")
    with threadpool_limits(limits=1):
        a, b = run_experiment(spec), run_experiment(spec)
    repro_ok = dump_model(a.params, a.head) == dump_model(b.params, b.head) and a.history == b.history
    record(9, idx_ok and model_ok and repro_ok,
           f"IDX round trip {idx_ok}, model round trip {model_ok}, seeded rerun identical {repro_ok}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

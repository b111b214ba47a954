"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL (...)`` line; the lines are
collected again in the pytest terminal summary. The training criteria take
minutes and MNIST needs the dataset under ``SCORNN_DATA``.
"""

import math
import os

import numpy as np
import pytest

from scornn import cayley, config, drift, gradcheck, tasks, train
from scornn.cayley import ScalingMatrix, SkewParams

slow = pytest.mark.slow


def test_1_gradcheck(acceptance):
    worst = {}
    for seed in range(5):
        for group, err in gradcheck.gradcheck(n=6, T=3, seed=seed).items():
            worst[group] = max(worst.get(group, 0.0), err)
    ok = max(worst.values()) < 1e-5
    acceptance(1, ok, "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + " < 1e-5")
    assert ok


@pytest.fixture(scope="module")
def drift_double():
    return drift.orthodrift(128, 10_000, "double", seed=0)


@pytest.fixture(scope="module")
def drift_single():
    return drift.orthodrift(128, 10_000, "single", seed=0)


@slow
def test_2_orthogonality_maintained(acceptance, drift_double):
    n = 128
    worst = float(np.max(drift_double.cayley))
    ok = len(drift_double.cayley) == 10_000 and worst <= 1e-12 * n
    acceptance(2, ok, f"max Cayley score {worst:.2e} over 10^4 steps, bound {1e-12 * n:.2e}")
    assert ok


@slow
def test_3_drift_contrast(acceptance, drift_single):
    eps = float(np.finfo(np.float32).eps)
    start = drift_single.window_mean("multiplicative", 0, 10)
    end = drift_single.window_mean("multiplicative", -100, None)
    growth = end / start
    # flat: the Cayley score never leaves a band of a few n*eps and does not trend upward
    cay = drift_single.cayley
    flat_bound = 128 * eps
    trend = drift_single.window_mean("cayley", -100, None) / drift_single.window_mean("cayley", 0, 10)
    ok = growth >= 10 and float(np.max(cay)) <= flat_bound and trend < 2
    acceptance(3, ok, f"multiplicative end/start {growth:.1f} (>= 10); Cayley max {np.max(cay):.2e} "
                      f"(<= {flat_bound:.1e}), end/start {trend:.2f}")
    assert ok


@slow
def test_4_copying(acceptance, tmp_path):
    baseline = tasks.copying_baseline(200)
    sco = train.run(config.build("copying", overrides={"out_dir": str(tmp_path / "sco")}))
    lstm = train.run(config.build("copying-lstm", overrides={"out_dir": str(tmp_path / "lstm")}))
    sco_final = sco.rows[-1]["eval_loss"]
    lstm_losses = lstm.column("eval_loss")
    lstm_final = lstm_losses[-1]
    sco_ok = sco_final < 0.1 * baseline and sco.rows[-1]["iteration"] <= 2000
    # the LSTM ends inside the band and never beats its lower edge
    lstm_ok = abs(lstm_final - baseline) <= 0.2 * baseline and min(lstm_losses) >= 0.8 * baseline
    acceptance(4, sco_ok and lstm_ok,
               f"baseline {baseline:.4f}; scoRNN {sco_final:.4f} (< {0.1 * baseline:.4f}); "
               f"LSTM final {lstm_final:.4f}, min {min(lstm_losses):.4f} (within 20%)")
    assert sco_ok and lstm_ok


@slow
def test_5_adding(acceptance, tmp_path):
    res = train.run(config.build("adding", overrides={"out_dir": str(tmp_path / "add")}))
    last = res.rows[-1]
    ok = last["eval_loss"] < 0.05 and last["epoch"] <= 10
    acceptance(5, ok, f"test MSE {last['eval_loss']:.4f} after epoch {last['epoch']} (< 0.05 within 10)")
    assert ok


def test_6_adding_baseline(acceptance):
    batch = tasks.gen_adding(200, 100_000, np.random.default_rng(2024))
    mse = float(np.mean((1.0 - batch.targets) ** 2))
    ok = abs(mse - 0.167) <= 0.01
    acceptance(6, ok, f"constant-1 MSE {mse:.4f} (0.167 +- 0.01)")
    assert ok


def test_7_hidden_gradient_flatness(acceptance):
    batch = tasks.gen_adding(500, 50, np.random.default_rng(7))
    ratios = {}
    for preset in ("adding", "adding-lstm"):
        cfg = config.build(preset, overrides={"T": 500})
        model = train.build_model(cfg, np.random.default_rng([cfg.seed, 1]))
        _, grads = train.loss_and_grads(model, batch, capture_hidden_norms=True)
        norms = np.asarray(grads.hidden_norms)
        ratios[cfg.model] = float(norms.max() / norms.min())
    ok = ratios["scornn"] <= 10 and ratios["scornn"] < ratios["lstm"]
    acceptance(7, ok, f"max/min ratio scoRNN {ratios['scornn']:.3g} (<= 10), LSTM {ratios['lstm']:.3g}")
    assert ok


@slow
def test_8_mnist(acceptance, tmp_path):
    root = os.environ.get("SCORNN_DATA", "")
    if not root or not os.path.isdir(root):
        acceptance(8, False, "MNIST files unavailable: set SCORNN_DATA to a directory with the IDX files")
        pytest.fail("criterion 8 needs the MNIST IDX files under SCORNN_DATA")
    cfg = config.build("mnist", overrides={"out_dir": str(tmp_path / "mnist"), "data_dir": root})
    assert cfg.resolved_rho() == round(cfg.n / 10)
    res = train.run(cfg)
    acc = res.rows[-1]["eval_metric"]
    ok = acc > 0.90 and res.rows[-1]["epoch"] == 5
    acceptance(8, ok, f"test accuracy {acc:.4f} after 5 epochs (> 0.90)")
    assert ok


def test_9_round_trip_and_representation(acceptance):
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 17))
        a = SkewParams(n, rng.uniform(-1, 1, size=n * (n - 1) // 2))
        d = ScalingMatrix.from_rho(n, int(rng.integers(0, n + 1)))
        back = cayley.inverse_scaled_cayley(cayley.scaled_cayley(a, d), d)
        worst = max(worst, float(np.max(np.abs(back.v - a.v))))
    alpha = 0.99999
    s = math.sqrt(1 - alpha**2)
    w = np.array([[-alpha, -s], [s, -alpha]])
    unscaled = cayley.materialize(cayley.inverse_scaled_cayley(w, ScalingMatrix.from_rho(2, 0)))[0, 1]
    bounded = float(np.max(np.abs(cayley.inverse_scaled_cayley(w, ScalingMatrix.from_rho(2, 2)).v)))
    ok = worst <= 1e-10 and abs(unscaled - 447.212) <= 5e-4 and bounded <= 1.0
    acceptance(9, ok, f"round-trip max err {worst:.1e} (<= 1e-10); unscaled entry {unscaled:.3f}; "
                      f"entry under D=-I {bounded:.2e}")
    assert ok

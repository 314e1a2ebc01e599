"""End-to-end acceptance checks, one test per criterion.

Each check prints a PASS/FAIL line and the terminal summary repeats them.
The slow ones (full dataset, model training) share session fixtures.
"""

import math
import random
import time

import numpy as np
import pytest

from gradcheck import TINY, max_relative_error
from qkd_qlstm import qsim
from qkd_qlstm.channel import NoiseParams
from qkd_qlstm.cli import run_cli
from qkd_qlstm.dataset import TABLE_COUNTS, DatasetConfig, generate_dataset, read_csv
from qkd_qlstm.metrics import binary_entropy
from qkd_qlstm.nn import HybridModel, ModelConfig
from qkd_qlstm.preprocess import prepare
from qkd_qlstm.scenarios import InterceptResendParams, ScenarioKind, SimConfig, run_iteration
from qkd_qlstm.train import (
    LR_DEFAULT,
    LR_HIGH,
    OptimState,
    SchedulerState,
    TrainConfig,
    adamw_step,
    confusion_matrix,
    evaluate,
    lr_at,
    report_from_confusion,
    train,
)
from test_qsim import dense_vqc
from test_scenarios import intercept_resend_qber_oracle


@pytest.fixture(scope="session")
def cli_dataset(tmp_path_factory):
    """``generate --seed 42`` through the CLI, timed."""
    out = tmp_path_factory.mktemp("accept") / "qkd.csv"
    t0 = time.perf_counter()
    code = run_cli(["generate", "--seed", "42", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == 0
    return out, elapsed


@pytest.fixture(scope="session")
def prepared(cli_dataset):
    return prepare(read_csv(cli_dataset[0]), seed=0)


# 1 -------------------------------------------------------------------------

@pytest.mark.parametrize("qber,entropy,tol", [
    (0.3927, 0.9661, 0.0015),
    (0.2542, 0.8169, 0.0015),
    (0.0129, 0.0990, 0.0015),
    (0.0553, 0.2981, 0.015),
])
def test_c1_entropy_qber_law(qber, entropy, tol, criterion):
    h = binary_entropy(qber)
    criterion(f"c1 entropy({qber})", abs(h - entropy) <= tol, f"got {h:.4f}, want {entropy} +- {tol}")


# 2 -------------------------------------------------------------------------

def test_c2_dataset_shape(cli_dataset, criterion):
    path, elapsed = cli_dataset
    table = read_csv(path)
    counts = table.label_counts()
    want = {k.label: n for k, n in TABLE_COUNTS.items()}
    criterion("c2 row count", len(table) == 10_329, f"{len(table)} rows")
    criterion("c2 per-scenario counts", counts == want, str(counts))
    criterion("c2 runtime", elapsed < 120.0, f"{elapsed:.1f}s single-threaded")


# 3 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def signature_table():
    return generate_dataset(DatasetConfig({k: 200 for k in ScenarioKind}, master_seed=7))


def _mean(table, label, column):
    return float(np.mean([getattr(r, column) for r in table.rows if r.label == label]))


def test_c3_scenario_signatures(signature_table, criterion):
    t = signature_table
    q_norm = _mean(t, "normal", "qber")
    q_ir = _mean(t, "mitm_attack", "qber")
    q_pns = _mean(t, "pns_attack", "qber")
    t_norm = _mean(t, "normal", "avg_photon_time")
    t_ir = _mean(t, "mitm_attack", "avg_photon_time")
    d_blind = _mean(t, "detector_blinding_attack", "signal_detection_rate")
    criterion("c3 normal QBER in [0.02, 0.08]", 0.02 <= q_norm <= 0.08, f"{q_norm:.4f}")
    criterion("c3 intercept-resend QBER >= 0.30", q_ir >= 0.30, f"{q_ir:.4f}")
    criterion("c3 |PNS - normal| QBER <= 0.01", abs(q_pns - q_norm) <= 0.01, f"{abs(q_pns - q_norm):.4f}")
    criterion("c3 intercept-resend time >= 2x normal", t_ir >= 2 * t_norm, f"{t_ir:.4f} vs {t_norm:.4f}")
    criterion("c3 blinding detection <= 0.55", d_blind <= 0.55, f"{d_blind:.4f}")


def test_c3_intercept_resend_noiseless_limit(criterion):
    quiet = SimConfig(noise=NoiseParams(p_loss=0.0, p_flip=0.0, p_depol=0.0))
    p = InterceptResendParams(p_err_eve=0.0, p_depol_eve=0.0)
    mism = sift = 0
    for seed in range(40):
        tr = run_iteration(ScenarioKind.INTERCEPT_RESEND, quiet, p, random.Random(seed))
        mism += tr.mismatches
        sift += tr.sifted_bits
    oracle = float(intercept_resend_qber_oracle())
    q = mism / sift
    criterion("c3 noiseless intercept-resend QBER", abs(q - oracle) <= 0.01, f"{q:.4f} vs oracle {oracle}")


# 4 -------------------------------------------------------------------------

def test_c4_norm_drift(criterion):
    rng = np.random.default_rng(4)
    n = 5
    s = qsim.init_state(n)
    for _ in range(1000):
        w = int(rng.integers(n))
        g = [qsim.RY(w, rng.normal()), qsim.RZ(w, rng.normal()), qsim.Rot(w, *rng.normal(size=3)),
             qsim.CNot(w, (w + 1) % n)][int(rng.integers(4))]
        s = qsim.apply_gate(s, g)
    drift = abs(np.linalg.norm(s) - 1.0)
    criterion("c4 norm drift < 1e-10", drift < 1e-10, f"{drift:.2e}")


def test_c4_dense_oracle(criterion):
    rng = np.random.default_rng(40)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 5))
        x = rng.uniform(-np.pi, np.pi, n)
        w = rng.uniform(0, 2 * np.pi, (int(rng.integers(1, 3)), n, 3))
        worst = max(worst, float(np.abs(qsim.vqc_eval(x, w) - dense_vqc(x, w)).max()))
    criterion("c4 vqc_eval vs dense oracle < 1e-10", worst < 1e-10, f"{worst:.2e}")


def test_c4_single_qubit_closed_forms(criterion):
    worst = 0.0
    w = np.zeros((1, 1, 3))
    for theta in np.linspace(-np.pi, np.pi, 41):
        z = qsim.vqc_eval([theta], w)[0]
        d = qsim.vqc_grad(np.array([theta]), w)[0][0, 0]
        worst = max(worst, abs(z - math.cos(theta)), abs(d + math.sin(theta)))
    criterion("c4 <Z> = cos, d<Z> = -sin", worst < 1e-10, f"{worst:.2e}")


# 5 -------------------------------------------------------------------------

def test_c5_parameter_shift_vs_adjoint(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        x = rng.uniform(-np.pi, np.pi, n)
        w = rng.uniform(0, 2 * np.pi, (2, n, 3))
        a = qsim.vqc_grad(x, w, "adjoint")
        p = qsim.vqc_grad(x, w, "parameter-shift")
        worst = max(worst, float(np.abs(a[0] - p[0]).max()), float(np.abs(a[1] - p[1]).max()))
    criterion("c5 parameter-shift vs adjoint < 1e-9", worst < 1e-9, f"{worst:.2e}")


def test_c5_model_gradient_vs_finite_differences(criterion):
    t0 = time.perf_counter()
    results = [max_relative_error(seed) for seed in range(5)]
    elapsed = time.perf_counter() - t0
    worst = max(r[0] for r in results)
    checked = sum(r[1] for r in results)
    assert TINY.n_qubits == 3 and TINY.hidden == 4
    criterion("c5 hybrid gradient vs finite differences < 1e-3", worst < 1e-3,
              f"max rel err {worst:.2e} over {checked} entries, 5 seeds")
    criterion("c5 runtime < 60s", elapsed < 60.0, f"{elapsed:.1f}s")


# 6 -------------------------------------------------------------------------

def test_c6_adamw_first_step(criterion):
    p = {"w": np.array([0.7])}
    g, lr, wd = 0.3, 1e-2, 1e-4
    adamw_step(p, {"w": np.array([g])}, OptimState(), lr, wd)
    m_hat, v_hat = g, g * g
    want = 0.7 * (1 - lr * wd) - lr * m_hat / (math.sqrt(v_hat) + 1e-8)
    err = abs(p["w"][0] - want)
    criterion("c6 AdamW first step", err < 1e-10, f"{err:.2e}")


def test_c6_lr_boundaries(criterion):
    st = SchedulerState(eta_max=LR_DEFAULT, eta_min=1e-6, t_i=50)
    ok = lr_at(st, 0) == LR_DEFAULT and lr_at(st, 50) == LR_DEFAULT and lr_at(st, 25) == (LR_DEFAULT + 1e-6) / 2
    criterion("c6 lr_at boundaries exact", ok, f"{lr_at(st, 0)}, {lr_at(st, 25)}, {lr_at(st, 50)}")


# 7 -------------------------------------------------------------------------

def test_c7_arrival_dev_bound(cli_dataset, criterion):
    rows = read_csv(cli_dataset[0]).rows
    # the CSV rounds to 6 decimals, so allow one rounding unit
    bad = [r for r in rows if r.arrival_dev > math.sqrt(r.arrival_var) + 1e-6]
    criterion("c7 arrival_dev <= sqrt(arrival_var)", not bad, f"{len(bad)} violating rows of {len(rows)}")


def test_c7_report_identities(criterion):
    rng = np.random.default_rng(7)
    ok = True
    for _ in range(200):
        y = rng.integers(0, 8, 300)
        pred = np.where(rng.random(300) < 0.6, y, rng.integers(0, 8, 300))
        cm = confusion_matrix(y, pred, 8)
        rep = report_from_confusion(cm)
        ok &= abs(rep.recall - rep.accuracy) < 1e-12 and abs(np.trace(cm) / cm.sum() - rep.accuracy) < 1e-12
    criterion("c7 weighted recall = accuracy = trace/total", ok, "200 random evaluations")


# 8 -------------------------------------------------------------------------

def test_c8_generate_is_byte_identical(cli_dataset, tmp_path, criterion):
    out = tmp_path / "again.csv"
    assert run_cli(["generate", "--seed", "42", "--out", str(out)]) == 0
    criterion("c8 generate --seed 42 twice", out.read_bytes() == cli_dataset[0].read_bytes(), "byte compare")


def test_c8_train_is_reproducible(cli_dataset, tmp_path, criterion):
    hist = []
    for run in ("a", "b"):
        ckpt = tmp_path / f"{run}.npz"
        assert run_cli(["train", "--data", str(cli_dataset[0]), "--model", "lstm", "--epochs", "10",
                        "--seed", "9", "--out", str(ckpt)]) == 0
        hist.append((tmp_path / f"{run}.history.csv").read_bytes())
    criterion("c8 train twice gives identical history", hist[0] == hist[1], "byte compare")


# 9 -------------------------------------------------------------------------

def test_c9a_classical_lstm(prepared, criterion):
    d = prepared
    model = HybridModel(ModelConfig(kind="lstm"), seed=0)
    t0 = time.perf_counter()
    train(model, d.x_train, d.y_train, d.x_test, d.y_test, TrainConfig(max_epochs=20))
    elapsed = time.perf_counter() - t0
    rep = evaluate(model, d.x_test, d.y_test)
    criterion("c9a LSTM accuracy >= 0.75 in 20 epochs", rep.accuracy >= 0.75,
              f"acc {rep.accuracy:.4f}, lr {LR_DEFAULT:g}")
    criterion("c9a LSTM runtime < 10 min", elapsed < 600, f"{elapsed:.0f}s")
    criterion("c7 weighted recall = accuracy on LSTM evaluation", abs(rep.recall - rep.accuracy) < 1e-12,
              f"{rep.recall:.6f}")


def test_c9b_qlstm_reduced_profile(prepared, criterion):
    d = prepared
    model = HybridModel(ModelConfig(kind="qlstm"), seed=0)
    t0 = time.perf_counter()
    train(model, d.x_train[:2000], d.y_train[:2000], d.x_test, d.y_test,
          TrainConfig(max_epochs=20, lr_init=LR_HIGH))
    elapsed = time.perf_counter() - t0
    rep = evaluate(model, d.x_test, d.y_test)
    criterion("c9b QLSTM accuracy >= 0.75 on 2,000 rows / 20 epochs", rep.accuracy >= 0.75,
              f"acc {rep.accuracy:.4f}, lr {LR_HIGH:g}, {elapsed / 60:.1f} min")
    criterion("c9b QLSTM runtime <= 2 h", elapsed <= 7200, f"{elapsed:.0f}s")

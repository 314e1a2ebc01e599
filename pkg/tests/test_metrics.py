import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qkd_qlstm.channel import Basis
from qkd_qlstm.metrics import CSV_COLUMNS, binary_entropy, compute_metrics, timing_stats
from qkd_qlstm.scenarios import PhotonRecord, PulseType, ScenarioKind, Transcript


def test_binary_entropy_known_values():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(1.0, abs=1e-15)
    assert binary_entropy(0.11) == pytest.approx(0.49991596, abs=1e-8)


@given(st.floats(0.0, 1.0))
def test_binary_entropy_symmetric_and_bounded(p):
    h = binary_entropy(p)
    assert 0.0 <= h <= 1.0
    assert h == pytest.approx(binary_entropy(1.0 - p), abs=1e-12)


@pytest.mark.parametrize("p", [-0.01, 1.01, float("nan")])
def test_binary_entropy_rejects_out_of_range(p):
    with pytest.raises(ValueError):
        binary_entropy(p)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60))
@settings(max_examples=100)
def test_timing_stats_against_numpy(times):
    mean, total, var, dev = timing_stats(times)
    a = np.array(times)
    assert mean == pytest.approx(a.mean(), abs=1e-12)
    assert total == pytest.approx(a.sum(), abs=1e-12)
    assert var == pytest.approx(a.var(), abs=1e-12)
    assert dev == pytest.approx(np.abs(a - a.mean()).mean(), abs=1e-12)
    assert dev <= math.sqrt(var) + 1e-12


def test_timing_stats_empty():
    assert timing_stats([]) == (0.0, 0.0, 0.0, 0.0)


def _rec(i, pulse, lost, sifted=False, matched=None, t=None):
    return PhotonRecord(i, pulse, 0, Basis.RECTILINEAR, Basis.RECTILINEAR, None if lost else 0,
                        lost, sifted, matched, t, False)


def test_compute_metrics_by_hand():
    S, D = PulseType.SIGNAL, PulseType.DECOY
    records = [
        _rec(0, S, False, True, True, 0.06),
        _rec(1, S, False, True, False, 0.08),
        _rec(2, S, True),
        _rec(3, D, False, False, None, 0.07),
        _rec(4, D, True),
    ]
    row = compute_metrics(Transcript.from_records(ScenarioKind.NORMAL, records))
    assert row.key_length == 2
    assert row.qber == 0.5
    assert row.measurement_entropy == 1.0
    assert row.signal_detection_rate == pytest.approx(2 / 3)
    assert row.signal_loss_rate == pytest.approx(1 / 3)
    assert row.decoy_detection_rate == row.decoy_loss_rate == 0.5
    assert row.avg_photon_time == pytest.approx(0.07)
    assert row.whole_key_time == pytest.approx(0.21)
    assert row.arrival_var == pytest.approx(np.var([0.06, 0.08, 0.07]))
    assert row.label == "normal" and row.valid
    assert len(row.features()) == len(CSV_COLUMNS) - 1


def test_compute_metrics_degenerate_row():
    records = [_rec(0, PulseType.SIGNAL, True)]
    row = compute_metrics(Transcript.from_records(ScenarioKind.NORMAL, records))
    assert not row.valid
    assert row.qber == 0.0 and row.key_length == 0 and row.decoy_detection_rate == 0.0

"""Per-exchange security metrics: QBER, match/mismatch entropy, rates and timing."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from .scenarios import Transcript

FEATURE_COLUMNS = (
    "Key_Length",
    "QBER",
    "Measurement_entropy",
    "Signal_detection_rate",
    "Decoy_detection_rate",
    "Signal_loss_rate",
    "Decoy_loss_rate",
    "Avg_Photon_time",
    "Whole_key_time",
    "Arrival_var",
    "Arrival_dev",
)
CSV_COLUMNS = FEATURE_COLUMNS + ("Label",)


@dataclass(frozen=True)
class MetricsRow:
    key_length: int
    qber: float
    measurement_entropy: float
    signal_detection_rate: float
    decoy_detection_rate: float
    signal_loss_rate: float
    decoy_loss_rate: float
    avg_photon_time: float
    whole_key_time: float
    arrival_var: float
    arrival_dev: float
    label: str
    valid: bool = True

    def features(self) -> tuple:
        """The eleven feature values in CSV column order."""
        return tuple(getattr(self, f.name) for f in fields(self)[:11])

    def as_dict(self) -> dict:
        return asdict(self)


def binary_entropy(p: float) -> float:
    """Shannon entropy in bits of a two-outcome distribution {p, 1 - p}."""
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def timing_stats(times) -> tuple[float, float, float, float]:
    """(mean, total, population variance, mean absolute deviation) of ``times``."""
    n = len(times)
    if n == 0:
        return 0.0, 0.0, 0.0, 0.0
    total = math.fsum(times)
    mean = total / n
    var = math.fsum((t - mean) ** 2 for t in times) / n
    dev = math.fsum(abs(t - mean) for t in times) / n
    return mean, total, var, dev


def compute_metrics(t: Transcript) -> MetricsRow:
    """Reduce a transcript to one dataset row.

    Degenerate exchanges (nothing sifted, a pulse class never sent, or no
    detections) yield zeros for the affected metrics and ``valid=False``.
    """
    qber = _ratio(t.mismatches, t.sifted_bits)
    mean, total, var, dev = timing_stats(t.flight_times())
    valid = t.sifted_bits > 0 and t.sent_signal > 0 and t.sent_decoy > 0
    return MetricsRow(
        key_length=t.sifted_bits,
        qber=qber,
        measurement_entropy=binary_entropy(qber),
        signal_detection_rate=_ratio(t.detected_signal, t.sent_signal),
        decoy_detection_rate=_ratio(t.detected_decoy, t.sent_decoy),
        signal_loss_rate=_ratio(t.lost_signal, t.sent_signal),
        decoy_loss_rate=_ratio(t.lost_decoy, t.sent_decoy),
        avg_photon_time=mean,
        whole_key_time=total,
        arrival_var=var,
        arrival_dev=dev,
        label=t.scenario.label,
        valid=valid,
    )

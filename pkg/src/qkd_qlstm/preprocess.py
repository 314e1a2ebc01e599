"""Feature selection, scaling, stratified splitting, noise injection and sequencing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .dataset import LABELS, DatasetTable
from .metrics import CSV_COLUMNS

SELECTED_FEATURES = (
    "Key_Length",
    "QBER",
    "Measurement_entropy",
    "Signal_loss_rate",
    "Decoy_loss_rate",
    "Avg_Photon_time",
    "Whole_key_time",
    "Arrival_var",
    "Arrival_dev",
)
SEQ_LEN = len(SELECTED_FEATURES)


class SchemaError(ValueError):
    pass


class DegenerateFeatureError(ValueError):
    pass


class StratificationError(ValueError):
    pass


@dataclass
class Scaler:
    means: np.ndarray
    stds: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("cannot fit a scaler on an empty matrix")
        means = x.mean(axis=0)
        stds = x.std(axis=0)  # population std, like StandardScaler
        constant = np.flatnonzero(stds <= 1e-12 * np.maximum(1.0, np.abs(means)))
        if constant.size:
            raise DegenerateFeatureError(f"constant feature column(s) {constant.tolist()}")
        return cls(means, stds)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.means) / self.stds

    def inverse_transform(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.stds + self.means


class LabelCodec:
    """Alphabetical label <-> index mapping with one-hot encoding."""

    def __init__(self, labels=LABELS):
        self.labels = tuple(sorted(labels))
        self.label_to_index = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def encode(self, labels) -> np.ndarray:
        try:
            return np.array([self.label_to_index[lab] for lab in labels], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"unknown label {exc.args[0]!r}") from None

    def decode(self, indices) -> list[str]:
        return [self.labels[int(i)] for i in indices]

    def one_hot(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        out = np.zeros((indices.size, len(self.labels)))
        out[np.arange(indices.size), indices] = 1.0
        return out


@dataclass
class SequenceBatch:
    inputs: np.ndarray   # (batch, seq_len, 1)
    targets: np.ndarray  # (batch,) class indices


def select_features(t: DatasetTable, columns=SELECTED_FEATURES) -> tuple[np.ndarray, list[str]]:
    """Feature matrix [N x 9] (detection rates dropped) and the row labels."""
    missing = [c for c in columns if c not in CSV_COLUMNS]
    if missing:
        raise SchemaError(f"missing column(s): {missing}")
    idx = [CSV_COLUMNS.index(c) for c in columns]
    if not t.rows:
        return np.zeros((0, len(idx))), []
    full = np.array([r.features() for r in t.rows], dtype=float)
    return full[:, idx], [r.label for r in t.rows]


def standardize(train: np.ndarray, test: np.ndarray) -> tuple[Scaler, np.ndarray, np.ndarray]:
    scaler = Scaler.fit(train)
    return scaler, scaler.transform(train), scaler.transform(test)


def split(x: np.ndarray, labels, ratio: float = 0.8, seed: int = 0):
    """Stratified shuffled split.

    Each class contributes ``round(ratio * n_c)`` rows to the training side,
    clipped so that both sides receive at least one row.

    Returns:
        ((x_train, y_train, train_idx), (x_test, y_test, test_idx))
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    x = np.asarray(x)
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in sorted(set(y.tolist())):
        members = np.flatnonzero(y == cls)
        if members.size < 2:
            raise StratificationError(f"class {cls!r} has fewer than 2 samples")
        members = rng.permutation(members)
        n_train = min(max(int(round(ratio * members.size)), 1), members.size - 1)
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return (x[train_idx], y[train_idx], train_idx), (x[test_idx], y[test_idx], test_idx)


def inject_noise(train: np.ndarray, sigma: float = 0.05, seed: int = 0) -> np.ndarray:
    train = np.asarray(train, dtype=float)
    if sigma == 0:
        return train.copy()
    return train + np.random.default_rng(seed).normal(0.0, sigma, size=train.shape)


def to_sequences(x: np.ndarray) -> np.ndarray:
    """[N x F] -> [N x F x 1]: each feature becomes one scalar timestep."""
    x = np.asarray(x, dtype=float)
    return x.reshape(x.shape[0], x.shape[1], 1)


def make_sequences(x: np.ndarray, targets, batch: int = 64) -> Iterator[SequenceBatch]:
    seqs = to_sequences(x)
    targets = np.asarray(targets, dtype=np.int64)
    for start in range(0, seqs.shape[0], batch):
        yield SequenceBatch(seqs[start:start + batch], targets[start:start + batch])


@dataclass
class PreparedData:
    """Standardized, split, sequenced data ready for training."""

    x_train: np.ndarray  # (N, 9, 1), noise already injected
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    scaler: Scaler
    codec: LabelCodec


def prepare(t: DatasetTable, seed: int = 0, ratio: float = 0.8, noise_sigma: float = 0.05,
            codec: LabelCodec | None = None) -> PreparedData:
    """The full pipeline: select, split, fit scaler on train, transform, add train noise."""
    codec = codec or LabelCodec()
    x, labels = select_features(t)
    y = codec.encode(labels)
    (x_tr, y_tr, _), (x_te, y_te, _) = split(x, y, ratio, seed)
    scaler, x_tr, x_te = standardize(x_tr, x_te)
    x_tr = inject_noise(x_tr, noise_sigma, seed + 1)
    return PreparedData(to_sequences(x_tr), y_tr, to_sequences(x_te), y_te, scaler, codec)

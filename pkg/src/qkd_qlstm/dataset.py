"""Labelled dataset generation and its CSV persistence."""

from __future__ import annotations

import csv
import io
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .metrics import CSV_COLUMNS, MetricsRow, compute_metrics
from .scenarios import ScenarioKind, SimConfig, default_params, run_iteration

SCHEMA_VERSION = 1

# 1292 normal + 7 x 1291 attack rows = 10,329
TABLE_COUNTS = {kind: (1292 if kind is ScenarioKind.NORMAL else 1291) for kind in ScenarioKind}
LABELS = tuple(kind.label for kind in ScenarioKind)
SCENARIO_INDEX = {kind: i for i, kind in enumerate(ScenarioKind)}


class DatasetParseError(ValueError):
    def __init__(self, row: int | str, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass
class DatasetConfig:
    iterations_per_scenario: dict = field(default_factory=lambda: dict(TABLE_COUNTS))
    master_seed: int = 42
    sim: SimConfig = field(default_factory=SimConfig)
    attack_params: dict = field(default_factory=dict)
    output_path: str | None = None

    def __post_init__(self):
        counts = {}
        for kind, n in self.iterations_per_scenario.items():
            if n < 0:
                raise ValueError(f"negative iteration count for {kind}")
            counts[ScenarioKind(kind)] = int(n)
        self.iterations_per_scenario = counts
        self.attack_params = {ScenarioKind(k): v for k, v in self.attack_params.items()}

    def params_for(self, kind: ScenarioKind):
        return self.attack_params.get(kind, default_params(kind))


@dataclass
class DatasetTable:
    rows: list[MetricsRow]
    schema_version: int = SCHEMA_VERSION

    def __len__(self):
        return len(self.rows)

    def label_counts(self) -> dict[str, int]:
        counts = {}
        for r in self.rows:
            counts[r.label] = counts.get(r.label, 0) + 1
        return counts

    def column(self, name: str) -> np.ndarray:
        idx = CSV_COLUMNS.index(name)
        return np.array([r.features()[idx] for r in self.rows], dtype=float)


def row_seed(master_seed: int, scenario_index: int, iteration: int) -> int:
    """Independent 64-bit stream seed for one (scenario, iteration) cell."""
    ss = np.random.SeedSequence([master_seed & (2**64 - 1), scenario_index, iteration])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _generate_block(args) -> list[MetricsRow]:
    kind, count, master_seed, sim, params = args
    s_idx = SCENARIO_INDEX[kind]
    rows = []
    for it in range(count):
        rng = random.Random(row_seed(master_seed, s_idx, it))
        rows.append(compute_metrics(run_iteration(kind, sim, params, rng)))
    return rows


def generate_dataset(cfg: DatasetConfig, workers: int = 1) -> DatasetTable:
    """Run every configured iteration; rows are ordered by (scenario, iteration).

    Each row's stream is seeded from ``(master_seed, scenario, iteration)``, so
    the table does not depend on ``workers`` or execution order.
    """
    jobs = [(kind, cfg.iterations_per_scenario.get(kind, 0), cfg.master_seed, cfg.sim, cfg.params_for(kind))
            for kind in ScenarioKind if cfg.iterations_per_scenario.get(kind, 0) > 0]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_generate_block, jobs))
    else:
        blocks = [_generate_block(job) for job in jobs]
    table = DatasetTable([row for block in blocks for row in block])
    if cfg.output_path:
        write_csv(table, cfg.output_path)
    return table


def _format_row(row: MetricsRow) -> list[str]:
    values = row.features()
    return [str(int(values[0]))] + [f"{v:.6f}" for v in values[1:]] + [row.label]


def to_csv_text(t: DatasetTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in t.rows:
        writer.writerow(_format_row(row))
    return buf.getvalue()


def write_csv(t: DatasetTable, path) -> int:
    """Write the table (UTF-8, LF, fixed 6-decimal floats); returns the data row count."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv_text(t))
    return len(t.rows)


def _parse_row(fields_: list[str], row_no: int) -> MetricsRow:
    if len(fields_) != len(CSV_COLUMNS):
        raise DatasetParseError(row_no, f"expected {len(CSV_COLUMNS)} columns, found {len(fields_)}")
    label = fields_[-1].strip()
    if label not in LABELS:
        raise DatasetParseError(row_no, f"unknown label {label!r}")
    try:
        key_length = int(float(fields_[0]))
        values = [float(v) for v in fields_[1:-1]]
    except ValueError as exc:
        raise DatasetParseError(row_no, f"malformed number ({exc})") from None
    return MetricsRow(key_length, *values, label=label, valid=key_length > 0)


def read_csv(path) -> DatasetTable:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError("header", "empty file") from None
        if tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise DatasetParseError("header", f"expected columns {','.join(CSV_COLUMNS)}")
        rows = [_parse_row(fields_, i) for i, fields_ in enumerate(reader, start=1) if fields_]
    return DatasetTable(rows)


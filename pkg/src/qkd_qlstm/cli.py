"""Command-line front end: generate, train, evaluate, report.

Every subcommand accepts ``--config FILE`` (flat ``key = value`` lines, keys
dotted or grouped under ``[section]`` headers) and repeated ``--set key=value``
overrides, which win over the file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import scenarios as sc
from .channel import NoiseParams
from .dataset import DatasetConfig, DatasetParseError, generate_dataset, read_csv, write_csv
from .nn import HybridModel, ModelConfig, load_checkpoint, save_checkpoint
from .preprocess import LabelCodec, SchemaError, prepare, select_features, split, to_sequences
from .train import (
    LR_DEFAULT,
    LR_HIGH,
    TrainConfig,
    evaluate,
    read_history,
    train,
    write_confusion,
    write_history,
    write_report,
)

log = logging.getLogger(__name__)

EPOCH_CHOICES = (10, 20, 50)

# published reference rows: (model, epochs) -> (accuracy, precision, recall, f1, test loss)
REFERENCE_RESULTS = {
    ("LSTM", 10): (0.858, 0.895, 0.858, 0.849, 0.258),
    ("LSTM", 20): (0.882, 0.903, 0.882, 0.878, 0.239),
    ("LSTM", 50): (0.851, 0.871, 0.855, 0.845, 0.310),
    ("CNN", 10): (0.868, 0.869, 0.868, 0.865, 0.236),
    ("CNN", 20): (0.865, 0.868, 0.865, 0.862, 0.224),
    ("CNN", 50): (0.849, 0.857, 0.849, 0.848, 0.303),
    ("QLSTM", 10): (0.883, 0.900, 0.883, 0.870, 0.216),
    ("QLSTM", 20): (0.938, 0.942, 0.938, 0.938, 0.208),
    ("QLSTM", 50): (0.947, 0.951, 0.947, 0.947, 0.189),
}

ATTACK_SECTIONS = {
    "intercept_resend": (sc.ScenarioKind.INTERCEPT_RESEND, sc.InterceptResendParams),
    "pns": (sc.ScenarioKind.PNS, sc.PnsParams),
    "trojan": (sc.ScenarioKind.TROJAN_HORSE, sc.TrojanParams),
    "wavelength": (sc.ScenarioKind.WAVELENGTH_TROJAN, sc.WavelengthParams),
    "rng": (sc.ScenarioKind.RNG_ATTACK, sc.RngAttackParams),
    "blinding": (sc.ScenarioKind.DETECTOR_BLINDING, sc.BlindingParams),
}
DATA_KEYS = {"split_ratio": 0.8, "noise_sigma": 0.05, "train_limit": 0}


class UsageError(Exception):
    """Bad flag, key, value or input file; maps to exit code 2."""


def default_seed() -> int:
    raw = os.environ.get("QKD_SEED")
    if raw is None or raw == "":
        return 42
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"QKD_SEED must be an integer, got {raw!r}") from None


# --- config ------------------------------------------------------------------


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    section = ""
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise UsageError(f"{source}:{n}: empty key")
        out[f"{section}.{key}" if section else key] = value
    return out


def load_config(path, overrides=()) -> dict[str, str]:
    cfg = {}
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
        cfg.update(parse_config_text(text, str(path)))
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        cfg[key] = value
    return cfg


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _build(cls, section: str, cfg: dict, skip=()):
    """Instantiate a dataclass from ``section.<field>`` keys; untouched fields keep defaults."""
    base = cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{section}.{f.name}"
        if f.name in skip or key not in cfg:
            continue
        kwargs[f.name] = _coerce(key, cfg[key], getattr(base, f.name))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"[{section}] {exc}") from None


def _check_keys(cfg: dict, allowed: set[str]) -> None:
    unknown = sorted(k for k in cfg if k not in allowed)
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")


def _keys_of(cls, section: str, skip=()) -> set[str]:
    return {f"{section}.{f.name}" for f in dataclasses.fields(cls) if f.name not in skip}


def _all_keys() -> set[str]:
    keys = {"generate.seed", "generate.workers", "generate.per_scenario", "sim.n_trans", "sim.p_sig", "sim.p_dec",
            "sim.noise_level", "sim.wavelength_legit_nm"}
    keys |= _keys_of(NoiseParams, "noise")
    for section, (_, cls) in ATTACK_SECTIONS.items():
        keys |= _keys_of(cls, section)
    keys |= {"combined.p_wavelength_active", "combined.p_blinding_active", "combined.p_rng_active"}
    keys |= _keys_of(TrainConfig, "train", skip=("max_epochs", "seed"))
    keys |= _keys_of(ModelConfig, "model", skip=("kind",))
    keys |= {f"data.{k}" for k in DATA_KEYS}
    return keys


def dataset_config_from(cfg: dict, seed: int) -> DatasetConfig:
    sim_kwargs = {}
    for name, default in (("n_trans", 700), ("p_sig", 0.7), ("p_dec", 0.3), ("wavelength_legit_nm", 1550.0)):
        if f"sim.{name}" in cfg:
            sim_kwargs[name] = _coerce(f"sim.{name}", cfg[f"sim.{name}"], default)
    if "sim.noise_level" in cfg:
        try:
            sim_kwargs["noise_level"] = sc.NoiseLevel(cfg["sim.noise_level"].lower())
        except ValueError:
            raise UsageError("sim.noise_level must be one of low, moderate, high") from None
    if any(k.startswith("noise.") for k in cfg):
        sim_kwargs["noise"] = _build(NoiseParams, "noise", cfg)
    try:
        sim = sc.SimConfig(**sim_kwargs)
    except ValueError as exc:
        raise UsageError(f"[sim] {exc}") from None
    attack = {}
    for section, (kind, cls) in ATTACK_SECTIONS.items():
        attack[kind] = _build(cls, section, cfg)
    attack[sc.ScenarioKind.COMBINED] = _build(
        sc.CombinedParams, "combined", cfg, skip=("wavelength", "blinding", "rng"))
    attack[sc.ScenarioKind.COMBINED] = dataclasses.replace(
        attack[sc.ScenarioKind.COMBINED],
        wavelength=attack[sc.ScenarioKind.WAVELENGTH_TROJAN],
        blinding=attack[sc.ScenarioKind.DETECTOR_BLINDING],
        rng=attack[sc.ScenarioKind.RNG_ATTACK],
    )
    return DatasetConfig(master_seed=seed, sim=sim, attack_params=attack)


# --- commands ----------------------------------------------------------------


def _read_dataset(path):
    if not Path(path).is_file():
        raise UsageError(f"--data: no such file {path}")
    try:
        return read_csv(path)
    except DatasetParseError as exc:
        raise UsageError(f"--data {path}: {exc}") from None


def _data_opts(cfg: dict) -> dict:
    return {k: _coerce(f"data.{k}", cfg[f"data.{k}"], d) if f"data.{k}" in cfg else d
            for k, d in DATA_KEYS.items()}


def cmd_generate(args, cfg) -> list[str]:
    seed = args.seed
    if seed is None:
        seed = _coerce("generate.seed", cfg["generate.seed"], 0) if "generate.seed" in cfg else default_seed()
    workers = args.workers if args.workers is not None else _coerce("generate.workers", cfg.get("generate.workers", "1"), 1)
    dcfg = dataset_config_from(cfg, seed)
    if "generate.per_scenario" in cfg:
        n = _coerce("generate.per_scenario", cfg["generate.per_scenario"], 0)
        if n < 1:
            raise UsageError("generate.per_scenario must be >= 1")
        dcfg.iterations_per_scenario = {kind: n for kind in sc.ScenarioKind}
    table = generate_dataset(dcfg, workers=workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = write_csv(table, out)
    log.info("wrote %d rows to %s", n, out)
    return [str(out)]


def _history_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.stem + ".history.csv")


def cmd_train(args, cfg) -> list[str]:
    seed = args.seed if args.seed is not None else default_seed()
    table = _read_dataset(args.data)
    opts = _data_opts(cfg)
    tcfg = _build(TrainConfig, "train", cfg, skip=("max_epochs", "seed"))
    tcfg = dataclasses.replace(tcfg, max_epochs=args.epochs, seed=seed)
    if args.lr is not None:
        tcfg = dataclasses.replace(tcfg, lr_init=args.lr)
    mcfg = dataclasses.replace(_build(ModelConfig, "model", cfg, skip=("kind",)), kind=args.model)
    try:
        data = prepare(table, seed=seed, ratio=opts["split_ratio"], noise_sigma=opts["noise_sigma"])
    except (SchemaError, ValueError) as exc:
        raise UsageError(f"--data {args.data}: {exc}") from None
    limit = args.train_limit if args.train_limit is not None else opts["train_limit"]
    x_tr, y_tr = data.x_train, data.y_train
    if limit and limit < len(y_tr):
        x_tr, y_tr = x_tr[:limit], y_tr[:limit]
    model = HybridModel(mcfg, seed=seed)
    log.info("training %s (%d parameters) on %d rows for up to %d epochs",
             mcfg.kind, model.n_params, len(y_tr), tcfg.max_epochs)
    result = train(model, x_tr, y_tr, data.x_test, data.y_test, tcfg)
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    extra = dict(seed=seed, split_ratio=opts["split_ratio"], noise_sigma=opts["noise_sigma"],
                 epochs=args.epochs, train_rows=int(len(y_tr)), best_epoch=result.best_epoch,
                 lr_init=tcfg.lr_init)
    save_checkpoint(ckpt, result.model, data.scaler, data.codec, extra)
    hist = _history_path(ckpt)
    write_history(result.history, hist)
    return [str(ckpt), str(hist)]


def cmd_evaluate(args, cfg) -> list[str]:
    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        raise UsageError(f"--ckpt: no such file {ckpt}")
    try:
        model, scaler, codec, extra = load_checkpoint(ckpt)
    except (ValueError, KeyError, OSError) as exc:
        raise UsageError(f"--ckpt {ckpt}: not a valid checkpoint ({exc})") from None
    table = _read_dataset(args.data)
    codec = codec or LabelCodec()
    x, labels = select_features(table)
    try:
        y = codec.encode(labels)
    except ValueError as exc:
        raise UsageError(f"--data {args.data}: {exc}") from None
    if args.all_rows:
        x_te, y_te = x, y
    else:
        _, (x_te, y_te, _) = split(x, y, extra.get("split_ratio", 0.8), extra.get("seed", 0))
    if scaler is None:
        raise UsageError(f"--ckpt {ckpt}: checkpoint carries no scaler")
    report = evaluate(model, to_sequences(scaler.transform(x_te)), y_te, codec.labels)
    prefix = Path(args.out) if args.out else ckpt.with_suffix("")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    rep_path = prefix.with_name(prefix.name + ".report.json")
    cm_path = prefix.with_name(prefix.name + ".confusion.csv")
    write_report(report, rep_path)
    write_confusion(report.confusion, cm_path, codec.labels)
    print(f"accuracy={report.accuracy:.4f} precision={report.precision:.4f} "
          f"recall={report.recall:.4f} f1={report.f1:.4f} loss={report.loss:.4f}")
    return [str(rep_path), str(cm_path)]


def _split_named(text: str) -> list[tuple[str, Path]]:
    items = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, path = part.rpartition("=")
        path = Path(path)
        items.append((name or path.name.split(".")[0], path))
    return items


def comparison_rows(histories, reports=None) -> list[dict]:
    """Table rows (one per history) plus the published reference rows."""
    import json

    rows = []
    reports = reports or [None] * len(histories)
    for (name, hpath), rpath in zip(histories, reports):
        hist = read_history(hpath)
        if not hist:
            raise UsageError(f"--histories: {hpath} holds no epochs")
        last = hist[-1]
        row = dict(model=name, epochs=last.epoch, accuracy=last.accuracy, precision=None,
                   recall=None, f1=None, test_loss=last.eval_loss, source="run")
        if rpath is not None:
            rep = json.loads(Path(rpath).read_text(encoding="utf-8"))
            row.update(accuracy=rep["accuracy"], precision=rep["precision"], recall=rep["recall"],
                       f1=rep["f1"], test_loss=rep.get("loss", row["test_loss"]))
        rows.append(row)
    for (model, epochs), (acc, prec, rec, f1, loss) in REFERENCE_RESULTS.items():
        rows.append(dict(model=model, epochs=epochs, accuracy=acc, precision=prec, recall=rec,
                         f1=f1, test_loss=loss, source="reference"))
    return rows


REPORT_COLUMNS = ("source", "model", "epochs", "accuracy", "precision", "recall", "f1", "test_loss")


def format_table(rows) -> str:
    def cell(v):
        if v is None:
            return "-"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    body = [[cell(r[c]) for c in REPORT_COLUMNS] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(REPORT_COLUMNS)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def cmd_report(args, cfg) -> list[str]:
    histories = _split_named(args.histories)
    if not histories:
        raise UsageError("--histories: no files given")
    for _, p in histories:
        if not p.is_file():
            raise UsageError(f"--histories: no such file {p}")
    reports = None
    if args.reports:
        reports = [p for _, p in _split_named(args.reports)]
        if len(reports) != len(histories):
            raise UsageError("--reports must list one file per history")
        for p in reports:
            if not p.is_file():
                raise UsageError(f"--reports: no such file {p}")
    try:
        rows = comparison_rows(histories, reports)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"--histories/--reports: {exc}") from None
    print(format_table(rows))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else (f"{r[c]:.6f}" if isinstance(r[c], float) else r[c])
                        for c in REPORT_COLUMNS])
    return [str(out)]


# --- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file ([section] headers or dotted keys)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="qkd-qlstm", description="Simulated QKD attack dataset and QLSTM classifier.",
                formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], formatter_class=fmt, help="simulate and write the dataset CSV")
    g.add_argument("--seed", type=int, default=None, help="master seed (falls back to $QKD_SEED, then 42)")
    g.add_argument("--out", required=True, help="output CSV path")
    g.add_argument("--workers", type=int, default=None, help="worker processes (default 1)")

    t = sub.add_parser("train", parents=[common], formatter_class=fmt, help="train a model, write checkpoint and history")
    t.add_argument("--data", required=True, help="dataset CSV")
    t.add_argument("--model", choices=("qlstm", "lstm"), default="qlstm", help="model kind")
    t.add_argument("--epochs", type=int, choices=EPOCH_CHOICES, default=50, help="maximum epochs")
    t.add_argument("--seed", type=int, default=None, help="split/init/shuffle seed (falls back to $QKD_SEED, then 42)")
    t.add_argument("--out", required=True, help="checkpoint path (.npz); history goes next to it")
    t.add_argument("--lr", type=float, default=None,
                   help=f"initial learning rate (default {LR_DEFAULT:g}; {LR_HIGH:g} is the faster alternative)")
    t.add_argument("--train-limit", type=int, default=None,
                   help="use only the first N training rows (0 = all)")
    t.epilog = ("fixed protocol: batch 64, AdamW weight decay 1e-4, cosine warm restarts T0=50, "
                "early stopping patience 5; change via [train] config keys")

    e = sub.add_parser("evaluate", parents=[common], formatter_class=fmt, help="score a checkpoint on the test split")
    e.add_argument("--ckpt", required=True, help="checkpoint written by train")
    e.add_argument("--data", required=True, help="dataset CSV")
    e.add_argument("--out", default=None, help="output prefix (default: checkpoint path without suffix)")
    e.add_argument("--all-rows", action="store_true", help="score every row instead of the held-out split")

    r = sub.add_parser("report", parents=[common], formatter_class=fmt, help="compare training histories")
    r.add_argument("--histories", required=True, help="comma list of history CSVs, optionally name=path")
    r.add_argument("--reports", default=None, help="comma list of evaluation JSONs, same order as --histories")
    r.add_argument("--out", default="comparison.csv", help="comparison table CSV")
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "report": cmd_report}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        _check_keys(cfg, _all_keys())
        paths = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

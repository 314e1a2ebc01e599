"""Hybrid QLSTM -> LSTM -> linear classifier, with hand-written backpropagation.

Parameters live in a flat ``dict[str, np.ndarray]``:

* ``qlstm.<gate>.proj_w`` (n_qubits, n_qubits + x_dim), ``qlstm.<gate>.proj_b``
  (n_qubits) and ``qlstm.<gate>.vqc`` (n_qlayers, n_qubits, 3) for each gate in
  ``QLSTM_GATES``;
* ``lstm.W_x`` (4H, D), ``lstm.W_h`` (4H, H), ``lstm.b`` (4H), gate blocks
  stacked in the order input, forget, candidate, output;
* ``fc.W`` (n_classes, H), ``fc.b`` (n_classes).

The classical baseline (``kind="lstm"``) drops the quantum layer and feeds the
raw sequence straight into the LSTM.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import qsim

QLSTM_GATES = ("forget", "input", "candidate", "output")
CHECKPOINT_VERSION = 1


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "qlstm"
    x_dim: int = 1
    n_qubits: int = 9
    n_qlayers: int = 1
    hidden: int = 32
    n_classes: int = 8

    def __post_init__(self):
        if self.kind not in ("qlstm", "lstm"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name in ("x_dim", "n_qubits", "n_qlayers", "hidden", "n_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def lstm_input(self) -> int:
        return self.n_qubits if self.kind == "qlstm" else self.x_dim


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    shapes = {}
    if cfg.kind == "qlstm":
        nq, v = cfg.n_qubits, cfg.n_qubits + cfg.x_dim
        for g in QLSTM_GATES:
            shapes[f"qlstm.{g}.proj_w"] = (nq, v)
            shapes[f"qlstm.{g}.proj_b"] = (nq,)
            shapes[f"qlstm.{g}.vqc"] = (cfg.n_qlayers, nq, 3)
    h, d = cfg.hidden, cfg.lstm_input
    shapes["lstm.W_x"] = (4 * h, d)
    shapes["lstm.W_h"] = (4 * h, h)
    shapes["lstm.b"] = (4 * h,)
    shapes["fc.W"] = (cfg.n_classes, h)
    shapes["fc.b"] = (cfg.n_classes,)
    return shapes


def count_params(cfg: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights, Uniform(0, 2pi) circuit angles, zero biases
    except a forget-gate bias of 1 in the classical LSTM."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".vqc"):
            params[name] = rng.uniform(0.0, 2.0 * np.pi, shape)
        elif name.endswith("proj_w") or name.endswith("W_x") or name.endswith("W_h") or name == "fc.W":
            bound = 1.0 / np.sqrt(shape[1])
            params[name] = rng.uniform(-bound, bound, shape)
        else:
            params[name] = np.zeros(shape)
    h = cfg.hidden
    params["lstm.b"][h:2 * h] = 1.0
    return params


# --- cells ------------------------------------------------------------------


def qlstm_cell(x_t, h_prev, c_prev, params, n_qubits=None):
    """One QLSTM step for a batch.

    Args:
        x_t: (B, x_dim) inputs; h_prev, c_prev: (B, n_qubits) states.
        params: dict holding the ``qlstm.*`` entries.

    Returns:
        h_t, c_t and a cache for :func:`qlstm_cell_backward`.
    """
    x_t, h_prev, c_prev = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (x_t, h_prev, c_prev))
    batch = x_t.shape[0]
    v = np.concatenate([h_prev, x_t], axis=1)
    angles = np.concatenate([v @ params[f"qlstm.{g}.proj_w"].T + params[f"qlstm.{g}.proj_b"]
                             for g in QLSTM_GATES])
    weights = np.concatenate([np.broadcast_to(params[f"qlstm.{g}.vqc"], (batch,) + params[f"qlstm.{g}.vqc"].shape)
                              for g in QLSTM_GATES])
    if n_qubits is not None and angles.shape[1] != n_qubits:
        raise ValueError("projection width does not match n_qubits")
    a = qsim.vqc_eval(angles, weights).reshape(4, batch, -1)
    f, i, o = sigmoid(a[0]), sigmoid(a[1]), sigmoid(a[3])
    ct = np.tanh(a[2])
    c = f * c_prev + i * ct
    tc = np.tanh(c)
    h = o * tc
    cache = dict(v=v, angles=angles, weights=weights, f=f, i=i, ct=ct, o=o, c_prev=c_prev, tc=tc)
    return h, c, cache


def qlstm_cell_backward(dh, dc, cache, params, grads):
    """Accumulate parameter gradients into ``grads``; return (dh_prev, dc_prev, dx)."""
    f, i, ct, o, tc = cache["f"], cache["i"], cache["ct"], cache["o"], cache["tc"]
    dc = dc + dh * o * (1.0 - tc ** 2)
    upstream = np.concatenate([
        dc * cache["c_prev"] * f * (1.0 - f),
        dc * ct * i * (1.0 - i),
        dc * i * (1.0 - ct ** 2),
        dh * tc * o * (1.0 - o),
    ])
    d_angles, d_w = qsim.vqc_vjp(cache["angles"], cache["weights"], upstream)
    batch = f.shape[0]
    d_angles = d_angles.reshape(4, batch, -1)
    d_w = d_w.reshape((4, batch) + d_w.shape[1:])
    v = cache["v"]
    dv = np.zeros_like(v)
    for k, g in enumerate(QLSTM_GATES):
        grads[f"qlstm.{g}.proj_w"] += d_angles[k].T @ v
        grads[f"qlstm.{g}.proj_b"] += d_angles[k].sum(axis=0)
        grads[f"qlstm.{g}.vqc"] += d_w[k].sum(axis=0)
        dv += d_angles[k] @ params[f"qlstm.{g}.proj_w"]
    nq = f.shape[1]
    return dv[:, :nq], dc * f, dv[:, nq:]


def lstm_cell(x_t, h_prev, c_prev, W_x, W_h, b):
    """Classical LSTM step with stacked gate blocks (input, forget, candidate, output)."""
    x_t, h_prev, c_prev = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (x_t, h_prev, c_prev))
    H = h_prev.shape[1]
    z = x_t @ W_x.T + h_prev @ W_h.T + b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H:2 * H])
    ct = np.tanh(z[:, 2 * H:3 * H])
    o = sigmoid(z[:, 3 * H:])
    c = f * c_prev + i * ct
    tc = np.tanh(c)
    h = o * tc
    return h, c, dict(x=x_t, h_prev=h_prev, c_prev=c_prev, i=i, f=f, ct=ct, o=o, tc=tc)


def lstm_cell_backward(dh, dc, cache, W_x, W_h, grads, prefix="lstm"):
    i, f, ct, o, tc = cache["i"], cache["f"], cache["ct"], cache["o"], cache["tc"]
    dc = dc + dh * o * (1.0 - tc ** 2)
    dz = np.concatenate([
        dc * ct * i * (1.0 - i),
        dc * cache["c_prev"] * f * (1.0 - f),
        dc * i * (1.0 - ct ** 2),
        dh * tc * o * (1.0 - o),
    ], axis=1)
    grads[f"{prefix}.W_x"] += dz.T @ cache["x"]
    grads[f"{prefix}.W_h"] += dz.T @ cache["h_prev"]
    grads[f"{prefix}.b"] += dz.sum(axis=0)
    return dz @ W_h, dc * f, dz @ W_x


# --- the model ----------------------------------------------------------------


class HybridModel:
    """QLSTM (or nothing, for the baseline) -> LSTM -> fully connected logits."""

    def __init__(self, config: ModelConfig | None = None, params=None, seed: int = 0):
        self.config = config or ModelConfig()
        self.params = params if params is not None else init_params(self.config, seed)
        expected = param_shapes(self.config)
        for name, shape in expected.items():
            if name not in self.params or self.params[name].shape != shape:
                raise ValueError(f"parameter {name} missing or not of shape {shape}")

    @property
    def n_params(self) -> int:
        return count_params(self.config)

    def forward(self, inputs):
        """inputs: (B, T, x_dim). Returns (logits (B, n_classes), cache)."""
        cfg, p = self.config, self.params
        x = np.asarray(inputs, dtype=float)
        if x.ndim != 3 or x.shape[2] != cfg.x_dim:
            raise ValueError(f"inputs must have shape (batch, seq_len, {cfg.x_dim}), got {x.shape}")
        batch, steps, _ = x.shape
        q_caches = []
        if cfg.kind == "qlstm":
            h = np.zeros((batch, cfg.n_qubits))
            c = np.zeros((batch, cfg.n_qubits))
            seq = []
            for t in range(steps):
                h, c, cache = qlstm_cell(x[:, t, :], h, c, p, cfg.n_qubits)
                q_caches.append(cache)
                seq.append(h)
        else:
            seq = [x[:, t, :] for t in range(steps)]
        h = np.zeros((batch, cfg.hidden))
        c = np.zeros((batch, cfg.hidden))
        l_caches = []
        for t in range(steps):
            h, c, cache = lstm_cell(seq[t], h, c, p["lstm.W_x"], p["lstm.W_h"], p["lstm.b"])
            l_caches.append(cache)
        logits = h @ p["fc.W"].T + p["fc.b"]
        return logits, dict(q=q_caches, l=l_caches, h_n=h, params_id=id(p))

    def backward(self, cache, d_logits) -> dict[str, np.ndarray]:
        """Gradients of every parameter given dLoss/dlogits."""
        p = self.params
        if cache.get("params_id") != id(p):
            raise ValueError("cache does not belong to this model's parameters")
        grads = {name: np.zeros_like(value) for name, value in p.items()}
        d_logits = np.asarray(d_logits, dtype=float)
        grads["fc.W"] += d_logits.T @ cache["h_n"]
        grads["fc.b"] += d_logits.sum(axis=0)
        dh = d_logits @ p["fc.W"]
        dc = np.zeros_like(dh)
        d_seq = [None] * len(cache["l"])
        for t in reversed(range(len(cache["l"]))):
            dh, dc, d_seq[t] = lstm_cell_backward(dh, dc, cache["l"][t], p["lstm.W_x"], p["lstm.W_h"], grads)
        if cache["q"]:
            dh = np.zeros_like(d_seq[0])
            dc = np.zeros_like(dh)
            for t in reversed(range(len(cache["q"]))):
                dh, dc, _ = qlstm_cell_backward(dh + d_seq[t], dc, cache["q"][t], p, grads)
        return grads

    def predict_logits(self, inputs, batch_size: int = 256) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=float)
        out = [self.forward(inputs[s:s + batch_size])[0] for s in range(0, inputs.shape[0], batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.config.n_classes))


# --- checkpoints ----------------------------------------------------------------


def save_checkpoint(path, model: HybridModel, scaler=None, codec=None, extra: dict | None = None) -> None:
    """Write a versioned .npz container: parameters, scaler, label order, hyperparameters."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "model": asdict(model.config),
        "labels": list(codec.labels) if codec is not None else None,
        "extra": extra or {},
    }
    arrays = {f"param:{k}": v for k, v in model.params.items()}
    if scaler is not None:
        arrays["scaler:means"] = scaler.means
        arrays["scaler:stds"] = scaler.stds
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Returns (model, scaler or None, codec or None, extra dict)."""
    from .preprocess import LabelCodec, Scaler

    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        params = {k[len("param:"):]: data[k].copy() for k in data.files if k.startswith("param:")}
        scaler = None
        if "scaler:means" in data.files:
            scaler = Scaler(data["scaler:means"].copy(), data["scaler:stds"].copy())
    model = HybridModel(ModelConfig(**meta["model"]), params)
    codec = LabelCodec(meta["labels"]) if meta["labels"] else None
    return model, scaler, codec, meta["extra"]

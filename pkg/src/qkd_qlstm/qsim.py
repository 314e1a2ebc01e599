"""A small statevector simulator for RY-embedded, strongly entangling circuits.

States are complex arrays whose last axis has length ``2**n``; any leading axes
are batch axes. Wire 0 is the most significant bit of the basis index, so
``|10>`` (wire 0 set) is index 2.

Gradients come in two flavours: adjoint mode (one forward sweep plus one
reverse sweep, used for training) and the parameter-shift rule (two circuit
evaluations per parameter, kept as a cross-check).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_QUBITS = 16


@dataclass(frozen=True)
class Rot:
    """RZ(gamma) @ RY(beta) @ RZ(alpha) on one wire."""

    wire: int
    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class RY:
    wire: int
    theta: float


@dataclass(frozen=True)
class RZ:
    wire: int
    theta: float


@dataclass(frozen=True)
class CNot:
    control: int
    target: int


def n_qubits_of(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim != 1 << n or n < 1:
        raise ValueError(f"state length {dim} is not a power of two >= 2")
    return n


def init_state(n: int) -> np.ndarray:
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"n must lie in [1, {MAX_QUBITS}], got {n}")
    state = np.zeros(1 << n, dtype=np.complex128)
    state[0] = 1.0
    return state


def norm(state: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(state) ** 2, axis=-1)


def _check_wire(wire: int, n: int):
    if not 0 <= wire < n:
        raise ValueError(f"wire {wire} out of range for {n} qubits")


def _split(state: np.ndarray, wire: int, n: int) -> np.ndarray:
    lead = state.shape[:-1]
    return state.reshape(lead + (1 << wire, 2, 1 << (n - wire - 1)))


def _param(theta, lead_ndim: int) -> np.ndarray:
    """Reshape a scalar or per-sample angle so it broadcasts over a split state."""
    theta = np.asarray(theta, dtype=float)
    return theta.reshape(theta.shape + (1,) * (lead_ndim - theta.ndim + 2))


def _apply_ry(state, wire, theta, n):
    s = _split(state, wire, n)
    t = _param(theta, state.ndim - 1) / 2.0
    c, si = np.cos(t), np.sin(t)
    s0, s1 = s[..., 0, :], s[..., 1, :]
    out = np.empty_like(s)
    out[..., 0, :] = c * s0 - si * s1
    out[..., 1, :] = si * s0 + c * s1
    return out.reshape(state.shape)


def _apply_rz(state, wire, theta, n):
    s = _split(state, wire, n)
    phase = np.exp(-0.5j * _param(theta, state.ndim - 1))
    out = np.empty_like(s)
    out[..., 0, :] = phase * s[..., 0, :]
    out[..., 1, :] = np.conj(phase) * s[..., 1, :]
    return out.reshape(state.shape)


def _apply_matrix(state, wire, u, n):
    """Apply 2x2 matrices ``u`` of shape (..., 2, 2) on ``wire``."""
    s = _split(state, wire, n)
    lead = state.ndim - 1
    u = np.asarray(u)
    u = u.reshape(u.shape[:-2] + (1,) * (lead - (u.ndim - 2)) + (2, 2))
    s0, s1 = s[..., 0, :], s[..., 1, :]
    out = np.empty_like(s)
    out[..., 0, :] = u[..., 0, 0, None, None] * s0 + u[..., 0, 1, None, None] * s1
    out[..., 1, :] = u[..., 1, 0, None, None] * s0 + u[..., 1, 1, None, None] * s1
    return out.reshape(state.shape)


@lru_cache(maxsize=None)
def _cnot_perm(n: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << n)
    cbit = 1 << (n - 1 - control)
    tbit = 1 << (n - 1 - target)
    return np.where(idx & cbit, idx ^ tbit, idx)


def _apply_cnot(state, control, target, n):
    return state[..., _cnot_perm(n, control, target)]


@lru_cache(maxsize=None)
def z_signs(n: int) -> np.ndarray:
    """[2**n x n] matrix of Z eigenvalues: +1 where bit i of the index is 0."""
    idx = np.arange(1 << n)
    bits = (idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    return 1.0 - 2.0 * bits


def rot_matrix(alpha, beta, gamma) -> np.ndarray:
    """RZ(gamma) RY(beta) RZ(alpha); broadcasts over array-valued angles."""
    alpha, beta, gamma = (np.asarray(a, dtype=float) for a in (alpha, beta, gamma))
    c, s = np.cos(beta / 2), np.sin(beta / 2)
    p, m = (alpha + gamma) / 2, (alpha - gamma) / 2
    u = np.empty(np.broadcast(alpha, beta, gamma).shape + (2, 2), dtype=np.complex128)
    u[..., 0, 0] = np.exp(-1j * p) * c
    u[..., 0, 1] = -np.exp(1j * m) * s
    u[..., 1, 0] = np.exp(-1j * m) * s
    u[..., 1, 1] = np.exp(1j * p) * c
    return u


def apply_gate(state: np.ndarray, gate) -> np.ndarray:
    n = n_qubits_of(state)
    if isinstance(gate, CNot):
        _check_wire(gate.control, n)
        _check_wire(gate.target, n)
        if gate.control == gate.target:
            raise ValueError("CNOT control and target must differ")
        return _apply_cnot(state, gate.control, gate.target, n)
    _check_wire(gate.wire, n)
    if isinstance(gate, Rot):
        return _apply_matrix(state, gate.wire, rot_matrix(gate.alpha, gate.beta, gate.gamma), n)
    if isinstance(gate, RY):
        return _apply_ry(state, gate.wire, gate.theta, n)
    if isinstance(gate, RZ):
        return _apply_rz(state, gate.wire, gate.theta, n)
    raise TypeError(f"unsupported gate {gate!r}")


def angle_embed(state: np.ndarray, x) -> np.ndarray:
    """RY(x_i) on wire i."""
    n = n_qubits_of(state)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ValueError(f"expected {n} angles, got {x.shape[-1]}")
    for i in range(n):
        state = _apply_ry(state, i, x[..., i], n)
    return state


def product_state(x) -> np.ndarray:
    """``angle_embed(init_state(n), x)`` built directly as a Kronecker product."""
    x = np.asarray(x, dtype=float)
    half = x / 2.0
    factors = np.stack([np.cos(half), np.sin(half)], axis=-1)  # (..., n, 2)
    state = factors[..., 0, :]
    for i in range(1, x.shape[-1]):
        state = (state[..., :, None] * factors[..., i, None, :]).reshape(x.shape[:-1] + (-1,))
    return state.astype(np.complex128)


def entangler_pairs(n: int) -> list[tuple[int, int]]:
    """Ring of CNOTs with range 1; a single wire has no entanglers."""
    if n == 1:
        return []
    return [(i, (i + 1) % n) for i in range(n)]


def _check_weights(weights: np.ndarray, n: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if weights.ndim < 3 or weights.shape[-2:] != (n, 3):
        raise ValueError(f"weights must have shape [..., L, {n}, 3], got {weights.shape}")
    return weights


def strongly_entangling(state: np.ndarray, weights) -> np.ndarray:
    """Per layer: Rot on every wire, then the CNOT ring.

    ``weights`` has shape [L, n, 3] or, for a batch of states, [B, L, n, 3].
    """
    n = n_qubits_of(state)
    weights = _check_weights(weights, n)
    pairs = entangler_pairs(n)
    for layer in range(weights.shape[-3]):
        w = weights[..., layer, :, :]
        for i in range(n):
            u = rot_matrix(w[..., i, 0], w[..., i, 1], w[..., i, 2])
            state = _apply_matrix(state, i, u, n)
        for c, t in pairs:
            state = _apply_cnot(state, c, t, n)
    return state


def expval_z_all(state: np.ndarray) -> np.ndarray:
    """<Z_i> for every wire; shape (..., n)."""
    n = n_qubits_of(state)
    return (np.abs(state) ** 2) @ z_signs(n)


def _final_state(x, weights):
    return strongly_entangling(product_state(x), weights)


def vqc_eval(x, weights) -> np.ndarray:
    """Embed ``x``, apply the entangling layers, return every <Z_i>.

    Accepts a single sample (x: [n], weights: [L, n, 3]) or a batch
    (x: [B, n] with shared weights [L, n, 3] or per-sample weights [B, L, n, 3]).
    """
    x = np.asarray(x, dtype=float)
    _check_weights(weights, x.shape[-1])
    return expval_z_all(_final_state(x, weights))


def _adjoint(x, weights, obs):
    """Reverse sweep for observables sum_i obs[..., k, i] Z_i.

    x: (B, n); weights: (L, n, 3) or (B, L, n, 3); obs: (B, K, n).
    Returns d/dx with shape (B, K, n) and d/dweights with shape (B, K, L, n, 3).
    """
    n = x.shape[-1]
    weights = _check_weights(weights, n)
    n_layers = weights.shape[-3]
    batch, k_obs = obs.shape[:2]
    pairs = entangler_pairs(n)

    phi = _final_state(x, weights)                                 # (B, D)
    lam = phi[:, None, :] * (obs @ z_signs(n).T)                   # (B, K, D)
    phi = np.broadcast_to(phi[:, None, :], lam.shape).copy()

    def angle(a):
        a = np.asarray(a)
        return a if a.ndim == 0 else a[:, None]

    def d_rz(wire):
        s_l, s_p = _split(lam, wire, n), _split(phi, wire, n)
        inner = (np.conj(s_l[..., 0, :]) * s_p[..., 0, :]).sum(axis=(-2, -1)) \
            - (np.conj(s_l[..., 1, :]) * s_p[..., 1, :]).sum(axis=(-2, -1))
        return inner.imag

    def d_ry(wire):
        s_l, s_p = _split(lam, wire, n), _split(phi, wire, n)
        # Y|p> = (-i p1, i p0)
        inner = -1j * (np.conj(s_l[..., 0, :]) * s_p[..., 1, :]).sum(axis=(-2, -1)) \
            + 1j * (np.conj(s_l[..., 1, :]) * s_p[..., 0, :]).sum(axis=(-2, -1))
        return inner.imag

    d_w = np.zeros((batch, k_obs, n_layers, n, 3))
    d_x = np.zeros((batch, k_obs, n))
    for layer in reversed(range(n_layers)):
        for c, t in reversed(pairs):
            phi = _apply_cnot(phi, c, t, n)
            lam = _apply_cnot(lam, c, t, n)
        w = weights[..., layer, :, :]
        for i in reversed(range(n)):
            # Rot = RZ(gamma) RY(beta) RZ(alpha): undo gamma, then beta, then alpha
            for j, kind in ((2, "z"), (1, "y"), (0, "z")):
                theta = angle(w[..., i, j])
                if kind == "z":
                    d_w[:, :, layer, i, j] = d_rz(i)
                    phi = _apply_rz(phi, i, -theta, n)
                    lam = _apply_rz(lam, i, -theta, n)
                else:
                    d_w[:, :, layer, i, j] = d_ry(i)
                    phi = _apply_ry(phi, i, -theta, n)
                    lam = _apply_ry(lam, i, -theta, n)
    for i in reversed(range(n)):
        d_x[:, :, i] = d_ry(i)
        theta = x[:, i][:, None]
        phi = _apply_ry(phi, i, -theta, n)
        lam = _apply_ry(lam, i, -theta, n)
    return d_x, d_w


def vqc_vjp(x, weights, upstream):
    """Vector-Jacobian product of a batched ``vqc_eval``.

    Args:
        x: embedding angles, shape (B, n).
        weights: shared (L, n, 3) or per-sample (B, L, n, 3).
        upstream: dLoss/d<Z_i>, shape (B, n).

    Returns:
        (dLoss/dx with shape (B, n), dLoss/dweights with the shape of ``weights``).
    """
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    d_x, d_w = _adjoint(x, weights, upstream[:, None, :])
    d_w = d_w[:, 0]
    if weights.ndim == 3:
        d_w = d_w.sum(axis=0)
    return d_x[:, 0], d_w


def vqc_grad(x, weights, method: str = "adjoint"):
    """Full Jacobians of a single circuit.

    Returns:
        (d<Z>/dx with shape [n, n], d<Z>/dweights with shape [n, L, n, 3]);
        row i is the gradient of output <Z_i>.
    """
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = x.shape[-1]
    _check_weights(weights, n)
    if method == "adjoint":
        d_x, d_w = _adjoint(x[None, :], weights, np.eye(n)[None])
        return d_x[0], d_w[0]
    if method == "parameter-shift":
        return _parameter_shift(x, weights)
    raise ValueError(f"unknown gradient method {method!r}")


def _parameter_shift(x, weights):
    shift = np.pi / 2
    n = x.size
    d_x = np.zeros((n, n))
    for i in range(n):
        xp, xm = x.copy(), x.copy()
        xp[i] += shift
        xm[i] -= shift
        d_x[:, i] = (vqc_eval(xp, weights) - vqc_eval(xm, weights)) / 2
    d_w = np.zeros((n,) + weights.shape)
    for idx in np.ndindex(weights.shape):
        wp, wm = weights.copy(), weights.copy()
        wp[idx] += shift
        wm[idx] -= shift
        d_w[(slice(None),) + idx] = (vqc_eval(x, wp) - vqc_eval(x, wm)) / 2
    return d_x, d_w

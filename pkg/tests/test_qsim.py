from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qkd_qlstm import qsim

I2 = np.eye(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
P0 = np.diag([1.0, 0.0])
P1 = np.diag([0.0, 1.0])
Z = np.diag([1.0, -1.0])


def ry(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(t):
    return np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])


def on_wire(u, wire, n):
    return reduce(np.kron, [u if k == wire else I2 for k in range(n)])


def cnot_dense(c, t, n):
    a = reduce(np.kron, [P0 if k == c else I2 for k in range(n)])
    b = reduce(np.kron, [P1 if k == c else (X if k == t else I2) for k in range(n)])
    return a + b


def dense_vqc(x, w):
    """Kronecker-product reference for the embedded, strongly entangling circuit."""
    n = len(x)
    psi = np.zeros(2 ** n, dtype=complex)
    psi[0] = 1
    for i in range(n):
        psi = on_wire(ry(x[i]), i, n) @ psi
    for layer in w:
        for i, (a, b, g) in enumerate(layer):
            psi = on_wire(rz(g) @ ry(b) @ rz(a), i, n) @ psi
        if n > 1:
            for i in range(n):
                psi = cnot_dense(i, (i + 1) % n, n) @ psi
    return np.array([np.real(psi.conj() @ on_wire(Z, i, n) @ psi) for i in range(n)])


def test_matches_dense_oracle_on_random_instances():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 5))
        layers = int(rng.integers(1, 3))
        x = rng.uniform(-np.pi, np.pi, n)
        w = rng.uniform(0, 2 * np.pi, (layers, n, 3))
        worst = max(worst, np.abs(qsim.vqc_eval(x, w) - dense_vqc(x, w)).max())
    assert worst < 1e-10


def test_wire_zero_is_most_significant():
    s = qsim.apply_gate(qsim.init_state(2), qsim.RY(0, np.pi))
    assert np.isclose(abs(s[2]), 1.0)
    s = qsim.apply_gate(s, qsim.CNot(0, 1))
    assert np.isclose(abs(s[3]), 1.0)


def test_norm_preserved_over_many_gates():
    rng = np.random.default_rng(1)
    n = 4
    s = qsim.init_state(n)
    for _ in range(1000):
        kind = rng.integers(4)
        w = int(rng.integers(n))
        if kind == 0:
            g = qsim.RY(w, rng.normal())
        elif kind == 1:
            g = qsim.RZ(w, rng.normal())
        elif kind == 2:
            g = qsim.Rot(w, *rng.normal(size=3))
        else:
            g = qsim.CNot(w, (w + 1 + int(rng.integers(n - 1))) % n)
        s = qsim.apply_gate(s, g)
    assert abs(np.linalg.norm(s) - 1.0) < 1e-10


def test_single_qubit_closed_forms():
    for theta in np.linspace(-3, 3, 13):
        w = np.zeros((1, 1, 3))
        assert abs(qsim.vqc_eval([theta], w)[0] - np.cos(theta)) < 1e-10
        d_x, _ = qsim.vqc_grad(np.array([theta]), w)
        assert abs(d_x[0, 0] + np.sin(theta)) < 1e-10


@given(st.integers(1, 4), st.integers(1, 2), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_adjoint_matches_parameter_shift(n, layers, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-np.pi, np.pi, n)
    w = rng.uniform(0, 2 * np.pi, (layers, n, 3))
    ax, aw = qsim.vqc_grad(x, w, "adjoint")
    px, pw = qsim.vqc_grad(x, w, "parameter-shift")
    assert np.abs(ax - px).max() < 1e-9
    assert np.abs(aw - pw).max() < 1e-9


def test_vjp_contracts_the_jacobian():
    rng = np.random.default_rng(2)
    n, layers, batch = 3, 2, 4
    x = rng.uniform(-1, 1, (batch, n))
    w_shared = rng.uniform(0, 6, (layers, n, 3))
    w_per = rng.uniform(0, 6, (batch, layers, n, 3))
    up = rng.normal(size=(batch, n))
    dx, dw = qsim.vqc_vjp(x, w_shared, up)
    dx2, dw2 = qsim.vqc_vjp(x, w_per, up)
    acc_w = np.zeros_like(w_shared)
    for b in range(batch):
        jx, jw = qsim.vqc_grad(x[b], w_shared)
        assert np.allclose(dx[b], up[b] @ jx, atol=1e-12)
        acc_w += np.tensordot(up[b], jw, axes=1)
        jx, jw = qsim.vqc_grad(x[b], w_per[b])
        assert np.allclose(dx2[b], up[b] @ jx, atol=1e-12)
        assert np.allclose(dw2[b], np.tensordot(up[b], jw, axes=1), atol=1e-12)
    assert np.allclose(dw, acc_w, atol=1e-12)


def test_batched_and_per_sample_weights_agree():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (5, 3))
    w = rng.uniform(0, 6, (1, 3, 3))
    batched = qsim.vqc_eval(x, w)
    per = qsim.vqc_eval(x, np.broadcast_to(w, (5, 1, 3, 3)))
    single = np.stack([qsim.vqc_eval(xi, w) for xi in x])
    assert np.allclose(batched, single) and np.allclose(per, single)


def test_product_state_equals_gate_embedding():
    x = np.array([0.3, -1.2, 2.0])
    assert np.allclose(qsim.product_state(x), qsim.angle_embed(qsim.init_state(3), x))


def test_entangler_ring():
    assert qsim.entangler_pairs(1) == []
    assert qsim.entangler_pairs(3) == [(0, 1), (1, 2), (2, 0)]


def test_input_validation():
    with pytest.raises(ValueError):
        qsim.init_state(0)
    with pytest.raises(ValueError):
        qsim.init_state(qsim.MAX_QUBITS + 1)
    s = qsim.init_state(2)
    with pytest.raises(ValueError):
        qsim.apply_gate(s, qsim.RY(2, 0.1))
    with pytest.raises(ValueError):
        qsim.apply_gate(s, qsim.CNot(1, 1))
    with pytest.raises(ValueError):
        qsim.vqc_eval(np.zeros(2), np.zeros((1, 3, 3)))
    with pytest.raises(ValueError):
        qsim.vqc_grad(np.zeros(2), np.zeros((1, 2, 3)), "finite")

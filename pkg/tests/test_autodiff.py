import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bgnn_beam import autodiff as ad
from bgnn_beam.autodiff import ComplexPair, Tape, Tensor
from bgnn_beam.errors import ContractError, NumericError, ShapeError, SingularMatrixError

from conftest import central_diff, rel_err, tape_grad


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
    assert tape.gradient(y, [x])[0] == pytest.approx(6.0)


def test_sigmoid_gradient_at_zero():
    x = Tensor(0.0, requires_grad=True)
    with Tape() as tape:
        y = ad.sigmoid(x)
    assert y.item() == 0.5
    assert tape.gradient(y, [x])[0] == pytest.approx(0.25)


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([0.0, 1.0, -1.0], requires_grad=True)
    with Tape() as tape:
        y = ad.sum(ad.relu(x))
    np.testing.assert_array_equal(tape.gradient(y, [x])[0], [0.0, 1.0, 0.0])


def test_unreachable_leaf_gets_exact_zero():
    x = Tensor([1.0, 2.0], requires_grad=True)
    z = Tensor([[5.0]], requires_grad=True)
    with Tape() as tape:
        y = ad.sum(x * x)
    gx, gz = tape.gradient(y, [x, z])
    np.testing.assert_array_equal(gz, np.zeros((1, 1)))
    np.testing.assert_allclose(gx, [2.0, 4.0])


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        tape.gradient(y, [x])


def test_nan_is_an_error():
    with pytest.raises(NumericError):
        Tensor([np.nan])
    x = Tensor([0.0], requires_grad=True)
    with Tape():
        with pytest.raises(NumericError):
            ad.log(x)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_tape_visits_in_topological_order():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        a = x * 3.0
        b = a + x
        c = ad.tanh(b)
    ids = [rec[0].node_id for rec in tape.records]
    assert ids == sorted(ids) == list(range(len(tape)))
    for out, parents, _ in tape.records:
        for p in parents:
            if p.node_id is not None:
                assert p.node_id < out.node_id
    assert c.node_id == len(tape) - 1


def test_no_recording_without_tape_or_grad():
    x = Tensor(2.0)
    with Tape() as tape:
        _ = x * x
    assert len(tape) == 0
    y = Tensor(1.0, requires_grad=True)
    assert not (y * y).requires_grad


# Each primitive against central differences on random inputs in [-2, 2].
UNARY = {
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "square": ad.square,
    "neg": ad.neg,
    "log": lambda x: ad.log(x * x + 0.5),
    "sqrt": lambda x: ad.sqrt(x * x + 0.5),
    "relu": lambda x: ad.relu(x),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitives_match_finite_differences(name, rng):
    op = UNARY[name]
    x = rng.uniform(-2, 2, size=(3, 4))
    if name == "relu":
        x[np.abs(x) < 1e-3] = 0.5
    f = lambda v: ad.sum(op(v) * np.arange(1, 13).reshape(3, 4))
    num = central_diff(lambda v: f(Tensor(v)).item(), x)
    assert rel_err(tape_grad(f, x), num) <= 1e-4


BINARY = {
    "add": ad.add, "sub": ad.sub, "mul": ad.mul,
    "div": lambda a, b: ad.div(a, b * b + 1.0),
    "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitives_match_finite_differences(name, rng):
    op = BINARY[name]
    a = rng.uniform(-2, 2, size=(3, 4))
    b = rng.uniform(-2, 2, size=(3, 4))
    w = rng.uniform(-2, 2, size=op(Tensor(a), Tensor(b)).shape)
    fa = lambda v: ad.sum(op(v, Tensor(b)) * w)
    fb = lambda v: ad.sum(op(Tensor(a), v) * w)
    assert rel_err(tape_grad(fa, a), central_diff(lambda v: fa(Tensor(v)).item(), a)) <= 1e-4
    assert rel_err(tape_grad(fb, b), central_diff(lambda v: fb(Tensor(v)).item(), b)) <= 1e-4


def test_broadcasting_gradients_reduce(rng):
    a = rng.uniform(-2, 2, size=(2, 3, 4))
    b = rng.uniform(-2, 2, size=(1, 4))
    f = lambda v: ad.sum(ad.tanh(Tensor(a) * v + v))
    assert rel_err(tape_grad(f, b), central_diff(lambda v: f(Tensor(v)).item(), b)) <= 1e-4


def test_structural_ops(rng):
    x = rng.uniform(-2, 2, size=(2, 3, 4))
    w = rng.uniform(-2, 2, size=(4, 3, 2))

    def f(v):
        y = ad.transpose(v, (2, 1, 0))
        y = ad.concat([y, ad.swapaxes(ad.reshape(v, (4, 3, 2)), 0, 0)], axis=0)
        y = y[:4] * w + ad.broadcast_to(ad.sum(v, axis=0, keepdims=True)[0:1, :, 0:1], (1, 3, 1))
        return ad.sum(ad.square(y)) + ad.sum(ad.minimum(v, axis=1))

    assert rel_err(tape_grad(f, x), central_diff(lambda v: f(Tensor(v)).item(), x)) <= 1e-4


def test_solve_adjoint_matches_finite_differences(rng):
    R = rng.uniform(-1, 1, size=(2, 4, 4))
    A0 = R @ np.swapaxes(R, 1, 2) + 4 * np.eye(4)
    B0 = rng.uniform(-2, 2, size=(2, 4, 3))
    W = rng.uniform(-1, 1, size=(2, 4, 3))

    def fa(v):  # perturb A symmetrically so it stays SPD
        return ad.sum(ad.solve(v + ad.swapaxes(v, -1, -2), Tensor(B0)) * W)

    A_half = A0 / 2
    assert rel_err(tape_grad(fa, A_half), central_diff(lambda v: fa(Tensor(v)).item(), A_half)) <= 1e-4
    fb = lambda v: ad.sum(ad.solve(Tensor(A0), v) * W)
    assert rel_err(tape_grad(fb, B0), central_diff(lambda v: fb(Tensor(v)).item(), B0)) <= 1e-4


def test_solve_rejects_indefinite():
    with pytest.raises(SingularMatrixError):
        ad.solve(Tensor(np.diag([1.0, -1.0])), Tensor(np.ones((2, 1))))


def test_complex_pair_arithmetic(rng):
    a = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    b = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    A, B = ComplexPair.from_complex(a), ComplexPair.from_complex(b)
    np.testing.assert_allclose((A @ B).numpy(), a @ b)
    np.testing.assert_allclose(A.herm().numpy(), a.conj().T)
    np.testing.assert_allclose((A * A).numpy(), a * a)
    np.testing.assert_allclose(A.abs2().values, np.abs(a) ** 2)
    np.testing.assert_allclose(A.conj().numpy(), a.conj())


def test_replay_is_bit_identical():
    def run():
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((5, 5)), requires_grad=True)
        with Tape() as tape:
            y = ad.sum(ad.tanh(x @ x) * ad.sigmoid(x))
        return y.values.tobytes(), tape.gradient(y, [x])[0].tobytes()

    assert run() == run()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3,), elements=st.floats(-2, 2)))
def test_tanh_chain_property(x):
    f = lambda v: ad.sum(ad.tanh(v * 1.5) * ad.sigmoid(v))
    num = central_diff(lambda v: f(Tensor(v)).item(), x)
    assert np.allclose(tape_grad(f, x), num, rtol=1e-4, atol=1e-8)

import contextlib
from dataclasses import dataclass

import numpy as np
import pytest

from bgnn_beam import nn

from bgnn_beam.autodiff import Tape, Tensor
from bgnn_beam.training import objective, objective_and_grad


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f`` at every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def tape_grad(f, x: np.ndarray) -> np.ndarray:
    t = Tensor(x, requires_grad=True)
    with Tape() as tape:
        y = f(t)
    return tape.gradient(y, [t])[0]


def rel_err(a, b, floor: float = 1e-7) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def random_channel(rng, K, N, scale=1.0):
    return scale * (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / np.sqrt(2)


# central differences at h = 1e-5 balance rounding (eps |F| / h, about 1e-10 at
# |F| ~ 10) against truncation; relative errors are measured against
# max(|analytic|, |numeric|, GRAD_FLOOR)
GRAD_FLOOR = 1e-5


@contextlib.contextmanager
def relu_pattern():
    """Record the sign pattern of every relu input evaluated inside the block."""
    signs = []
    relu = nn.ACTIVATIONS["relu"]

    def recording(x):
        signs.append(np.asarray(x.values > 0).tobytes())
        return relu(x)

    nn.ACTIVATIONS["relu"] = recording
    try:
        yield signs
    finally:
        nn.ACTIVATIONS["relu"] = relu


@dataclass
class FdResult:
    worst: float           # worst floored relative error over the checked entries
    checked: int
    kinked: int            # entries skipped because the stencil straddles a relu kink


def fd_check(params, batch, b0s, rng, n_params=50, h=1e-5) -> FdResult:
    """Compare tape gradients with central differences at random parameter entries.

    An entry whose +-h stencil flips the sign of any relu input sits on a kink
    where the objective has no derivative; it is skipped and another is drawn.
    """
    _, grads = objective_and_grad(params, batch, b0s)
    plist = params.parameters()
    sizes = np.array([p.size for p in plist])
    ends = np.cumsum(sizes)
    worst, checked, kinked = 0.0, 0, 0

    def shifted(p, vals, j, d):
        vals[j] = d
        p.values = vals.reshape(p.shape)
        with relu_pattern() as signs:
            f = objective(params, batch, b0s)
        return f, signs

    for flat in rng.permutation(ends[-1]):
        if checked == n_params:
            break
        i = int(np.searchsorted(ends, flat, side="right"))
        j = flat - (ends[i] - sizes[i])
        p = plist[i]
        base = p.values
        vals = base.reshape(-1).copy()
        x0 = vals[j]
        fp, sp = shifted(p, vals, j, x0 + h)
        fm, sm = shifted(p, vals, j, x0 - h)
        p.values = base
        if sp != sm:
            kinked += 1
            continue
        num = (fp - fm) / (2 * h)
        ana = grads[i].reshape(-1)[j]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), GRAD_FLOOR))
        checked += 1
    return FdResult(worst, checked, kinked)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest

from bgnn_beam import baselines as bl
from bgnn_beam import beamcore as bc
from bgnn_beam.channels import BipartiteChannel, ScenarioConfig, sample_fixed
from bgnn_beam.errors import ContractError, InfeasibleError, ShapeError

from conftest import random_channel
from oracles import grid_optimum, mrt_power_grid

P10 = 10.0


def total_power(V):
    return float(np.sum(np.abs(V) ** 2))


def test_wmmse_single_user(rng):
    H = random_channel(rng, 1, 3)
    res = bl.wmmse(H, P10)
    assert res.utility == pytest.approx(np.log2(1 + P10 * np.sum(np.abs(H) ** 2)), rel=1e-9)
    d = res.V[:, 0] / np.linalg.norm(res.V[:, 0])
    assert abs(np.vdot(d, H[0].conj() / np.linalg.norm(H[0]))) == pytest.approx(1, abs=1e-9)


def test_wmmse_monotone_on_100_instances():
    rng = np.random.default_rng(11)
    cfg = ScenarioConfig()
    for _ in range(100):
        N, K = rng.integers(1, 6, size=2)
        inst = sample_fixed(cfg, int(N), int(K), rng)
        res = bl.wmmse(inst.H, inst.power, max_iter=100)
        assert np.all(np.diff(res.history) >= -1e-10)
        assert total_power(res.V) == pytest.approx(inst.power, rel=1e-6)
        assert res.iterations <= 100


@pytest.mark.parametrize("seed", range(5))
def test_wmmse_matches_grid_oracle(seed):
    H = random_channel(np.random.default_rng(200 + seed), 2, 2)
    assert bl.wmmse(H, P10).utility >= 0.97 * grid_optimum(H, P10)


def test_wmmse_reports_non_convergence(rng):
    res = bl.wmmse(random_channel(rng, 4, 4), 316.0, tol=0.0, max_iter=3)
    assert not res.converged and res.iterations == 3


def test_water_filling():
    np.testing.assert_allclose(bl.water_filling(np.ones(4), 8.0), 2.0)
    p = bl.water_filling(np.array([10.0, 1.0, 0.01]), 1.0)
    assert p.sum() == pytest.approx(1.0) and p[2] == 0 and p[0] > p[1]
    # level property: active channels share the same water level
    g = np.array([3.0, 2.0, 0.5])
    p = bl.water_filling(g, 2.0)
    act = p > 0
    lv = p[act] + 1 / g[act]
    np.testing.assert_allclose(lv, lv[0])
    assert np.all(1 / g[~act] >= lv[0])
    with pytest.raises(ContractError):
        bl.water_filling(np.array([1.0, 0.0]), 1.0)


def test_zf_properties(rng):
    for N, K in ((4, 2), (3, 3), (6, 4)):
        H = random_channel(rng, K, N)
        res = bl.zf_waterfill(H, P10)
        G = np.abs(H @ res.V)
        norms = np.linalg.norm(H, axis=1)[:, None] * np.linalg.norm(res.V, axis=0)[None, :]
        off = ~np.eye(K, dtype=bool)
        assert np.all(G[off] <= 1e-9 * np.maximum(norms[off], 1e-300))
        assert np.all(G[off] <= 1e-9)
        assert total_power(res.V) == pytest.approx(P10, rel=1e-9)
    with pytest.raises(InfeasibleError):
        bl.zf_waterfill(random_channel(rng, 3, 2), P10)


def test_zf_reduces_to_mrt(rng):
    H = random_channel(rng, 1, 4)
    np.testing.assert_allclose(bl.zf_waterfill(H, P10).utility, bl.mrt_power(H, P10).utility,
                               rtol=1e-12)
    Q, _ = np.linalg.qr(random_channel(rng, 3, 3))
    Hq = Q * np.array([1.0, 2.0, 0.5])[:, None]           # orthogonal rows
    np.testing.assert_allclose(np.abs(bl.zf_directions(Hq)),
                               np.abs(Hq.conj().T / np.linalg.norm(Hq, axis=1)), atol=1e-12)


def test_mrt_power_examples(rng):
    H = random_channel(rng, 1, 3)
    res = bl.mrt_power(H, P10)
    assert total_power(res.V) == pytest.approx(P10, rel=1e-9)
    # orthogonal users of equal strength: sum rate splits power evenly
    h = np.array([1.0 + 0.5j, 0.3 - 1.0j])
    h2 = np.array([-np.conj(h[1]), np.conj(h[0])])
    res = bl.mrt_power(np.stack([h, h2]), P10)
    p = np.linalg.norm(res.V, axis=0) ** 2
    assert p[0] == pytest.approx(p[1], rel=1e-6)
    # correlated users of equal strength: max-min also splits evenly
    h2 = h.copy()
    h2[1] *= -1
    res = bl.mrt_power(np.stack([h, h2]), P10, mode="min")
    p = np.linalg.norm(res.V, axis=0) ** 2
    assert p[0] == pytest.approx(p[1], rel=1e-3)


@pytest.mark.parametrize("mode", ["sum", "min"])
@pytest.mark.parametrize("seed", range(4))
def test_mrt_power_matches_simplex_grid(mode, seed):
    H = random_channel(np.random.default_rng(300 + seed), 2, 3)
    assert bl.mrt_power(H, P10, mode=mode).utility >= 0.99 * mrt_power_grid(H, P10, mode)


def test_project_simplex():
    x = bl.project_simplex(np.array([0.5, 2.0, -1.0]), 1.0)
    assert x.sum() == pytest.approx(1.0) and np.all(x >= 0)
    np.testing.assert_allclose(bl.project_simplex(np.array([0.2, 0.8]), 1.0), [0.2, 0.8])


def test_optimal_minrate_single_user(rng):
    H = random_channel(rng, 1, 3)
    res = bl.optimal_minrate(H, P10)
    assert res.utility == pytest.approx(np.log2(1 + P10 * np.sum(np.abs(H) ** 2)), rel=1e-9)
    assert total_power(res.V) == pytest.approx(P10, rel=1e-9)


def test_optimal_minrate_symmetric_pair(rng):
    h = random_channel(rng, 1, 2)[0]
    h2 = h.copy()
    h2[1] *= -1
    res = bl.optimal_minrate(np.stack([h, h2]), P10)
    assert res.rates[0] == pytest.approx(res.rates[1], rel=1e-6)
    p = np.linalg.norm(res.V, axis=0) ** 2
    assert p[0] == pytest.approx(p[1], rel=1e-6)


@pytest.mark.parametrize("seed", range(8))
def test_optimal_minrate_balances_sinr(seed):
    rng = np.random.default_rng(400 + seed)
    K, N = int(rng.integers(2, 6)), int(rng.integers(1, 6))
    H = random_channel(rng, K, N)
    res = bl.optimal_minrate(H, P10)
    assert res.converged
    sinr = bc.downlink_sinr(H, res.V)
    assert np.ptp(sinr) <= 1e-6 * sinr.max()
    assert total_power(res.V) == pytest.approx(P10, rel=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_optimal_minrate_beats_grid(seed):
    H = random_channel(np.random.default_rng(500 + seed), 2, 2)
    assert bl.optimal_minrate(H, P10).utility >= grid_optimum(H, P10, "min") - 1e-9


def test_optimal_minrate_beats_other_schemes():
    rng = np.random.default_rng(7)
    for _ in range(10):
        H = random_channel(rng, 3, 3)
        opt = bl.optimal_minrate(H, P10).utility
        assert opt >= bl.mrt_power(H, P10, mode="min").utility - 1e-9
        assert opt >= bc.utility(bl.wmmse(H, P10).rates, "min") - 1e-9


def test_matched_width():
    w = bl.matched_width(32, 8, 130_812)
    n = lambda w: 32 * w + w + w * w + w + w * 8 + 8
    assert abs(n(w) - 130_812) <= abs(n(w + 1) - 130_812)
    assert abs(n(w) - 130_812) <= abs(n(w - 1) - 130_812)


@pytest.mark.parametrize("mode", ["sum", "min"])
def test_naive_dnn_fixed_shape(mode):
    sc = ScenarioConfig()
    model = bl.naive_dnn_train(4, 4, sc, mode, param_budget=2000, epochs=1, batches=2,
                               batch_size=8, seed=1)
    assert abs(model.net.num_parameters() - 2000) < 200
    rng = np.random.default_rng(0)
    insts = [sample_fixed(sc, 4, 4, rng) for _ in range(3)]
    u = bl.naive_dnn_eval(model, insts)
    assert u.shape == (3,) and np.all(u > 0)
    for inst in insts:
        assert total_power(model.solve(inst).V) == pytest.approx(inst.power, rel=1e-9)
    with pytest.raises(ShapeError):
        model.solve(sample_fixed(sc, 6, 6, rng))


def test_naive_dnn_training_is_deterministic():
    sc = ScenarioConfig()
    a = bl.naive_dnn_train(2, 2, sc, param_budget=500, epochs=1, batches=2, batch_size=4, seed=3)
    b = bl.naive_dnn_train(2, 2, sc, param_budget=500, epochs=1, batches=2, batch_size=4, seed=3)
    for x, y in zip(a.net.parameters(), b.net.parameters()):
        assert x.values.tobytes() == y.values.tobytes()


def test_all_baselines_respect_power(rng):
    inst = BipartiteChannel(random_channel(rng, 3, 4), 31.6)
    for res in (bl.wmmse(inst.H, inst.power), bl.zf_waterfill(inst.H, inst.power),
                bl.mrt_power(inst.H, inst.power), bl.optimal_minrate(inst.H, inst.power)):
        assert total_power(res.V) == pytest.approx(inst.power, rel=1e-6)
        assert np.all(res.rates >= 0)

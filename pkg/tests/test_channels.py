import io

import numpy as np
import pytest
from scipy import stats

from bgnn_beam.channels import (BipartiteChannel, ScenarioConfig, complex_gaussian, pathloss,
                                read_instance, read_instances, sample_fixed, sample_instance,
                                stream, uniform_disk, write_instance)
from bgnn_beam.errors import (ConfigError, ContractError, InvalidInstanceError, ShapeError)


def test_pathloss_at_reference_distance():
    assert pathloss(30.0, 30.0, 3.0) == 0.5


def test_sizes_within_maxima():
    cfg = ScenarioConfig(max_antennas=8, max_users=8)
    rng = np.random.default_rng(0)
    seen_n, seen_k = set(), set()
    for _ in range(400):
        inst = sample_instance(cfg, rng)
        assert 1 <= inst.N <= 8 and 1 <= inst.K <= 8
        assert inst.H.shape == (inst.K, inst.N)
        seen_n.add(inst.N)
        seen_k.add(inst.K)
    assert seen_n == seen_k == set(range(1, 9))


def test_training_floor():
    cfg = ScenarioConfig(min_antennas=2, min_users=2)
    rng = np.random.default_rng(1)
    assert all(min(sample_instance(cfg, rng).H.shape) >= 2 for _ in range(200))


def test_complex_gaussian_variance_at_fixed_distance():
    rng = np.random.default_rng(2)
    rho = float(pathloss(45.0))
    z = complex_gaussian(rng, 100_000, rho)
    assert np.mean(np.abs(z) ** 2) == pytest.approx(rho, rel=0.02)
    assert np.var(z.real) == pytest.approx(rho / 2, rel=0.02)
    assert np.var(z.imag) == pytest.approx(rho / 2, rel=0.02)


def test_user_drop_radial_distribution():
    rng = np.random.default_rng(3)
    R = 100.0
    r = np.linalg.norm(uniform_disk(rng, 10_000, R), axis=1)
    assert stats.kstest(r, lambda x: np.clip(x / R, 0, 1) ** 2).pvalue > 0.01


def test_cellfree_gain_is_scaled_unit_gaussian():
    cfg = ScenarioConfig(layout="cellfree")
    rng = np.random.default_rng(4)
    H = np.concatenate([sample_fixed(cfg, 3, 2, rng).H.ravel() for _ in range(2000)])
    # amplitude is pathloss times a unit-variance gaussian, bounded by the best case
    assert np.all(np.isfinite(H))
    rho_max = float(pathloss(0.0))
    assert np.mean(np.abs(H) ** 2) < rho_max


def test_fixed_sizes_and_large_probe():
    cfg = ScenarioConfig(max_antennas=8, max_users=8)
    rng = np.random.default_rng(5)
    assert sample_fixed(cfg, 15, 15, rng).H.shape == (15, 15)
    assert sample_fixed(cfg, 1, 1, rng).H.shape == (1, 1)
    with pytest.raises(ContractError):
        sample_fixed(cfg, 0, 2, rng)


def test_seed_determinism_and_distinct_streams():
    cfg = ScenarioConfig()
    a = sample_fixed(cfg, 4, 3, stream(7, 1)).H
    b = sample_fixed(cfg, 4, 3, stream(7, 1)).H
    c = sample_fixed(cfg, 4, 3, stream(7, 2)).H
    d = sample_fixed(cfg, 4, 3, stream(8, 1)).H
    assert a.tobytes() == b.tobytes()
    assert not np.allclose(a, c) and not np.allclose(a, d)


@pytest.mark.parametrize("layout", ["colocated", "cellfree"])
def test_text_record_roundtrip_is_exact(layout):
    inst = sample_fixed(ScenarioConfig(layout=layout, snr_db=17.3), 3, 5, np.random.default_rng(6))
    buf = io.StringIO()
    write_instance(buf, inst)
    back = read_instance(io.StringIO(buf.getvalue()))
    assert back.H.tobytes() == inst.H.tobytes()
    assert back.power == inst.power and back.noise_var == inst.noise_var


def test_concatenated_records():
    rng = np.random.default_rng(8)
    insts = [sample_fixed(ScenarioConfig(), n, 2, rng) for n in (1, 2, 3)]
    buf = io.StringIO()
    for inst in insts:
        write_instance(buf, inst)
    back = read_instances(io.StringIO(buf.getvalue()))
    assert [b.N for b in back] == [1, 2, 3]
    with pytest.raises(ContractError):
        read_instance(io.StringIO(buf.getvalue()))


def test_malformed_records_rejected():
    with pytest.raises(ContractError):
        read_instance(io.StringIO("hello\n"))
    with pytest.raises(ContractError):
        read_instance(io.StringIO("bgnn-instance v1\n2 1\n10.0 1.0\n1 0 1\n"))
    with pytest.raises(InvalidInstanceError):
        read_instance(io.StringIO("bgnn-instance v1\n1 1\n10.0 1.0\n0 0\n"))


def test_invalid_instances_and_configs():
    with pytest.raises(InvalidInstanceError):
        BipartiteChannel(np.array([[1.0, 0.0], [0.0, 0.0]]), 1.0)
    with pytest.raises(InvalidInstanceError):
        BipartiteChannel(np.ones((1, 1)), -1.0)
    with pytest.raises(ShapeError):
        BipartiteChannel(np.ones(3), 1.0)
    with pytest.raises(ConfigError):
        ScenarioConfig(layout="ring")
    with pytest.raises(ConfigError):
        ScenarioConfig(max_users=0)
    with pytest.raises(ConfigError):
        ScenarioConfig(cell_radius=-1)
    assert ScenarioConfig(snr_db=10).power == pytest.approx(10.0)

"""Random MU-MISO problem instances (co-located and cell-free layouts)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .errors import ConfigError, ContractError, InvalidInstanceError, ShapeError

LAYOUTS = ("colocated", "cellfree")


def db_to_linear(db: float) -> float:
    return float(10.0 ** (db / 10.0))


@dataclass(frozen=True)
class ScenarioConfig:
    max_antennas: int = 4
    max_users: int = 4
    snr_db: float = 10.0
    layout: str = "colocated"
    cell_radius: float = 100.0
    antenna_radius: float = 30.0
    d_ref: float = 30.0
    pathloss_exp: float = 3.0
    min_antennas: int = 1
    min_users: int = 1
    noise_var: float = 1.0

    def __post_init__(self):
        if self.max_antennas < 1 or self.max_users < 1:
            raise ConfigError("maximum antenna/user counts must be >= 1")
        if not 1 <= self.min_antennas <= self.max_antennas:
            raise ConfigError("min_antennas must lie in [1, max_antennas]")
        if not 1 <= self.min_users <= self.max_users:
            raise ConfigError("min_users must lie in [1, max_users]")
        if self.cell_radius <= 0 or self.antenna_radius <= 0 or self.d_ref <= 0:
            raise ConfigError("radii and reference distance must be positive")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.noise_var <= 0:
            raise ConfigError("noise variance must be positive")

    @property
    def power(self) -> float:
        """Total transmit power P in linear scale."""
        return db_to_linear(self.snr_db)


@dataclass
class BipartiteChannel:
    """One problem instance; ``H[k, i]`` is the gain from antenna i to user k."""

    H: np.ndarray
    power: float
    noise_var: float = 1.0

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.complex128)
        if self.H.ndim != 2 or 0 in self.H.shape:
            raise ShapeError(f"H must be a non-empty K x N matrix, got {self.H.shape}")
        if not np.all(np.isfinite(self.H)):
            raise InvalidInstanceError("non-finite channel entry")
        if np.any(np.linalg.norm(self.H, axis=1) == 0):
            raise InvalidInstanceError("a user has a zero-norm channel")
        if self.power <= 0 or self.noise_var <= 0:
            raise InvalidInstanceError("power and noise variance must be positive")

    @property
    def K(self) -> int:
        return self.H.shape[0]

    @property
    def N(self) -> int:
        return self.H.shape[1]


def pathloss(d, d_ref: float = 30.0, alpha: float = 3.0):
    """Large-scale attenuation ``1 / (1 + (d / d_ref)^alpha)``."""
    return 1.0 / (1.0 + (np.asarray(d, dtype=np.float64) / d_ref) ** alpha)


def uniform_disk(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    """``n`` points uniform over a disk, as an (n, 2) array."""
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    th = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def complex_gaussian(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    """CN(0, var): real and imaginary parts i.i.d. N(0, var / 2)."""
    std = np.sqrt(np.asarray(var, dtype=np.float64) / 2.0)
    return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _draw_H(cfg: ScenarioConfig, N: int, K: int, rng: np.random.Generator) -> np.ndarray:
    users = uniform_disk(rng, K, cfg.cell_radius)
    if cfg.layout == "colocated":
        rho = pathloss(np.linalg.norm(users, axis=1), cfg.d_ref, cfg.pathloss_exp)
        return complex_gaussian(rng, (K, N), rho[:, None])
    th = rng.uniform(0.0, 2.0 * np.pi, N)
    ants = cfg.antenna_radius * np.stack([np.cos(th), np.sin(th)], axis=1)
    d = np.linalg.norm(users[:, None, :] - ants[None, :, :], axis=2)
    rho = pathloss(d, cfg.d_ref, cfg.pathloss_exp)
    return rho * complex_gaussian(rng, (K, N))


def sample_fixed(cfg: ScenarioConfig, N: int, K: int, rng: np.random.Generator) -> BipartiteChannel:
    """Instance with forced sizes; sizes above the config maxima are allowed."""
    if N < 1 or K < 1:
        raise ContractError(f"N and K must be >= 1, got N={N}, K={K}")
    return BipartiteChannel(_draw_H(cfg, N, K, rng), cfg.power, cfg.noise_var)


def sample_instance(cfg: ScenarioConfig, rng: np.random.Generator) -> BipartiteChannel:
    """Instance with N and K drawn independently and uniformly."""
    N = int(rng.integers(cfg.min_antennas, cfg.max_antennas + 1))
    K = int(rng.integers(cfg.min_users, cfg.max_users + 1))
    return sample_fixed(cfg, N, K, rng)


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sub-stream ``index`` of a master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


# ---------------------------------------------------------------- text record

_HEADER = "bgnn-instance v1"


def write_instance(fh: TextIO, inst: BipartiteChannel) -> None:
    """Dims, P, noise variance, then one line per user of re/im pairs."""
    fh.write(f"{_HEADER}\n{inst.N} {inst.K}\n{float(inst.power)!r} {float(inst.noise_var)!r}\n")
    for row in inst.H:
        fh.write(" ".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in row) + "\n")


def _parse_record(lines: list[str]) -> BipartiteChannel:
    try:
        N, K = (int(t) for t in lines[1].split())
        power, noise = (float(t) for t in lines[2].split())
        rows = [np.array(ln.split(), dtype=np.float64) for ln in lines[3:]]
    except (ValueError, IndexError) as exc:
        raise ContractError(f"malformed instance record: {exc}") from exc
    if len(rows) != K or any(r.size != 2 * N for r in rows):
        raise ContractError("instance record dimensions do not match its header")
    pairs = np.stack(rows).reshape(K, N, 2)
    return BipartiteChannel(pairs[..., 0] + 1j * pairs[..., 1], power, noise)


def read_instances(fh: TextIO) -> list[BipartiteChannel]:
    """Every record in a stream of concatenated instance records."""
    lines = [ln for ln in (s.strip() for s in fh) if ln]
    if not lines or lines[0] != _HEADER:
        raise ContractError("not a bgnn instance record")
    starts = [j for j, ln in enumerate(lines) if ln == _HEADER] + [len(lines)]
    return [_parse_record(lines[a:b]) for a, b in zip(starts[:-1], starts[1:])]


def read_instance(fh: TextIO) -> BipartiteChannel:
    insts = read_instances(fh)
    if len(insts) != 1:
        raise ContractError(f"expected one instance record, found {len(insts)}")
    return insts[0]

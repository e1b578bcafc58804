"""Unsupervised training over randomly sized bipartite graphs.

The objective is the batch mean of ``sum_t w_t U(rates at step t)``; the
update is Adam ascent.  Validation runs once per epoch on a held-out set
drawn from its own seed stream, and parameters are kept whenever the
validation utility improves.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import beamcore as bc
from .channels import BipartiteChannel, ScenarioConfig, sample_instance, stream, write_instance
from .errors import ConfigError, ContractError, NumericError
from .model import (BgnnParams, group_by_size, init_params, initial_messages,
                    save_checkpoint, step_utilities_t)
from .model import evaluate as evaluate_model
from .nn import AdamState, adam_step

log = logging.getLogger(__name__)

# seed sub-streams; validation never shares a stream with training data
STREAM_INIT, STREAM_DATA, STREAM_MSG, STREAM_VAL = 0, 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batches_per_epoch: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    T: int = 6
    mode: str = "sum"
    M: int = 5
    width: int | None = None
    snr_policy: str = "fixed"
    snr_db_range: tuple[float, float] = (0.0, 25.0)
    val_size: int = 256
    seed: int = 0
    step_weights: tuple[float, ...] | None = None
    scenario: ScenarioConfig = field(default_factory=lambda: ScenarioConfig(min_antennas=2,
                                                                            min_users=2))

    def __post_init__(self):
        for name in ("epochs", "batches_per_epoch", "batch_size", "T", "M", "val_size"):
            v = getattr(self, name)
            if v < (0 if name == "epochs" else 1):
                raise ConfigError(f"{name} must be positive, got {v}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.mode not in bc.MODES:
            raise ConfigError(f"mode must be one of {bc.MODES}")
        if self.snr_policy not in ("fixed", "mixed"):
            raise ConfigError("snr_policy must be 'fixed' or 'mixed'")
        if self.step_weights is not None and len(self.step_weights) != self.T:
            raise ConfigError("need one step weight per iteration")

    def weights(self) -> np.ndarray:
        return np.ones(self.T) if self.step_weights is None else np.asarray(self.step_weights)


PROFILES = {
    "desk": TrainConfig(),
    "paper": TrainConfig(epochs=100, batches_per_epoch=50, batch_size=1000, lr=5e-4, T=10,
                         scenario=ScenarioConfig(max_antennas=8, max_users=8,
                                                 min_antennas=2, min_users=2)),
}


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    val_utility: float
    best: bool
    seconds: float

    def line(self) -> str:
        return (f"epoch={self.epoch} objective={self.objective!r} "
                f"val_utility={self.val_utility!r} best={int(self.best)} "
                f"seconds={self.seconds:.3f}")


@dataclass
class TrainReport:
    initial_val_utility: float = float("nan")
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def best_val_utility(self) -> float:
        vals = [e.val_utility for e in self.epochs if e.best]
        return max(vals) if vals else self.initial_val_utility

    def lines(self, timing: bool = True) -> list[str]:
        out = [f"epoch=0 val_utility={self.initial_val_utility!r}"]
        for e in self.epochs:
            ln = e.line()
            out.append(ln if timing else ln.rsplit(" seconds=", 1)[0])
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")


# -------------------------------------------------------------- objective

def draw_power(cfg: TrainConfig, rng: np.random.Generator) -> float:
    if cfg.snr_policy == "fixed":
        return cfg.scenario.power
    lo, hi = cfg.snr_db_range
    return float(10.0 ** (rng.uniform(lo, hi) / 10.0))


def objective_and_grad(params: BgnnParams, batch: Sequence[BipartiteChannel],
                       b0s: Sequence[np.ndarray], weights: np.ndarray | None = None,
                       with_grad: bool = True) -> tuple[float, list[np.ndarray] | None]:
    """Batch mean of the weighted multi-step utility, and its gradient.

    Instances are grouped by (N, K); each group runs on its own tape and the
    group gradients are summed in first-seen group order.
    """
    if not batch:
        raise ContractError("empty batch")
    T = params.T
    w = np.ones(T) if weights is None else np.asarray(weights, dtype=np.float64)
    plist = params.parameters()
    total = 0.0
    grads = [np.zeros_like(p.values) for p in plist] if with_grad else None
    for idx in group_by_size(batch).values():
        H = bc.channel_pair(np.stack([batch[j].H for j in idx]))
        powers = np.array([batch[j].power for j in idx])
        b0 = np.stack([b0s[j] for j in idx])
        with ad.Tape() as tape:
            utils = step_utilities_t(params, H, powers, b0, batch[idx[0]].noise_var, T)
            obj = ad.sum(ad.concat([ad.reshape(u * wt, (1, -1)) for u, wt in zip(utils, w)],
                                   axis=0))
            obj = obj / len(batch)
        total += obj.item()
        if with_grad:
            for acc, g in zip(grads, tape.gradient(obj, plist)):
                acc += g
    return total, grads


def objective(params: BgnnParams, batch, b0s, weights=None) -> float:
    return objective_and_grad(params, batch, b0s, weights, with_grad=False)[0]


def make_batch(cfg: TrainConfig, data_rng, msg_rng, size: int):
    batch, b0s = [], []
    for _ in range(size):
        inst = sample_instance(cfg.scenario, data_rng)
        power = draw_power(cfg, data_rng)
        if power != inst.power:
            inst = BipartiteChannel(inst.H, power, inst.noise_var)
        batch.append(inst)
        b0s.append(initial_messages(inst.N, inst.K, cfg.M, msg_rng))
    return batch, b0s


def validation_set(cfg: TrainConfig):
    rng = stream(cfg.seed, STREAM_VAL)
    return make_batch(cfg, rng, rng, cfg.val_size)


def _persist_failed_batch(batch, out_dir) -> Path | None:
    if out_dir is None:
        return None
    path = Path(out_dir) / "failed_batch.txt"
    with open(path, "w") as fh:
        for inst in batch:
            write_instance(fh, inst)
    return path


def train(cfg: TrainConfig, out_dir=None, params: BgnnParams | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[BgnnParams, TrainReport]:
    """Run the training loop; returns the best parameters and the report.

    With ``out_dir`` set, ``checkpoint.bin`` is rewritten whenever validation
    improves and ``report.txt`` at the end.
    """
    if params is None:
        params = init_params(stream(cfg.seed, STREAM_INIT), cfg.mode, cfg.M, cfg.T, cfg.width)
    elif params.mode != cfg.mode or params.T != cfg.T:
        raise ConfigError("supplied parameters do not match the training config")
    report = TrainReport()
    if cfg.epochs == 0:
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / "checkpoint.bin", params)
            report.write(Path(out_dir) / "report.txt")
        return params, report
    val_batch, val_b0 = validation_set(cfg)
    report.initial_val_utility = float(evaluate_model(params, val_batch, val_b0)[:, -1].mean())
    best_u, best = -np.inf, params.copy()
    data_rng, msg_rng = stream(cfg.seed, STREAM_DATA), stream(cfg.seed, STREAM_MSG)
    state = AdamState(lr=cfg.lr)
    plist = params.parameters()
    weights = cfg.weights()
    ckpt = None if out_dir is None else Path(out_dir) / "checkpoint.bin"
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        objs = []
        for _ in range(cfg.batches_per_epoch):
            batch, b0s = make_batch(cfg, data_rng, msg_rng, cfg.batch_size)
            try:
                F, grads = objective_and_grad(params, batch, b0s, weights)
                if not all(np.all(np.isfinite(g)) for g in grads):
                    raise NumericError("non-finite gradient")
            except NumericError as exc:
                where = _persist_failed_batch(batch, out_dir)
                raise NumericError(f"epoch {epoch}: {exc}; batch saved to {where}") from exc
            adam_step(plist, grads, state)
            objs.append(F)
        u_val = float(evaluate_model(params, val_batch, val_b0)[:, -1].mean())
        improved = u_val > best_u
        if improved:
            best_u, best = u_val, params.copy()
            if ckpt is not None:
                save_checkpoint(ckpt, best)
        rec = EpochRecord(epoch, float(np.mean(objs)), u_val, improved, time.perf_counter() - t0)
        report.epochs.append(rec)
        log.info(rec.line())
        if on_epoch is not None:
            on_epoch(rec)
    if out_dir is not None:
        report.write(Path(out_dir) / "report.txt")
    return best, report


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    scen = {k[len("scenario_"):]: v for k, v in kw.items() if k.startswith("scenario_")}
    rest = {k: v for k, v in kw.items() if not k.startswith("scenario_")}
    if scen:
        rest["scenario"] = replace(cfg.scenario, **scen)
    return replace(cfg, **rest)

"""Bipartite message-passing network over the antenna-user graph.

Three shared dense networks run at every vertex and every iteration:

* the user-message net maps ``(s_k, b_k, Re h_ki, Im h_ki)`` to ``c_ki``;
* the antenna-message net maps ``(m_ik, c_i, Re h_ki, Im h_ki)`` to ``b_ik``;
* the decision net maps the pooled ``m_k`` to the raw beam feature.

All pooling is plain summation.  Arrays are batched as (B, K, N, ...) for
user-side edge tensors and (B, N, K, ...) for antenna-side ones, so every
network sees one row per edge or per vertex and nothing else.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from . import autodiff as ad
from . import beamcore as bc
from .autodiff import ComplexPair, Tensor
from .channels import BipartiteChannel
from .errors import ContractError, ShapeError
from .nn import DenseNet, init_dense, read_dense, write_dense

MAGIC = b"BGNNCKPT"
FORMAT_VERSION = 1
DEFAULT_WIDTH = {"sum": 200, "min": 40}


def feature_dim(mode: str) -> int:
    if mode not in bc.MODES:
        raise ContractError(f"unknown utility mode {mode!r}")
    return 2 if mode == "sum" else 1


@dataclass
class BgnnParams:
    c_net: DenseNet
    m_net: DenseNet
    d_net: DenseNet
    M: int = 5
    T: int = 6
    mode: str = "sum"

    def __post_init__(self):
        f = feature_dim(self.mode)
        want = {"c_net": (self.M + f + 2, self.M),
                "m_net": (3 * self.M + 2, self.M),
                "d_net": (2 * self.M, f)}
        for name, (n_in, n_out) in want.items():
            net = getattr(self, name)
            if (net.n_in, net.n_out) != (n_in, n_out):
                raise ShapeError(f"{name} is {net.n_in}->{net.n_out}, expected {n_in}->{n_out}")
        if self.T < 1:
            raise ContractError("T must be >= 1")

    @property
    def feature_dim(self) -> int:
        return feature_dim(self.mode)

    def parameters(self) -> list[Tensor]:
        return self.c_net.parameters() + self.m_net.parameters() + self.d_net.parameters()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "BgnnParams":
        buf = io.BytesIO()
        save_params(buf, self)
        buf.seek(0)
        return load_params(buf)


def init_params(rng: np.random.Generator, mode: str = "sum", M: int = 5, T: int = 6,
                width: int | None = None) -> BgnnParams:
    """Two ReLU hidden layers per network; tanh message outputs, sigmoid decisions."""
    f = feature_dim(mode)
    w = DEFAULT_WIDTH[mode] if width is None else width
    c = init_dense([M + f + 2, w, w, M], ["relu", "relu", "tanh"], rng)
    m = init_dense([3 * M + 2, w, w, M], ["relu", "relu", "tanh"], rng)
    d = init_dense([2 * M, w, w, f], ["relu", "relu", "sigmoid"], rng)
    return BgnnParams(c, m, d, M, T, mode)


def zero_params(mode: str = "sum", M: int = 5, T: int = 6, width: int = 8) -> BgnnParams:
    """All-zero weights: messages are 0 and features come out uniform."""
    p = init_params(np.random.default_rng(0), mode, M, T, width)
    for t in p.parameters():
        t.values = np.zeros_like(t.values)
    return p


# ------------------------------------------------------------------ state

@dataclass
class MessageState:
    """Messages of one batch of equally sized graphs at some iteration."""

    b_edge: Tensor            # (B, N, K, M)   b_ik
    m_edge: Tensor            # (B, N, K, 2M)  (b_ik, sum_{l!=k} b_il)
    m_user: Tensor            # (B, K, 2M)
    b_user: Tensor            # (B, K, M)
    s: Tensor                 # (B, K, F)
    c_edge: Tensor | None = None  # (B, K, N, M)  c_ki
    c_ant: Tensor | None = None   # (B, N, M)

    @property
    def M(self) -> int:
        return self.b_edge.shape[-1]


def initial_messages(N: int, K: int, M: int, rng: np.random.Generator,
                     batch: int | None = None) -> np.ndarray:
    """Standard normal b_ik^[0], shape (N, K, M) or (batch, N, K, M)."""
    if N < 1 or K < 1:
        raise ContractError("N and K must be >= 1")
    shape = (N, K, M) if batch is None else (batch, N, K, M)
    return rng.standard_normal(shape)


def _antenna_aggregates(b_edge: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    total = ad.sum(b_edge, axis=2, keepdims=True)
    m_edge = ad.concat([b_edge, total - b_edge], axis=-1)
    return m_edge, ad.sum(m_edge, axis=1), ad.sum(b_edge, axis=1)


def power_column(power, B: int) -> np.ndarray:
    """Per-instance power as a (B, 1, 1) array (scalar powers are broadcast)."""
    p = np.broadcast_to(np.asarray(power, dtype=np.float64), (B,))
    return p.reshape(B, 1, 1)


def init_state(b0: np.ndarray, power, feat_dim: int) -> MessageState:
    """State at t=0 from initial edge messages ``b0`` of shape (B, N, K, M).

    Features start at the uniform split ``P / K``.
    """
    if b0.ndim != 4:
        raise ShapeError("b0 must have shape (B, N, K, M)")
    B, N, K, M = b0.shape
    b_edge = Tensor(b0)
    m_edge, m_user, b_user = _antenna_aggregates(b_edge)
    s = Tensor(np.broadcast_to(power_column(power, B) / K, (B, K, feat_dim)))
    return MessageState(b_edge, m_edge, m_user, b_user, s)


def _edge_attr(H: ComplexPair, antenna_major: bool) -> Tensor:
    re, im = H.re, H.im
    if antenna_major:
        re, im = ad.swapaxes(re, 1, 2), ad.swapaxes(im, 1, 2)
    shape = re.shape + (1,)
    return ad.concat([ad.reshape(re, shape), ad.reshape(im, shape)], axis=-1)


def user_message_step(state: MessageState, params: BgnnParams, H: ComplexPair,
                      power) -> MessageState:
    """c_ki = C(s_k / P, b_k, h_ki) on every edge; c_i = sum_k c_ki."""
    B, K, N = H.shape
    M = state.M
    f = state.s.shape[-1]
    s_scaled = state.s / power_column(power, B)
    s_in = ad.broadcast_to(ad.reshape(s_scaled, (B, K, 1, f)), (B, K, N, f))
    b_in = ad.broadcast_to(ad.reshape(state.b_user, (B, K, 1, M)), (B, K, N, M))
    x = ad.concat([s_in, b_in, _edge_attr(H, antenna_major=False)], axis=-1)
    c_edge = params.c_net(x)
    state.c_edge = c_edge
    state.c_ant = ad.sum(c_edge, axis=1)
    return state


def antenna_message_step(state: MessageState, params: BgnnParams, H: ComplexPair) -> MessageState:
    """b_ik = M(m_ik, c_i, h_ki); then rebuild m_ik, m_k and b_k by summation."""
    B, K, N = H.shape
    M = state.M
    c_in = ad.broadcast_to(ad.reshape(state.c_ant, (B, N, 1, M)), (B, N, K, M))
    x = ad.concat([state.m_edge, c_in, _edge_attr(H, antenna_major=True)], axis=-1)
    state.b_edge = params.m_net(x)
    state.m_edge, state.m_user, state.b_user = _antenna_aggregates(state.b_edge)
    return state


def normalise_features(raw: Tensor, power) -> Tensor:
    """Scale each feature column so it sums to ``power`` across users."""
    B, K = raw.shape[:2]
    pcol = power_column(power, B)
    total = ad.sum(raw, axis=1, keepdims=True)
    if np.any(total.values <= 0):
        # unreachable with sigmoid outputs; uniform split as a guard
        return Tensor(np.broadcast_to(pcol / K, raw.shape))
    return raw * (pcol / total)


def decide_features(state: MessageState, params: BgnnParams, power) -> MessageState:
    state.s = normalise_features(params.d_net(state.m_user), power)
    return state


def split_feature(s: Tensor, mode: str) -> tuple[Tensor | None, Tensor]:
    """(p, q) from a (B, K, F) feature tensor; p is None in min mode."""
    B, K, _ = s.shape
    if mode == "sum":
        return ad.reshape(s[:, :, 0], (B, K)), ad.reshape(s[:, :, 1], (B, K))
    return None, ad.reshape(s[:, :, 0], (B, K))


def run_bmp(params: BgnnParams, H: ComplexPair, power, b0: np.ndarray,
            T: int | None = None) -> list[Tensor]:
    """Feature trajectory s^[1..T], each (B, K, F)."""
    T = params.T if T is None else T
    B, K, N = H.shape
    if b0.shape != (B, N, K, params.M):
        raise ShapeError(f"b0 shape {b0.shape} != {(B, N, K, params.M)}")
    state = init_state(b0, power, params.feature_dim)
    out = []
    for _ in range(T):
        user_message_step(state, params, H, power)
        antenna_message_step(state, params, H)
        decide_features(state, params, power)
        out.append(state.s)
    return out


def step_utilities_t(params: BgnnParams, H: ComplexPair, power, b0: np.ndarray,
                     noise_var: float = 1.0, T: int | None = None) -> list[Tensor]:
    """Differentiable per-step utilities, one (B,) tensor per iteration.

    Sum mode evaluates downlink rates of the recovered beams; min mode uses
    the dual uplink rates so no eigen-decomposition enters the tape.
    """
    utils = []
    for s in run_bmp(params, H, power, b0, T):
        p, q = split_feature(s, params.mode)
        if params.mode == "sum":
            V = bc.recover_beams_t(H, p, q, noise_var)
            r = bc.rates_t(H, V, noise_var)
        else:
            r = bc.ul_rates_t(H, q, bc.directions_t(H, q, noise_var), noise_var)
        utils.append(bc.utility_t(r, params.mode))
    return utils


def features_to_solution(H: np.ndarray, feat: np.ndarray, mode: str, power: float,
                         noise_var: float = 1.0) -> bc.BeamSolution:
    """Recover beams for one instance from a (K, F) feature array."""
    if mode == "sum":
        p, q = feat[:, 0], feat[:, 1]
        V = bc.recover_beams(H, p, q, noise_var)
    else:
        q = feat[:, 0]
        p, dirs = bc.minrate_powers(H, q, power, noise_var)
        V = dirs * np.sqrt(p)
    return bc.solution(H, V, mode, noise_var, bc.BeamFeature(p, q))


def bmp_forward(inst: BipartiteChannel, params: BgnnParams,
                rng: np.random.Generator | None = None, T: int | None = None,
                b0: np.ndarray | None = None) -> list[bc.BeamSolution]:
    """Run inference on one instance; one :class:`BeamSolution` per iteration.

    Initial messages come from ``b0`` (shape (N, K, M)) if given, else are
    drawn from ``rng``.
    """
    if b0 is None:
        if rng is None:
            raise ContractError("need either rng or b0")
        b0 = initial_messages(inst.N, inst.K, params.M, rng)
    H = bc.channel_pair(inst.H[None])
    traj = run_bmp(params, H, inst.power, np.asarray(b0)[None], T)
    return [features_to_solution(inst.H, s.values[0], params.mode, inst.power, inst.noise_var)
            for s in traj]


def group_by_size(instances: Sequence[BipartiteChannel]) -> dict[tuple[int, int], list[int]]:
    """Indices of instances sharing (N, K), in first-seen order."""
    groups: dict[tuple[int, int], list[int]] = {}
    for j, inst in enumerate(instances):
        groups.setdefault((inst.N, inst.K), []).append(j)
    return groups


def evaluate(params: BgnnParams, instances: Sequence[BipartiteChannel],
             b0s: Sequence[np.ndarray], T: int | None = None) -> np.ndarray:
    """Utility of every instance at every iteration, shape (len, T).

    Min-mode utilities use the EVD recovery and downlink rates.
    """
    T = params.T if T is None else T
    out = np.empty((len(instances), T))
    for idx in group_by_size(instances).values():
        H = np.stack([instances[j].H for j in idx])
        powers = np.array([instances[j].power for j in idx])
        b0 = np.stack([b0s[j] for j in idx])
        traj = run_bmp(params, bc.channel_pair(H), powers, b0, T)
        for t, s in enumerate(traj):
            for row, j in enumerate(idx):
                inst = instances[j]
                sol = features_to_solution(inst.H, s.values[row], params.mode, inst.power,
                                           inst.noise_var)
                out[j, t] = sol.utility
    return out


# -------------------------------------------------------------- checkpoints

def save_params(fh: BinaryIO, params: BgnnParams) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<IBII", FORMAT_VERSION, bc.MODES.index(params.mode), params.M, params.T))
    for net in (params.c_net, params.m_net, params.d_net):
        write_dense(fh, net)


def load_params(fh: BinaryIO) -> BgnnParams:
    if fh.read(len(MAGIC)) != MAGIC:
        raise ContractError("not a BGNN checkpoint")
    head = fh.read(13)
    if len(head) != 13:
        raise ContractError("truncated checkpoint header")
    version, mode, M, T = struct.unpack("<IBII", head)
    if version != FORMAT_VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    if mode >= len(bc.MODES):
        raise ContractError(f"bad utility mode code {mode}")
    nets = [read_dense(fh) for _ in range(3)]
    if fh.read(1):
        raise ContractError("trailing bytes after checkpoint")
    return BgnnParams(*nets, M=M, T=T, mode=bc.MODES[mode])


def save_checkpoint(path, params: BgnnParams) -> None:
    with open(path, "wb") as fh:
        save_params(fh, params)


def load_checkpoint(path) -> BgnnParams:
    with open(path, "rb") as fh:
        return load_params(fh)

"""Beamforming mathematics that does not depend on learning.

Two flavours of each routine live here:

* plain numpy functions on a single instance (``H`` is a complex K x N
  array), used for evaluation, baselines and the EVD-based recovery;
* batched tape functions (suffix ``_t``) over :class:`ComplexPair` channels of
  shape (B, K, N), used inside the differentiable training objective.

Convention: ``h_k`` is the k-th column of ``H^H``, so ``h_k^H v = H[k] @ v``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ComplexPair, Tensor
from .errors import ContractError, InvalidInstanceError, NumericError, ShapeError
from .linalg import hpd_solve, power_iteration_max_eig

MODES = ("sum", "min")
_LN2 = np.log(2.0)


@dataclass
class BeamFeature:
    """Per-user downlink powers ``p`` and virtual uplink powers ``q``."""

    p: np.ndarray | None
    q: np.ndarray

    def check(self, power: float, rtol: float = 1e-9) -> None:
        for name, x in (("p", self.p), ("q", self.q)):
            if x is None:
                continue
            if np.any(x < 0):
                raise ContractError(f"{name} has negative entries")
            if abs(x.sum() - power) > rtol * power:
                raise ContractError(f"sum({name}) = {x.sum()!r} differs from P = {power!r}")


@dataclass
class BeamSolution:
    V: np.ndarray
    rates: np.ndarray
    utility: float
    feature: BeamFeature | None = None


# ------------------------------------------------------------------- numpy

def _check_rows(H: np.ndarray) -> None:
    if np.any(np.linalg.norm(H, axis=1) == 0):
        raise InvalidInstanceError("a user has a zero-norm channel")


def link_gains(H: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``E[k, l] = |h_k^H v_l|^2``."""
    return np.abs(H @ V) ** 2


def downlink_sinr(H: np.ndarray, V: np.ndarray, noise_var: float = 1.0) -> np.ndarray:
    if H.shape[1] != V.shape[0] or H.shape[0] != V.shape[1]:
        raise ShapeError(f"H {H.shape} and V {V.shape} do not conform")
    E = link_gains(H, V)
    sig = np.diag(E)
    return sig / (E.sum(axis=1) - sig + noise_var)


def rate(H: np.ndarray, V: np.ndarray, noise_var: float = 1.0) -> np.ndarray:
    """Per-user achievable rates in bit/s/Hz."""
    return np.log2(1.0 + downlink_sinr(H, V, noise_var))


def utility(rates, mode: str = "sum") -> float:
    rates = np.asarray(rates, dtype=np.float64)
    if rates.size == 0:
        raise ContractError("utility of an empty rate vector")
    if mode == "sum":
        return float(rates.sum())
    if mode == "min":
        return float(rates.min())
    raise ContractError(f"unknown utility mode {mode!r}")


def _mmse_solutions(H: np.ndarray, q: np.ndarray, noise_var: float) -> np.ndarray:
    """Columns ``(noise I + sum_l q_l h_l h_l^H)^{-1} h_k``."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (H.shape[0],):
        raise ShapeError(f"q must have length K={H.shape[0]}")
    if np.any(q < 0):
        raise ContractError("uplink powers must be nonnegative")
    _check_rows(H)
    Hh = H.conj().T
    A = noise_var * np.eye(H.shape[1]) + (Hh * q) @ H
    A = 0.5 * (A + A.conj().T)
    return hpd_solve(A, Hh)


def beam_directions_ul(H: np.ndarray, q, noise_var: float = 1.0) -> np.ndarray:
    """Unit-norm MMSE receive directions, one column per user."""
    W = _mmse_solutions(H, q, noise_var)
    return W / np.linalg.norm(W, axis=0)


def recover_beams(H: np.ndarray, p, q, noise_var: float = 1.0) -> np.ndarray:
    """Beamformers from the feature ``(p, q)``: ``v_k = sqrt(p_k) * dir_k``."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (H.shape[0],) or np.any(p < 0):
        raise ContractError("p must be a nonnegative length-K vector")
    return beam_directions_ul(H, q, noise_var) * np.sqrt(p)


def ul_sinr(H: np.ndarray, q, directions: np.ndarray, noise_var: float = 1.0) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    E = link_gains(H, directions)  # E[l, k] = |h_l^H v_k|^2
    recv = q[:, None] * E
    sig = np.diag(recv)
    return sig / (recv.sum(axis=0) - sig + noise_var)


def ul_rates(H: np.ndarray, q, directions: np.ndarray, noise_var: float = 1.0) -> np.ndarray:
    """Dual uplink rates with receive filters ``directions`` (unit-norm columns)."""
    return np.log2(1.0 + ul_sinr(H, q, directions, noise_var))


def gamma_matrix(E: np.ndarray, gamma: np.ndarray, power: float,
                 noise_var: float = 1.0) -> np.ndarray:
    """Extended (K+1)x(K+1) matrix whose Perron vector is ``[p; 1]``.

    ``E[k, l] = |h_k^H v~_l|^2`` and ``gamma`` are the per-user SINR targets.
    """
    K = E.shape[0]
    omega = gamma / np.diag(E)
    phi = E * (1.0 - np.eye(K))
    op = omega[:, None] * phi
    G = np.empty((K + 1, K + 1))
    G[:K, :K] = op
    G[:K, K] = noise_var * omega
    G[K, :K] = op.sum(axis=0) / power
    G[K, K] = noise_var * omega.sum() / power
    return G


def minrate_powers(H: np.ndarray, q, power: float, noise_var: float = 1.0):
    """Downlink powers achieving the dual-uplink SINRs of ``q``.

    Returns ``(p, directions)``.
    """
    q = np.asarray(q, dtype=np.float64)
    dirs = beam_directions_ul(H, q, noise_var)
    E = link_gains(H, dirs)
    gamma = ul_sinr(H, q, dirs, noise_var)
    _, x = power_iteration_max_eig(gamma_matrix(E, gamma, power, noise_var))
    p = x[:-1]
    if np.any(p < -1e-12 * power):
        raise NumericError("negative downlink power from the Perron vector")
    return np.clip(p, 0.0, None), dirs


def recover_minrate_beams(H: np.ndarray, q, power: float, noise_var: float = 1.0) -> np.ndarray:
    """Max-min recovery from uplink powers only (EVD route)."""
    p, dirs = minrate_powers(H, q, power, noise_var)
    return dirs * np.sqrt(p)


def solution(H: np.ndarray, V: np.ndarray, mode: str, noise_var: float = 1.0,
             feature: BeamFeature | None = None) -> BeamSolution:
    r = rate(H, V, noise_var)
    return BeamSolution(V, r, utility(r, mode), feature)


# ------------------------------------------------------------ tape (batched)

def channel_pair(H: np.ndarray) -> ComplexPair:
    """Constant (non-differentiable) channel as a complex pair."""
    return ComplexPair.from_complex(H)


def directions_t(H: ComplexPair, q: Tensor, noise_var: float = 1.0) -> ComplexPair:
    """Batched unit-norm MMSE directions; ``H`` is (B,K,N), ``q`` is (B,K).

    The complex system is solved through its real 2N x 2N embedding, which is
    symmetric positive definite whenever the complex matrix is Hermitian PD.
    """
    B, K, N = H.shape
    if q.shape != (B, K):
        raise ShapeError(f"q shape {q.shape} != {(B, K)}")
    Hr, Hi = H.re, H.im
    HrT, HiT = ad.swapaxes(Hr, -1, -2), ad.swapaxes(Hi, -1, -2)
    qb = ad.reshape(q, (B, 1, K))
    Xr, Xi = HrT * qb, -(HiT * qb)
    Ar = Xr @ Hr - Xi @ Hi + noise_var * np.eye(N)
    Ai = Xr @ Hi + Xi @ Hr
    top = ad.concat([Ar, -Ai], axis=-1)
    bot = ad.concat([Ai, Ar], axis=-1)
    A = ad.concat([top, bot], axis=-2)
    rhs = ad.concat([HrT, -HiT], axis=-2)
    W = ad.solve(A, rhs)
    Wr, Wi = W[:, :N, :], W[:, N:, :]
    norm = ad.sqrt(ad.sum(ad.square(Wr) + ad.square(Wi), axis=-2, keepdims=True))
    return ComplexPair(Wr / norm, Wi / norm)


def recover_beams_t(H: ComplexPair, p: Tensor, q: Tensor, noise_var: float = 1.0) -> ComplexPair:
    dirs = directions_t(H, q, noise_var)
    sp = ad.reshape(ad.sqrt(p), (p.shape[0], 1, p.shape[1]))
    return dirs * sp


def _gains_t(H: ComplexPair, V: ComplexPair) -> Tensor:
    return (H @ V).abs2()


def rates_t(H: ComplexPair, V: ComplexPair, noise_var: float = 1.0) -> Tensor:
    """Batched downlink rates, shape (B, K)."""
    E = _gains_t(H, V)
    K = E.shape[-1]
    sig = ad.sum(E * np.eye(K), axis=-1)
    interf = ad.sum(E, axis=-1) - sig
    return ad.log(1.0 + sig / (interf + noise_var)) / _LN2


def ul_rates_t(H: ComplexPair, q: Tensor, dirs: ComplexPair, noise_var: float = 1.0) -> Tensor:
    """Batched dual-uplink rates, shape (B, K)."""
    E = _gains_t(H, dirs)  # E[b, l, k] = |h_l^H v_k|^2
    B, K = q.shape
    recv = E * ad.reshape(q, (B, K, 1))
    sig = ad.sum(recv * np.eye(K), axis=-2)
    interf = ad.sum(recv, axis=-2) - sig
    return ad.log(1.0 + sig / (interf + noise_var)) / _LN2


def utility_t(rates: Tensor, mode: str) -> Tensor:
    """Per-instance utility, shape (B,)."""
    if mode == "sum":
        return ad.sum(rates, axis=-1)
    if mode == "min":
        return ad.minimum(rates, axis=-1)
    raise ContractError(f"unknown utility mode {mode!r}")

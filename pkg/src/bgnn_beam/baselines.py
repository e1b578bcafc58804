"""Reference beamformers: WMMSE, ZF, MRT, max-min SINR balancing, naive DNN."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import beamcore as bc
from .channels import BipartiteChannel, ScenarioConfig, sample_fixed, stream
from .errors import ContractError, InfeasibleError, ShapeError
from .linalg import power_iteration_max_eig
from .nn import AdamState, DenseNet, adam_step, init_dense

WMMSE_MAX_ITER = 500
BALANCING_MAX_ITER = 1000
DEFAULT_TOL = 1e-6


@dataclass
class BaselineResult:
    V: np.ndarray
    rates: np.ndarray
    utility: float
    iterations: int = 0
    converged: bool = True
    history: list = field(default_factory=list)


def _result(H, V, mode, noise_var, iterations=0, converged=True, history=None) -> BaselineResult:
    r = bc.rate(H, V, noise_var)
    return BaselineResult(V, r, bc.utility(r, mode), iterations, converged, history or [])


# ----------------------------------------------------------------- WMMSE

def _wmmse_transmit(H, w, u, power):
    """Weighted regularised LS beamformers meeting sum ||v_k||^2 = power.

    The multiplier is found by bisection on the eigen-decomposed system.
    """
    Hh = H.conj().T                                   # columns h_k
    J = (Hh * (w * np.abs(u) ** 2)) @ H
    J = 0.5 * (J + J.conj().T)
    lam, U = np.linalg.eigh(J)
    lam = np.clip(lam, 0.0, None)
    C = U.conj().T @ (Hh * (w * u))                   # rhs in eigenbasis
    c2 = (np.abs(C) ** 2).sum(axis=1)

    def total(mu):
        return float((c2 / (lam + mu) ** 2).sum())

    scale_floor = 1e-12 * max(lam.max(), 1e-300)
    if lam.min() > scale_floor and total(0.0) <= power:
        mu = 0.0
    else:
        lo, hi = 0.0, max(lam.max(), 1.0) * 1e-6
        while total(hi) > power:
            lo, hi = hi, hi * 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if total(mid) > power:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * hi:
                break
        mu = hi
    V = U @ (C / (lam + mu)[:, None])
    # raising all beams together raises every SINR, so fill the budget
    return V * np.sqrt(power / np.sum(np.abs(V) ** 2))


def wmmse(H: np.ndarray, power: float, noise_var: float = 1.0, tol: float = DEFAULT_TOL,
          max_iter: int = WMMSE_MAX_ITER, V0: np.ndarray | None = None) -> BaselineResult:
    """Sum-rate WMMSE from an equal-power MRT start.

    ``history`` holds the sum rate after each iteration (start included).
    """
    H = np.asarray(H, dtype=np.complex128)
    K, N = H.shape
    if V0 is None:
        V0 = H.conj().T / np.linalg.norm(H, axis=1) * np.sqrt(power / K)
    V = V0
    hist = [bc.utility(bc.rate(H, V, noise_var))]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        G = H @ V                                     # G[k, l] = h_k^H v_l
        tot = (np.abs(G) ** 2).sum(axis=1) + noise_var
        d = np.diag(G)
        u = d / tot
        w = 1.0 / (1.0 - np.abs(d) ** 2 / tot)
        V = _wmmse_transmit(H, w, u, power)
        hist.append(bc.utility(bc.rate(H, V, noise_var)))
        if abs(hist[-1] - hist[-2]) < tol:
            converged = True
            break
    return _result(H, V, "sum", noise_var, it, converged, hist)


# ---------------------------------------------------------------- ZF / MRT

def water_filling(gains: np.ndarray, power: float) -> np.ndarray:
    """Powers maximising sum log(1 + g_k p_k) subject to sum p_k = power."""
    gains = np.asarray(gains, dtype=np.float64)
    if np.any(gains <= 0):
        raise ContractError("water-filling needs positive channel gains")
    order = np.argsort(gains)[::-1]
    inv = 1.0 / gains[order]
    n = len(gains)
    for m in range(n, 0, -1):
        level = (power + inv[:m].sum()) / m
        if level > inv[m - 1]:
            break
    p = np.zeros(n)
    p[order[:m]] = level - inv[:m]
    return p


def zf_directions(H: np.ndarray) -> np.ndarray:
    K, N = H.shape
    if N < K:
        raise InfeasibleError(f"zero-forcing needs N >= K (got N={N}, K={K})")
    W = np.linalg.pinv(H)                            # N x K, H W = I
    return W / np.linalg.norm(W, axis=0)


def zf_waterfill(H: np.ndarray, power: float, noise_var: float = 1.0) -> BaselineResult:
    H = np.asarray(H, dtype=np.complex128)
    D = zf_directions(H)
    g = np.abs(np.einsum("kn,nk->k", H, D)) ** 2 / noise_var
    p = water_filling(g, power)
    return _result(H, D * np.sqrt(p), "sum", noise_var)


def project_simplex(x: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {p >= 0, sum p = total}."""
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, len(x) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(x - css[rho] / (rho + 1), 0.0)


def _power_objective(E: np.ndarray, p: np.ndarray, noise_var: float, mode: str):
    """Utility and (sub)gradient in ``p`` for fixed beams with gains ``E``."""
    tot = E @ p + noise_var
    sig = np.diag(E) * p
    interf = tot - sig
    r = np.log2(tot / interf)
    # d r_k / d p_j = (E_kj / tot_k - [j != k] E_kj / interf_k) / ln 2
    Jac = E / tot[:, None] - (E * (1.0 - np.eye(len(p)))) / interf[:, None]
    Jac /= np.log(2.0)
    if mode == "sum":
        return r.sum(), Jac.sum(axis=0)
    k = int(np.argmin(r))
    return r[k], Jac[k]


def mrt_power(H: np.ndarray, power: float, noise_var: float = 1.0, mode: str = "sum",
              steps: int = 200, restarts: int = 5, seed: int = 0) -> BaselineResult:
    """Matched-filter directions with simplex-projected gradient power control.

    Each restart takes ``steps`` normalised ascent steps of length
    ``0.25 P / (t + 1)``; the best iterate over all restarts is kept.
    """
    H = np.asarray(H, dtype=np.complex128)
    K = H.shape[0]
    D = H.conj().T / np.linalg.norm(H, axis=1)
    E = bc.link_gains(H, D)
    rng = np.random.default_rng(seed)
    starts = [np.full(K, power / K)] + [power * rng.dirichlet(np.ones(K)) for _ in range(restarts - 1)]
    best_u, best_p = -np.inf, starts[0]
    for p in starts:
        for t in range(steps + 1):
            u, g = _power_objective(E, p, noise_var, mode)
            if u > best_u:
                best_u, best_p = u, p
            if t == steps:
                break
            gn = np.abs(g).max()
            if gn == 0:
                break
            p = project_simplex(p + 0.25 * power / (t + 1) * g / gn, power)
    return _result(H, D * np.sqrt(best_p), mode, noise_var, steps * restarts)


# ---------------------------------------------------------- SINR balancing

def optimal_minrate(H: np.ndarray, power: float, noise_var: float = 1.0,
                    tol: float = DEFAULT_TOL, max_iter: int = BALANCING_MAX_ITER) -> BaselineResult:
    """Max-min fair beamforming by alternating uplink balancing and MMSE filters.

    Stops when the balanced SINR changes by less than ``tol`` (relative);
    downlink powers then come from the EVD recovery of the final ``q``.
    """
    H = np.asarray(H, dtype=np.complex128)
    K = H.shape[0]
    q = np.full(K, power / K)
    prev = -np.inf
    converged = False
    hist = []
    it = 0
    for it in range(1, max_iter + 1):
        dirs = bc.beam_directions_ul(H, q, noise_var)
        E = bc.link_gains(H, dirs)
        # uplink interference seen by user k comes from column k of E
        lam, x = power_iteration_max_eig(bc.gamma_matrix(E.T, np.ones(K), power, noise_var))
        q = x[:-1]
        sinr = 1.0 / lam
        hist.append(float(np.log2(1.0 + sinr)))
        if abs(sinr - prev) <= tol * sinr:
            converged = True
            break
        prev = sinr
    V = bc.recover_minrate_beams(H, q, power, noise_var)
    return _result(H, V, "min", noise_var, it, converged, hist)


# -------------------------------------------------------------- naive DNN

def matched_width(n_in: int, n_out: int, target: int) -> int:
    """Hidden width of a 2-hidden-layer net whose size is closest to ``target``."""
    # w^2 + w (n_in + n_out + 2) + n_out = target
    b = n_in + n_out + 2
    w = (-b + np.sqrt(b * b + 4.0 * (target - n_out))) / 2.0
    return max(1, int(round(w)))


@dataclass
class NaiveDnn:
    """Fully-connected map from vec(Re H, Im H) to beam features at one (N, K)."""

    N: int
    K: int
    net: DenseNet
    mode: str = "sum"

    def features_t(self, H: ad.ComplexPair, power: float) -> ad.Tensor:
        B, K, N = H.shape
        if (N, K) != (self.N, self.K):
            raise ShapeError(f"naive DNN built for (N,K)=({self.N},{self.K}), got ({N},{K})")
        x = ad.concat([ad.reshape(H.re, (B, K * N)), ad.reshape(H.im, (B, K * N))], axis=-1)
        f = 2 if self.mode == "sum" else 1
        raw = ad.reshape(self.net(x), (B, f, K))
        raw = ad.swapaxes(raw, 1, 2)
        total = ad.sum(raw, axis=1, keepdims=True)
        return raw * (power / total)

    def utilities_t(self, H: ad.ComplexPair, power: float, noise_var: float = 1.0) -> ad.Tensor:
        s = self.features_t(H, power)
        B, K = s.shape[:2]
        q = ad.reshape(s[:, :, -1], (B, K))
        if self.mode == "sum":
            p = ad.reshape(s[:, :, 0], (B, K))
            r = bc.rates_t(H, bc.recover_beams_t(H, p, q, noise_var), noise_var)
        else:
            r = bc.ul_rates_t(H, q, bc.directions_t(H, q, noise_var), noise_var)
        return bc.utility_t(r, self.mode)

    def solve(self, inst: BipartiteChannel) -> BaselineResult:
        s = self.features_t(bc.channel_pair(inst.H[None]), inst.power).values[0]
        if self.mode == "sum":
            V = bc.recover_beams(inst.H, s[:, 0], s[:, 1], inst.noise_var)
        else:
            V = bc.recover_minrate_beams(inst.H, s[:, 0], inst.power, inst.noise_var)
        return _result(inst.H, V, self.mode, inst.noise_var)


def naive_dnn_init(N: int, K: int, mode: str, param_budget: int,
                   rng: np.random.Generator) -> NaiveDnn:
    f = 2 if mode == "sum" else 1
    n_in, n_out = 2 * N * K, f * K
    w = matched_width(n_in, n_out, param_budget)
    net = init_dense([n_in, w, w, n_out], ["relu", "relu", "sigmoid"], rng)
    return NaiveDnn(N, K, net, mode)


def naive_dnn_train(N: int, K: int, scenario: ScenarioConfig, mode: str = "sum",
                    param_budget: int = 130_812, epochs: int = 10, batches: int = 20,
                    batch_size: int = 64, lr: float = 1e-3, seed: int = 0) -> NaiveDnn:
    """Train with the same unsupervised utility-ascent machinery as the BGNN."""
    model = naive_dnn_init(N, K, mode, param_budget, stream(seed, 0))
    state = AdamState(lr=lr)
    params = model.net.parameters()
    data_rng = stream(seed, 1)
    for _ in range(epochs * batches):
        H = np.stack([sample_fixed(scenario, N, K, data_rng).H for _ in range(batch_size)])
        with ad.Tape() as tape:
            obj = ad.sum(model.utilities_t(bc.channel_pair(H), scenario.power,
                                           scenario.noise_var)) / batch_size
        adam_step(params, tape.gradient(obj, params), state)
    return model


def naive_dnn_eval(model: NaiveDnn, instances) -> np.ndarray:
    return np.array([model.solve(inst).utility for inst in instances])

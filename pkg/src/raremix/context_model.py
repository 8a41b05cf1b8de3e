"""Rare-context Gaussian, likelihood-weighted target sampling, and rare-nucleus selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp


class ContextModelError(ValueError):
    pass


class PoolExhausted(ContextModelError):
    pass


@dataclass(frozen=True)
class RareContextModel:
    mean: np.ndarray
    covariance: np.ndarray  # regularized
    cholesky: np.ndarray  # lower factor of ``covariance``
    reg_eps: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_likelihood(self, x) -> np.ndarray | float:
        return log_likelihood(self, x)


def fit_rare_gaussian(X_r, reg_eps: float | None = None) -> RareContextModel:
    """Sample mean and unbiased covariance of the rare-context vectors, plus ``reg_eps * I``.

    With ``reg_eps=None`` the ridge is ``1e-6 * trace(cov) / p`` (or 1e-6 if the trace is 0).
    """
    X = np.atleast_2d(np.asarray(X_r, dtype=np.float64))
    n, p = X.shape
    if n < 2:
        raise ContextModelError(f"need at least 2 rare-context vectors, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    cov = 0.5 * (cov + cov.T)
    if reg_eps is None:
        tr = float(np.trace(cov))
        reg_eps = 1e-6 * tr / p if tr > 0 else 1e-6
    cov = cov + reg_eps * np.eye(p)
    L = np.linalg.cholesky(cov)
    return RareContextModel(mean=mean, covariance=cov, cholesky=L, reg_eps=float(reg_eps))


def log_likelihood(m: RareContextModel, x) -> np.ndarray | float:
    """Multivariate normal log-density; accepts one vector or an (n, p) stack."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != m.dim:
        raise ContextModelError(f"dimension mismatch: {X.shape[1]} vs model {m.dim}")
    z = solve_triangular(m.cholesky, (X - m.mean).T, lower=True)
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(m.cholesky)))
    ll = -0.5 * (m.dim * math.log(2 * math.pi) + logdet + maha)
    return float(ll[0]) if single else ll


def mahalanobis_sq(m: RareContextModel, x) -> float:
    d = np.asarray(x, dtype=np.float64) - m.mean
    return float(d @ cho_solve((m.cholesky, True), d))


class MixtureContextModel:
    """Experimental multi-component variant backed by scikit-learn's EM."""

    def __init__(self, X_r, n_components: int, seed: int = 0, reg_eps: float = 1e-6):
        from sklearn.mixture import GaussianMixture

        X = np.atleast_2d(np.asarray(X_r, dtype=np.float64))
        self.gmm = GaussianMixture(n_components=n_components, covariance_type="full",
                                   reg_covar=reg_eps, random_state=seed).fit(X)
        self.dim = X.shape[1]

    def log_likelihood(self, x):
        x = np.asarray(x, dtype=np.float64)
        ll = self.gmm.score_samples(np.atleast_2d(x))
        return float(ll[0]) if x.ndim == 1 else ll


@dataclass
class SelectionState:
    weights: dict[Hashable, float] = field(default_factory=dict)
    consumed_targets: set = field(default_factory=set)
    initial_weight: float = 1.0

    def weight(self, rare_id: Hashable) -> float:
        return self.weights.get(rare_id, self.initial_weight)

    def bump(self, rare_id: Hashable, by: float = 1.0) -> None:
        self.weights[rare_id] = self.weight(rare_id) + by


def _draw_categorical(logits: np.ndarray, rng: np.random.Generator) -> int:
    prob = np.exp(logits - logsumexp(logits))
    cdf = np.cumsum(prob)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


@dataclass(frozen=True)
class Target:
    key: Hashable
    kind: str  # "major" or "background"
    log_likelihood: float


def sample_targets(m, majors: Sequence[tuple[Hashable, np.ndarray]],
                   backgrounds: Sequence[tuple[Hashable, np.ndarray]], k: int,
                   state: SelectionState, rng: np.random.Generator,
                   replay: Iterable[Hashable] | None = None,
                   log_liks: dict | None = None) -> list[Target]:
    """Draw ``k`` unconsumed targets without replacement, P ∝ model density.

    ``replay`` forces the given key sequence instead of drawing (each key must still be
    an unconsumed pool member). ``log_liks`` may carry precomputed scores by key.
    """
    if k < 0:
        raise ContextModelError("k must be >= 0")
    pool = [(key, x, "major") for key, x in majors] + [(key, x, "background") for key, x in backgrounds]
    pool = [item for item in pool if item[0] not in state.consumed_targets]
    if k == 0:
        return []
    if k > len(pool):
        raise PoolExhausted(f"requested {k} targets but only {len(pool)} unconsumed candidates")
    keys = [item[0] for item in pool]
    kinds = [item[2] for item in pool]
    if log_liks is not None:
        ll = np.array([log_liks[key] for key in keys], dtype=np.float64)
    else:
        ll = np.atleast_1d(np.asarray(m.log_likelihood(np.stack([item[1] for item in pool])), dtype=np.float64))
    alive = np.ones(len(pool), dtype=bool)
    position = {key: i for i, key in enumerate(keys)}
    replay_iter = iter(replay) if replay is not None else None
    out = []
    for _ in range(k):
        if replay_iter is not None:
            try:
                key = next(replay_iter)
            except StopIteration:
                raise PoolExhausted("replay sequence shorter than k") from None
            i = position.get(key)
            if i is None or not alive[i]:
                raise ContextModelError(f"replayed target {key!r} is not an unconsumed candidate")
        else:
            live = np.nonzero(alive)[0]
            i = int(live[_draw_categorical(ll[live], rng)])
        alive[i] = False
        state.consumed_targets.add(keys[i])
        out.append(Target(key=keys[i], kind=kinds[i], log_likelihood=float(ll[i])))
    return out


def selection_log_probs(target_x, rare_x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """log p(rare_i | target) = -w_i D_i - logsumexp(-w D), D the L2 feature distance."""
    d = np.linalg.norm(np.asarray(rare_x, dtype=np.float64) - np.asarray(target_x, dtype=np.float64), axis=1)
    logits = -np.asarray(weights, dtype=np.float64) * d
    return logits - logsumexp(logits)


def selection_probs(target_x, rare_x, weights) -> np.ndarray:
    return np.exp(selection_log_probs(target_x, rare_x, weights))


def select_rare_nucleus(target_x, rare_pool: Sequence[tuple[Hashable, np.ndarray]],
                        state: SelectionState, rng: np.random.Generator) -> Hashable:
    if not rare_pool:
        raise ContextModelError("empty rare pool")
    ids = [rid for rid, _ in rare_pool]
    X = np.stack([x for _, x in rare_pool])
    w = np.array([state.weight(rid) for rid in ids])
    i = _draw_categorical(selection_log_probs(target_x, X, w), rng)
    state.bump(ids[i])
    return ids[i]

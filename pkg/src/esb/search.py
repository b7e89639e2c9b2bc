"""Sampling and exact enumeration of the marginal posterior over supports.

The chain is a Metropolis-Hastings walk on supports with add / remove /
swap moves targeting the closed-form marginal posterior of ``S``; ``sigma^2``
and ``beta`` are integrated out exactly and regenerated afterwards by
composition. Small problems can instead be enumerated exhaustively.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .core import (
    Dataset,
    HyperParams,
    ModelFit,
    ModelIndex,
    as_model,
    fit_from_factor,
    log_posterior_from_fit,
    sample_beta_given_S_sigma2,
    sample_sigma2_given_S,
)
from .errors import EmptySource, InitSingular, InputError, SingularGram, TooManyModels
from .linalg import chol_delete, chol_insert, cholesky_checked, count_supports
from .rng import make_rng

ENUMERATION_LIMIT = 10**6
_BLOCK = 1 << 15


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 20000
    burn_in: int = 2000
    seed: int = 0
    init_model: Union[str, Tuple[int, ...]] = "empty"
    move_probs: Tuple[float, float, float] = (0.4, 0.4, 0.2)
    chain_id: int = 0

    def __post_init__(self):
        if int(self.n_iter) < 1:
            raise InputError("n_iter must be positive")
        if not 0 <= int(self.burn_in) < int(self.n_iter):
            raise InputError("burn_in must satisfy 0 <= burn_in < n_iter")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        probs = tuple(float(q) for q in self.move_probs)
        if len(probs) != 3 or min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise InputError(f"move_probs must be three non-negative numbers summing to 1, got {probs}")
        if (probs[0] > 0) != (probs[1] > 0):
            raise InputError("add and remove moves must both be enabled or both disabled (reversibility)")
        object.__setattr__(self, "move_probs", probs)
        if not isinstance(self.init_model, str):
            object.__setattr__(self, "init_model", as_model(self.init_model))
        elif self.init_model != "empty":
            raise InputError(f"init_model must be 'empty' or a list of indices, got {self.init_model!r}")

    def to_dict(self) -> dict:
        return {
            "n_iter": self.n_iter,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "init_model": self.init_model if isinstance(self.init_model, str) else list(self.init_model),
            "move_probs": list(self.move_probs),
            "chain_id": self.chain_id,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ChainConfig":
        doc = dict(doc)
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown chain fields: {sorted(unknown)}")
        if "move_probs" in doc:
            doc["move_probs"] = tuple(doc["move_probs"])
        if isinstance(doc.get("init_model"), list):
            doc["init_model"] = tuple(doc["init_model"])
        return cls(**doc)


@dataclass(eq=False)
class PosteriorSamples:
    """Retained draws ``(S, sigma^2, beta_S)`` from one or more chains.

    ``beta_draws[i]`` holds the non-zero coefficients of draw ``i`` aligned
    with ``models[i]``.
    """

    p: int
    models: List[ModelIndex]
    sigma2_draws: np.ndarray
    beta_draws: List[np.ndarray]
    acceptance_rate: float
    chain_id: int = 0
    log_targets: Dict[ModelIndex, float] = field(default_factory=dict)

    def __len__(self):
        return len(self.models)

    def beta_matrix(self) -> np.ndarray:
        out = np.zeros((len(self), self.p))
        for i, (m, b) in enumerate(zip(self.models, self.beta_draws)):
            out[i, list(m)] = b
        return out

    def linear_functional(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([x[list(m)] @ b for m, b in zip(self.models, self.beta_draws)])

    def model_frequencies(self) -> Dict[ModelIndex, float]:
        counts: Dict[ModelIndex, int] = {}
        for m in self.models:
            counts[m] = counts.get(m, 0) + 1
        total = len(self.models)
        return {m: counts[m] / total for m in sorted(counts, key=_model_key)}

    def map_model(self) -> ModelIndex:
        """Visited model with the highest exact target value."""
        if not self.models:
            raise EmptySource("no draws")
        visited = set(self.models)
        if all(m in self.log_targets for m in visited):
            return max(sorted(visited, key=_model_key), key=lambda m: self.log_targets[m])
        freq = self.model_frequencies()
        return max(freq, key=freq.get)


@dataclass(eq=False)
class ModelPosteriorTable:
    """Exact normalised posterior probabilities of all supports with ``s <= R``.

    ``normalizer`` is the log-sum-exp of the unnormalised log posteriors.
    """

    p: int
    entries: Dict[ModelIndex, float]
    normalizer: float
    log_posteriors: Dict[ModelIndex, float] = field(default_factory=dict)
    singular: List[ModelIndex] = field(default_factory=list)

    def probability(self, model: Sequence[int]) -> float:
        return self.entries.get(tuple(model), 0.0)

    def map_model(self) -> ModelIndex:
        return max(self.entries, key=self.entries.get)


def _model_key(m):
    return (len(m), m)


# ---------------------------------------------------------------------------
# proposal


def move_weights(s: int, p: int, R: int, move_probs) -> Tuple[float, float, float]:
    """Add/remove/swap probabilities at a support of size ``s``, renormalised
    over the moves that are feasible there."""
    feasible = (s < min(R, p), s > 0, 0 < s < p)
    w = [q if ok else 0.0 for q, ok in zip(move_probs, feasible)]
    total = sum(w)
    if total <= 0:
        raise InputError(f"no feasible move at support size {s} with move_probs={tuple(move_probs)}")
    return w[0] / total, w[1] / total, w[2] / total


def proposal_log_prob(S: ModelIndex, S2: ModelIndex, p: int, R: int, move_probs) -> float:
    """Exact ``log q(S2 | S)`` of the neighbourhood proposal."""
    s = len(S)
    A, B = set(S), set(S2)
    w_add, w_rem, w_swap = move_weights(s, p, R, move_probs)
    if len(B) == s + 1 and A < B:
        return math.log(w_add) - math.log(p - s) if w_add > 0 else -math.inf
    if len(B) == s - 1 and B < A:
        return math.log(w_rem) - math.log(s) if w_rem > 0 else -math.inf
    if len(B) == s and len(A - B) == 1:
        return math.log(w_swap) - math.log(s * (p - s)) if w_swap > 0 else -math.inf
    return -math.inf


def _nth_outside(S: ModelIndex, k: int) -> int:
    """k-th smallest index (0-based) not in the sorted tuple S."""
    j = k
    for i in S:
        if i <= j:
            j += 1
        else:
            break
    return j


def _propose(S, p, R, move_probs, u0, u1, u2):
    """Deterministic proposal given three uniforms.

    Returns ``(S2, log_hastings, kind, changed_index)``.
    """
    s = len(S)
    w_add, w_rem, w_swap = move_weights(s, p, R, move_probs)
    if u0 < w_add:
        j = _nth_outside(S, min(int(u1 * (p - s)), p - s - 1))
        pos = bisect.bisect_left(S, j)
        S2 = S[:pos] + (j,) + S[pos:]
        rev = move_weights(s + 1, p, R, move_probs)[1]
        log_h = math.log(rev) - math.log(s + 1) - math.log(w_add) + math.log(p - s)
        return S2, log_h, "add", j
    if u0 < w_add + w_rem or w_swap == 0:
        pos = min(int(u1 * s), s - 1)
        j = S[pos]
        S2 = S[:pos] + S[pos + 1:]
        rev = move_weights(s - 1, p, R, move_probs)[0]
        log_h = math.log(rev) - math.log(p - s + 1) - math.log(w_rem) + math.log(s)
        return S2, log_h, "remove", j
    out = S[min(int(u1 * s), s - 1)]
    j = _nth_outside(S, min(int(u2 * (p - s)), p - s - 1))
    S2 = tuple(sorted([i for i in S if i != out] + [j]))
    return S2, 0.0, "swap", j


def propose_neighbor(S: ModelIndex, p: int, R: int, cfg: ChainConfig, rng) -> Tuple[ModelIndex, float]:
    """Propose a neighbouring support; returns ``(S2, log q(S|S2) - log q(S2|S))``."""
    u = rng.random(3)
    S2, log_h, _, _ = _propose(tuple(S), p, R, cfg.move_probs, *u)
    return S2, log_h


# ---------------------------------------------------------------------------
# target evaluation with cached, incrementally updated factors


class ModelSpace:
    """Caches fits and log targets per support for one (data, hyper) pair.

    Fits of a support reached from a cached parent by adding or removing one
    variable reuse the parent's Cholesky factor through an insert/delete
    update; anything else, or an update whose pivot degenerates, is
    refactored from scratch.
    """

    def __init__(self, data: Dataset, hyper: HyperParams, max_fits: int = 200_000):
        self.data = data
        self.hyper = hyper.resolve(data.n, data.p)
        self.max_fits = max_fits
        self._fits: Dict[ModelIndex, Optional[ModelFit]] = {}
        self._logp: Dict[ModelIndex, float] = {}

    def fit(self, model: ModelIndex, parent: Optional[ModelIndex] = None) -> Optional[ModelFit]:
        """Fit for ``model``, or None if its Gram matrix is singular."""
        try:
            return self._fits[model]
        except KeyError:
            pass
        d = self.data
        L = None
        pfit = self._fits.get(parent) if parent is not None else None
        if pfit is not None:
            if len(model) == pfit.size + 1:
                (j,) = set(model) - set(parent)
                pos = model.index(j)
                col = d.gram((j,), parent)[0]
                L = chol_insert(pfit.gram_factor, pos, col, d.gram_diag(model))
            elif len(model) == pfit.size - 1:
                (j,) = set(parent) - set(model)
                L = chol_delete(pfit.gram_factor, parent.index(j), d.gram_diag(model))
        try:
            if L is None:
                L = cholesky_checked(d.gram(model, model), model) if model else np.zeros((0, 0))
            fit = fit_from_factor(d, model, L)
        except SingularGram:
            fit = None
        if len(self._fits) >= self.max_fits:
            self._fits.clear()
        self._fits[model] = fit
        return fit

    def log_target(self, model: ModelIndex, parent: Optional[ModelIndex] = None) -> float:
        try:
            return self._logp[model]
        except KeyError:
            pass
        if len(model) > self.hyper.R:
            value = -math.inf
        else:
            fit = self.fit(model, parent)
            value = -math.inf if fit is None else log_posterior_from_fit(fit, self.hyper, self.data.p)
        self._logp[model] = value
        return value

    @property
    def log_targets(self) -> Dict[ModelIndex, float]:
        return self._logp


def mh_step(state: ModelIndex, d: Dataset, h: HyperParams, cfg: ChainConfig, rng,
            space: Optional[ModelSpace] = None) -> Tuple[ModelIndex, bool]:
    """One Metropolis-Hastings transition on the support space.

    Proposals with a singular Gram matrix have target ``-inf`` and are
    always rejected.
    """
    space = space or ModelSpace(d, h)
    state = tuple(state)
    u = rng.random(4)
    S2, log_h, _, _ = _propose(state, d.p, space.hyper.R, cfg.move_probs, u[0], u[1], u[2])
    log_ratio = space.log_target(S2, state) - space.log_target(state) + log_h
    if log_ratio >= 0 or math.log(u[3]) < log_ratio:
        return S2, True
    return state, False


def _compose_draws(space: ModelSpace, models: List[ModelIndex], rng):
    """Regenerate ``(sigma^2, beta_S)`` for every retained support, batched per support."""
    positions: Dict[ModelIndex, List[int]] = {}
    for i, m in enumerate(models):
        positions.setdefault(m, []).append(i)
    sigma2 = np.empty(len(models))
    betas: List[Optional[np.ndarray]] = [None] * len(models)
    for m in sorted(positions, key=_model_key):
        idx = positions[m]
        fit = space.fit(m)
        s2 = sample_sigma2_given_S(fit, space.hyper, rng, size=len(idx))
        b = sample_beta_given_S_sigma2(fit, s2, space.hyper, rng)
        sigma2[idx] = s2
        for k, i in enumerate(idx):
            betas[i] = b[k]
    return sigma2, betas


def run_chain(d: Dataset, h: HyperParams, cfg: ChainConfig, space: Optional[ModelSpace] = None) -> PosteriorSamples:
    """Run one chain and return its post burn-in draws.

    The model walk uses the stream ``(seed, chain_id, 0)`` and the
    composition draws use ``(seed, chain_id, 1)``; output is a pure function
    of the inputs.
    """
    space = space or ModelSpace(d, h)
    R = space.hyper.R
    p = d.p
    probs = cfg.move_probs
    rng = make_rng(cfg.seed, cfg.chain_id, 0)

    state = () if isinstance(cfg.init_model, str) else as_model(cfg.init_model, p)
    if len(state) > R:
        raise InputError(f"init_model has {len(state)} > R={R} variables")
    current = space.log_target(state)
    if current == -math.inf:
        raise InitSingular(state)

    kept: List[ModelIndex] = []
    accepted = 0
    it = 0
    while it < cfg.n_iter:
        m = min(_BLOCK, cfg.n_iter - it)
        U = rng.random((m, 3))
        logu = np.log(rng.random(m))
        for k in range(m):
            u0, u1, u2 = U[k]
            S2, log_h, _, _ = _propose(state, p, R, probs, u0, u1, u2)
            proposed = space.log_target(S2, state)
            if proposed != -math.inf and logu[k] < proposed - current + log_h:
                state, current = S2, proposed
                accepted += 1
            if it + k >= cfg.burn_in:
                kept.append(state)
        it += m

    sigma2, betas = _compose_draws(space, kept, make_rng(cfg.seed, cfg.chain_id, 1))
    visited = set(kept)
    return PosteriorSamples(
        p=p,
        models=kept,
        sigma2_draws=sigma2,
        beta_draws=betas,
        acceptance_rate=accepted / cfg.n_iter,
        chain_id=cfg.chain_id,
        log_targets={m: space.log_targets[m] for m in sorted(visited, key=_model_key)},
    )


def merge_samples(parts: Sequence[PosteriorSamples]) -> PosteriorSamples:
    """Concatenate chains in ``chain_id`` order (independent of input order)."""
    if not parts:
        raise EmptySource("nothing to merge")
    parts = sorted(parts, key=lambda s: s.chain_id)
    total = sum(len(s) for s in parts)
    logt: Dict[ModelIndex, float] = {}
    for s in parts:
        logt.update(s.log_targets)
    return PosteriorSamples(
        p=parts[0].p,
        models=[m for s in parts for m in s.models],
        sigma2_draws=np.concatenate([s.sigma2_draws for s in parts]),
        beta_draws=[b for s in parts for b in s.beta_draws],
        acceptance_rate=sum(s.acceptance_rate * len(s) for s in parts) / max(total, 1),
        chain_id=parts[0].chain_id,
        log_targets={m: logt[m] for m in sorted(logt, key=_model_key)},
    )


# ---------------------------------------------------------------------------
# exact enumeration


def enumerate_posterior(d: Dataset, h: HyperParams, limit: int = ENUMERATION_LIMIT) -> ModelPosteriorTable:
    """Exact posterior over every support with ``|S| <= R``.

    Supports with a singular Gram matrix get probability zero and are listed
    in ``singular``. Raises :class:`TooManyModels` beyond ``limit`` supports.
    """
    space = ModelSpace(d, h, max_fits=10**9)
    R, p = space.hyper.R, d.p
    count = count_supports(p, R)
    if count > limit:
        raise TooManyModels(count, limit)

    logp: Dict[ModelIndex, float] = {}
    # depth-first so each child reuses its parent's factor
    stack: List[ModelIndex] = [()]
    while stack:
        m = stack.pop()
        parent = m[:-1] if m else None
        logp[m] = space.log_target(m, parent)
        if len(m) < R:
            start = m[-1] + 1 if m else 0
            stack.extend(m + (j,) for j in range(p - 1, start - 1, -1))
    models = sorted(logp, key=_model_key)
    values = np.array([logp[m] for m in models])
    norm = float(logsumexp(values))
    probs = np.exp(values - norm)
    return ModelPosteriorTable(
        p=p,
        entries={m: float(q) for m, q in zip(models, probs)},
        normalizer=norm,
        log_posteriors={m: float(v) for m, v in zip(models, values)},
        singular=[m for m, v in zip(models, values) if v == -math.inf],
    )


def inclusion_probabilities(src: Union[PosteriorSamples, ModelPosteriorTable]) -> np.ndarray:
    """Posterior probability that each variable is in the support."""
    if isinstance(src, ModelPosteriorTable):
        if not src.entries:
            raise EmptySource("empty table")
        weights = src.entries
    else:
        if len(src) == 0:
            raise EmptySource("no draws")
        weights = src.model_frequencies()
    out = np.zeros(src.p)
    for m, w in weights.items():
        out[list(m)] += w
    return np.clip(out, 0.0, 1.0)


def sample_from_table(table: ModelPosteriorTable, d: Dataset, h: HyperParams, n_draws: int, rng) -> PosteriorSamples:
    """I.i.d. posterior draws using the exact table for the support."""
    models = [m for m in table.entries if table.entries[m] > 0]
    if not models:
        raise EmptySource("empty table")
    probs = np.array([table.entries[m] for m in models])
    picks = rng.choice(len(models), size=n_draws, p=probs / probs.sum())
    chosen = [models[i] for i in picks]
    space = ModelSpace(d, h)
    sigma2, betas = _compose_draws(space, chosen, rng)
    return PosteriorSamples(
        p=d.p,
        models=chosen,
        sigma2_draws=sigma2,
        beta_draws=betas,
        acceptance_rate=1.0,
        log_targets={m: table.log_posteriors.get(m, -math.inf) for m in sorted(set(chosen), key=_model_key)},
    )

"""Posterior predictive laws and credible intervals for linear functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Union

import numpy as np
from scipy import optimize, stats
from scipy.linalg import solve_triangular

from .core import Dataset, HyperParams, ModelIndex, fit_support, sigma2_posterior_params
from .errors import DimensionMismatch, EmptySource, InputError
from .search import ModelPosteriorTable, PosteriorSamples


@dataclass(frozen=True, eq=False)
class PredictiveSpec:
    """Multivariate t law of ``y_tilde`` given a support."""

    df: float
    location: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if not self.df > 0:
            raise InputError("df must be positive")
        S = np.asarray(self.scale)
        if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise InputError("scale matrix must be symmetric")
        np.linalg.cholesky(S)

    @property
    def dim(self) -> int:
        return self.location.shape[0]

    def sample(self, rng, size: int) -> np.ndarray:
        L = np.linalg.cholesky(self.scale)
        z = rng.standard_normal((size, self.dim))
        w = np.sqrt(self.df / rng.chisquare(self.df, size=size))
        return self.location + (z @ L.T) * w[:, None]

    def logpdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return stats.multivariate_t(self.location, self.scale, df=self.df).logpdf(y)

    def marginal_variance(self) -> np.ndarray:
        if self.df <= 2:
            return np.full(self.dim, math.inf)
        return np.diag(self.scale) * self.df / (self.df - 2)


@dataclass(frozen=True)
class CredibleInterval:
    level: float
    lower: float
    upper: float
    one_sided_upper: float


def predictive_given_S(d: Dataset, S, h: HyperParams, Xtilde) -> PredictiveSpec:
    """Predictive t law of responses at the rows of ``Xtilde`` given ``S``.

    The projector uses the training Gram matrix ``X_S^T X_S``; this is the
    law obtained by integrating the conditional normal posterior of
    ``beta_S`` and the inverse-gamma posterior of ``sigma^2``.
    """
    Xt = np.atleast_2d(np.asarray(Xtilde, dtype=float))
    if Xt.shape[1] != d.p:
        raise DimensionMismatch(f"Xtilde has {Xt.shape[1]} columns, expected {d.p}")
    fit = fit_support(d, S)
    shape, rate = sigma2_posterior_params(fit, h)
    k = Xt.shape[0]
    if fit.size:
        Xs = Xt[:, list(fit.model)]
        W = solve_triangular(fit.gram_factor, Xs.T, lower=True)
        proj = W.T @ W
        loc = Xs @ fit.beta_hat
    else:
        proj = np.zeros((k, k))
        loc = np.zeros(k)
    scale = (rate / shape) * (np.eye(k) + proj / (h.alpha + h.gamma))
    scale = 0.5 * (scale + scale.T)
    return PredictiveSpec(df=2 * h.a0 + h.alpha * d.n, location=loc, scale=scale)


def _model_weights(src) -> Dict[ModelIndex, float]:
    if isinstance(src, ModelPosteriorTable):
        w = {m: q for m, q in src.entries.items() if q > 0}
    else:
        w = src.model_frequencies()
    if not w:
        raise EmptySource("empty posterior source")
    return w


def predictive_mixture_sample(src: Union[PosteriorSamples, ModelPosteriorTable], d: Dataset, h: HyperParams,
                              Xtilde, n_draws: int, rng) -> np.ndarray:
    """Draws from the model-averaged predictive distribution.

    Table sources pick the support by its probability; chain sources reuse
    the chain's supports in sequence (cycling) so the draws follow the
    chain's empirical measure.
    """
    if isinstance(src, ModelPosteriorTable):
        weights = _model_weights(src)
        models = list(weights)
        probs = np.array([weights[m] for m in models])
        picks = [models[i] for i in rng.choice(len(models), size=n_draws, p=probs / probs.sum())]
    else:
        if len(src) == 0:
            raise EmptySource("no draws")
        picks = [src.models[i % len(src)] for i in range(n_draws)]
    Xt = np.atleast_2d(np.asarray(Xtilde, dtype=float))
    out = np.empty((n_draws, Xt.shape[0]))
    groups: Dict[ModelIndex, list] = {}
    for i, m in enumerate(picks):
        groups.setdefault(m, []).append(i)
    for m in sorted(groups, key=lambda m: (len(m), m)):
        idx = groups[m]
        out[idx] = predictive_given_S(d, m, h, Xt).sample(rng, len(idx))
    return out


def predictive_summary(src, d: Dataset, h: HyperParams, Xtilde, level: float = 0.95):
    """Per-row mean, variance and equal-tailed interval of the mixture predictive.

    Intervals invert the exact mixture CDF of the univariate t marginals.
    """
    if not 0 < level < 1:
        raise InputError("level must lie in (0, 1)")
    weights = _model_weights(src)
    Xt = np.atleast_2d(np.asarray(Xtilde, dtype=float))
    specs = [(w, predictive_given_S(d, m, h, Xt)) for m, w in weights.items()]
    total = sum(w for w, _ in specs)
    rows = []
    for i in range(Xt.shape[0]):
        comps = [(w / total, sp.location[i], math.sqrt(sp.scale[i, i]), sp.df) for w, sp in specs]
        mean = sum(w * mu for w, mu, _, _ in comps)
        second = sum(w * (sd * sd * df / (df - 2) + mu * mu) if df > 2 else math.inf for w, mu, sd, df in comps)
        rows.append({
            "mean": mean,
            "variance": second - mean * mean,
            "lower": _mixture_quantile(comps, (1 - level) / 2),
            "upper": _mixture_quantile(comps, (1 + level) / 2),
        })
    return rows


def _mixture_quantile(comps, q):
    def cdf(t):
        return sum(w * stats.t.cdf((t - mu) / sd, df) for w, mu, sd, df in comps) - q

    lo = min(mu + sd * stats.t.ppf(q, df) for _, mu, sd, df in comps)
    hi = max(mu + sd * stats.t.ppf(q, df) for _, mu, sd, df in comps)
    if hi - lo < 1e-300:
        return lo
    return optimize.brentq(cdf, lo, hi, xtol=1e-12, rtol=1e-12)


def linear_functional_interval(src: PosteriorSamples, x, level: float) -> CredibleInterval:
    """Equal-tailed interval for ``x^T beta`` from posterior draws.

    ``one_sided_upper`` is the empirical ``level``-quantile, i.e. the
    smallest ``t`` with posterior ``P(x^T beta <= t) >= level``.
    """
    if not 0 < level < 1:
        raise InputError("level must lie in (0, 1)")
    if len(src) == 0:
        raise EmptySource("no draws")
    x = np.asarray(x, dtype=float)
    if x.shape != (src.p,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({src.p},)")
    vals = src.linear_functional(x)
    g = 1.0 - level
    lo, hi, one = np.quantile(vals, [g / 2, 1 - g / 2, 1 - g])
    return CredibleInterval(level=level, lower=float(lo), upper=float(hi), one_sided_upper=float(one))

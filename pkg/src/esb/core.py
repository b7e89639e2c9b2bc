"""Data model and closed-form posterior quantities for the empirical prior.

For a support ``S`` the prior centres ``beta_S`` at the least-squares fit
with covariance ``sigma^2 / gamma * (X_S^T X_S)^{-1}``, ``sigma^2`` is
inverse gamma ``IG(a0, b0)`` and ``pi(S)`` is proportional to
``C(p, s)^{-1} (c p^a)^{-s}`` on ``s <= R``. Combined with the likelihood
raised to the power ``alpha`` every conditional is conjugate:

* ``sigma^2 | S``            ~ IG(a0 + alpha n / 2, b0 + alpha RSS_S / 2)
* ``beta_S | S, sigma^2``    ~ N(beta_hat_S, sigma^2 / (alpha + gamma) (X_S^T X_S)^{-1})
* ``beta_S | S``             ~ multivariate t with 2 a0 + alpha n degrees of freedom
* ``pi^n(S)``                ∝ pi(S) (gamma / (alpha + gamma))^{s/2} (b0 + alpha RSS_S / 2)^{-(a0 + alpha n / 2)}

Log model priors drop the normalizer of ``f_n``; it is constant in ``S``
and cancels in every ratio used downstream.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

from .errors import DimensionMismatch, InputError, OutOfRange
from .linalg import cholesky_checked, log_binom

ModelIndex = Tuple[int, ...]

#: designs with at most this many columns get a precomputed X^T X
GRAM_CACHE_MAX_P = 4000


def as_model(indices: Sequence[int], p: Optional[int] = None) -> ModelIndex:
    """Validate a support and return it as a sorted tuple."""
    model = tuple(int(i) for i in indices)
    if any(b <= a for a, b in zip(model, model[1:])):
        raise InputError(f"support indices must be strictly increasing: {list(model)}")
    if model and (model[0] < 0 or (p is not None and model[-1] >= p)):
        raise InputError(f"support indices out of range [0, {p}): {list(model)}")
    return model


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response ``y`` (length n) and design ``X`` (n x p)."""

    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.ndim != 2:
            raise DimensionMismatch("y must be a vector and X a matrix")
        if y.shape[0] < 1 or X.shape[1] < 1:
            raise InputError("need n >= 1 and p >= 1")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but y has length {y.shape[0]}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InputError("data contain non-finite entries")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @cached_property
    def Xty(self) -> np.ndarray:
        return self.X.T @ self.y

    @cached_property
    def yty(self) -> float:
        return float(self.y @ self.y)

    @cached_property
    def _XtX(self) -> Optional[np.ndarray]:
        if self.p > GRAM_CACHE_MAX_P:
            return None
        return self.X.T @ self.X

    def gram(self, rows: ModelIndex, cols: ModelIndex) -> np.ndarray:
        """Block ``X[:, rows]^T X[:, cols]`` of the Gram matrix."""
        G = self._XtX
        r, c = list(rows), list(cols)
        if G is not None:
            return G[np.ix_(r, c)]
        return self.X[:, r].T @ self.X[:, c]

    def gram_diag(self, cols: ModelIndex) -> np.ndarray:
        G = self._XtX
        if G is not None:
            return G[list(cols), list(cols)]
        Xs = self.X[:, list(cols)]
        return np.einsum("ij,ij->j", Xs, Xs)

    def permuted(self, perm: Sequence[int]) -> "Dataset":
        return Dataset(self.y, self.X[:, list(perm)])


@dataclass(frozen=True)
class HyperParams:
    """Tuning constants of the prior and the fractional likelihood.

    ``R=None`` means "resolve against the data" as ``min(n - 1, p)``
    (at least 1); see :meth:`resolve`.
    """

    alpha: float = 0.99
    gamma: float = 0.005
    a0: float = 0.01
    b0: float = 0.01
    c: float = 1.0
    a: float = 1.0
    R: Optional[int] = None

    def __post_init__(self):
        validate_hyperparams(self)

    @property
    def flags(self) -> Tuple[str, ...]:
        return ("alpha+gamma>1",) if self.alpha + self.gamma > 1 else ()

    def resolve(self, n: int, p: int) -> "HyperParams":
        """Materialise ``R`` for an n x p design and check ``R <= min(n, p)``."""
        if self.R is None:
            return replace(self, R=max(1, min(n - 1, p)))
        if self.R > min(n, p):
            raise OutOfRange("R", f"R={self.R} exceeds min(n, p)={min(n, p)}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "HyperParams":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown hyperparameter fields: {sorted(unknown)}")
        return cls(**doc)


def validate_hyperparams(h: HyperParams) -> HyperParams:
    """Check range constraints; ``alpha + gamma > 1`` is allowed but flagged
    through :attr:`HyperParams.flags`."""
    for name in ("alpha", "gamma", "a0", "b0", "c", "a"):
        v = getattr(h, name)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise OutOfRange(name, f"{name} must be a finite real, got {v!r}")
    if not 0 < h.alpha < 1:
        raise OutOfRange("alpha", f"alpha must lie in (0, 1), got {h.alpha}")
    for name in ("gamma", "a0", "b0", "c", "a"):
        if getattr(h, name) <= 0:
            raise OutOfRange(name, f"{name} must be > 0, got {getattr(h, name)}")
    if h.R is not None:
        if isinstance(h.R, bool) or not isinstance(h.R, (int, np.integer)) or h.R < 1:
            raise OutOfRange("R", f"R must be a positive integer, got {h.R!r}")
    return h


@dataclass(frozen=True, eq=False)
class ModelFit:
    """Least-squares quantities for one support."""

    model: ModelIndex
    beta_hat: np.ndarray
    rss: float
    gram_factor: np.ndarray
    log_det_gram: float
    n_obs: int

    @property
    def size(self) -> int:
        return len(self.model)


@dataclass(frozen=True, eq=False)
class ConditionalBetaLaw:
    """Multivariate t law of ``beta_S`` given ``S``.

    The scale matrix is ``scale_factor * (F F^T)^{-1}`` where ``F`` is
    ``precision_factor`` (the Gram factor times ``sqrt(alpha + gamma)``).
    """

    location: np.ndarray
    scale_factor: float
    precision_factor: np.ndarray
    df: float

    @property
    def dim(self) -> int:
        return self.location.shape[0]

    @property
    def shape_inverse(self) -> np.ndarray:
        """``(alpha + gamma) X_S^T X_S``, the inverse of the shape matrix."""
        return self.precision_factor @ self.precision_factor.T

    def scale_matrix(self) -> np.ndarray:
        F = self.precision_factor
        Finv = solve_triangular(F, np.eye(self.dim), lower=True)
        return self.scale_factor * (Finv.T @ Finv)

    def logpdf(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        s = self.dim
        if beta.shape[-1:] != (s,):
            raise DimensionMismatch(f"beta has shape {beta.shape}, expected (..., {s})")
        nu = self.df
        diff = beta - self.location
        w = diff @ self.precision_factor
        maha = np.sum(w * w, axis=-1) / self.scale_factor
        log_det = s * math.log(self.scale_factor) - 2.0 * np.sum(np.log(np.diag(self.precision_factor)))
        const = gammaln((nu + s) / 2) - gammaln(nu / 2) - 0.5 * s * math.log(nu * math.pi) - 0.5 * log_det
        return const - 0.5 * (nu + s) * np.log1p(maha / nu)


def fit_from_factor(d: Dataset, model: ModelIndex, L: np.ndarray) -> ModelFit:
    """Assemble a :class:`ModelFit` from an already computed Gram factor."""
    if not model:
        return ModelFit((), np.zeros(0), d.yty, np.zeros((0, 0)), 0.0, d.n)
    idx = list(model)
    beta_hat = cho_solve((L, True), d.Xty[idx])
    resid = d.y - d.X[:, idx] @ beta_hat
    L = np.array(L)
    L.setflags(write=False)
    beta_hat.setflags(write=False)
    return ModelFit(
        model=model,
        beta_hat=beta_hat,
        rss=float(resid @ resid),
        gram_factor=L,
        log_det_gram=float(2.0 * np.sum(np.log(np.diag(L)))),
        n_obs=d.n,
    )


def fit_support(d: Dataset, S: Sequence[int], R: Optional[int] = None) -> ModelFit:
    """Least-squares fit of ``y`` on the columns in ``S``.

    Raises :class:`SingularGram` if ``X_S^T X_S`` fails the relative pivot
    test; a singular support is an input error and is never regularised.
    """
    model = as_model(S, d.p)
    if R is not None and len(model) > R:
        raise OutOfRange("R", f"|S|={len(model)} exceeds R={R}")
    if not model:
        return fit_from_factor(d, model, np.zeros((0, 0)))
    L = cholesky_checked(d.gram(model, model), model)
    return fit_from_factor(d, model, L)


def log_model_prior(S: Sequence[int], h: HyperParams, p: int) -> float:
    """``-log C(p, s) - s (log c + a log p)``, up to an S-independent constant."""
    s = len(S)
    if h.R is not None and s > h.R:
        return -math.inf
    return -log_binom(p, s) - s * (math.log(h.c) + h.a * math.log(p))


def log_posterior_from_fit(fit: ModelFit, h: HyperParams, p: int) -> float:
    s = fit.size
    n = fit.n_obs
    return (
        log_model_prior(fit.model, h, p)
        + 0.5 * s * math.log(h.gamma / (h.alpha + h.gamma))
        - (h.a0 + 0.5 * h.alpha * n) * math.log(h.b0 + 0.5 * h.alpha * fit.rss)
    )


def log_model_posterior_unnorm(d: Dataset, S: Sequence[int], h: HyperParams) -> float:
    """Unnormalised log marginal posterior of the support ``S``."""
    return log_posterior_from_fit(fit_support(d, S, h.R), h, d.p)


def sigma2_posterior_params(fit: ModelFit, h: HyperParams) -> Tuple[float, float]:
    """Shape and scale of the inverse-gamma law of ``sigma^2`` given ``S``."""
    return h.a0 + 0.5 * h.alpha * fit.n_obs, h.b0 + 0.5 * h.alpha * fit.rss


def sample_sigma2_given_S(fit: ModelFit, h: HyperParams, rng, size=None):
    shape, scale = sigma2_posterior_params(fit, h)
    return scale / rng.gamma(shape, size=size)


def sample_beta_given_S_sigma2(fit: ModelFit, sigma2, h: HyperParams, rng) -> np.ndarray:
    """Draw ``beta_S ~ N(beta_hat, sigma2 / (alpha + gamma) (X_S^T X_S)^{-1})``.

    ``sigma2`` may be a scalar (returns shape ``(s,)``) or a vector of ``k``
    variances (returns ``(k, s)``, one draw per variance).
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    s = fit.size
    k = 1 if sigma2.ndim == 0 else sigma2.shape[0]
    z = rng.standard_normal((k, s))
    if s == 0:
        out = np.zeros((k, 0))
    else:
        # L^{-T} z has covariance (L L^T)^{-1}
        w = solve_triangular(fit.gram_factor, z.T, lower=True, trans="T").T
        out = fit.beta_hat + np.sqrt(sigma2.reshape(-1, 1) / (h.alpha + h.gamma)) * w
    return out[0] if sigma2.ndim == 0 else out


def conditional_beta_law(fit: ModelFit, h: HyperParams) -> ConditionalBetaLaw:
    df = 2 * h.a0 + h.alpha * fit.n_obs
    scale = (2 * h.b0 + h.alpha * fit.rss) / df
    return ConditionalBetaLaw(
        location=fit.beta_hat,
        scale_factor=scale,
        precision_factor=math.sqrt(h.alpha + h.gamma) * fit.gram_factor,
        df=df,
    )


def log_density_beta_given_S(fit: ModelFit, beta_S, h: HyperParams):
    """Log density of the multivariate t law of ``beta_S`` given ``S``."""
    return conditional_beta_law(fit, h).logpdf(beta_S)

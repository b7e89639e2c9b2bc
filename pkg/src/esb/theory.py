"""Monte Carlo and brute-force checks of the quantitative ingredients behind
the asymptotic results: chi-squared tail bounds, the restricted eigenvalue
of a design, Bernstein-von Mises distances and contraction metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, optimize, stats
from scipy.special import betaln, gammaln

from .core import Dataset, HyperParams, ModelIndex, as_model, fit_support
from .errors import EmptySource, InputError, TooManySupports
from .linalg import count_supports
from .rng import make_rng
from .search import ModelPosteriorTable, PosteriorSamples

MIN_MC = 10**4
KAPPA_LIMIT = 10**6


@dataclass(frozen=True)
class TailBoundReport:
    """Empirical tail frequency of a chi-squared event against its bound.

    ``passed`` means ``empirical_prob <= bound_value + 3 * mc_se``.
    ``exact_prob`` is the same event under the exact distribution function
    and is reported for cross-checking only.
    """

    check: str
    df: int
    noncentrality: float
    threshold: float
    empirical_prob: float
    bound_value: float
    n_mc: int
    mc_se: float
    passed: bool
    vacuous: bool
    exact_prob: float

    def to_dict(self):
        return asdict(self)


def _tail_report(check, df, lam, threshold, hits, n_mc, bound, exact):
    emp = hits / n_mc
    se = math.sqrt(emp * (1 - emp) / n_mc)
    return TailBoundReport(
        check=check, df=int(df), noncentrality=float(lam), threshold=float(threshold),
        empirical_prob=emp, bound_value=float(bound), n_mc=int(n_mc), mc_se=se,
        passed=bool(emp <= bound + 3 * se), vacuous=bool(bound >= 1), exact_prob=float(exact),
    )


def _check_mc(p, n_mc):
    if p < 1:
        raise InputError("degrees of freedom must be >= 1")
    if n_mc < MIN_MC:
        raise InputError(f"n_mc must be at least {MIN_MC}")


def check_central_tail(p: int, a: float, n_mc: int, rng) -> TailBoundReport:
    """Two-sided deviation ``P(|chi2_p - p| > a)`` against ``2 exp(-a^2 / 4p)``."""
    _check_mc(p, n_mc)
    if a <= 0:
        raise InputError("a must be positive")
    x = rng.chisquare(p, size=n_mc)
    hits = int(np.count_nonzero(np.abs(x - p) > a))
    exact = stats.chi2.sf(p + a, p) + stats.chi2.cdf(p - a, p)
    return _tail_report("central_two_sided", p, 0.0, a, hits, n_mc, 2 * math.exp(-a * a / (4 * p)), exact)


def _ncx2(rng, p, lam, n_mc):
    return rng.noncentral_chisquare(p, lam, size=n_mc) if lam > 0 else rng.chisquare(p, size=n_mc)


def _ncx2_cdf(x, p, lam):
    return stats.ncx2.cdf(x, p, lam) if lam > 0 else stats.chi2.cdf(x, p)


@dataclass(frozen=True)
class RateShapeReport:
    """Rate-shape check of ``P(chi2_p(lam) <= omega lam) <= c1 / lam * exp(-lam (1 - omega)^2 / 8)``.

    The unknown constant is fitted as the largest value of
    ``log P + lam (1 - omega)^2 / 8 + log lam`` over the first half of the
    grid (calibration); the check passes when no point in the second half
    (validation) exceeds it by more than three Monte Carlo standard errors
    on the log scale. Points with zero empirical frequency pass trivially.
    """

    df: int
    omega: float
    lambdas: List[float]
    empirical: List[float]
    shape_values: List[Optional[float]]
    log_c1: float
    n_mc: int
    passed: bool

    def to_dict(self):
        return asdict(self)


def check_rate_shape(p: int, omega: float, lambdas: Sequence[float], n_mc: int, rng) -> RateShapeReport:
    _check_mc(p, n_mc)
    if not omega < 1:
        raise InputError("omega must be < 1")
    lambdas = sorted(float(l) for l in lambdas if l > 0)
    if len(lambdas) < 4:
        raise InputError("need at least four positive noncentralities")
    rate = (1 - omega) ** 2 / 8
    emp, g, tol = [], [], []
    for lam in lambdas:
        q = float(np.mean(_ncx2(rng, p, lam, n_mc) <= omega * lam))
        emp.append(q)
        if q > 0:
            g.append(math.log(q) + lam * rate + math.log(lam))
            tol.append(3 * math.sqrt((1 - q) / (n_mc * q)))
        else:
            g.append(None)
            tol.append(0.0)
    half = len(lambdas) // 2
    calib = [v for v in g[:half] if v is not None]
    log_c1 = max(calib) if calib else -math.inf
    passed = bool(calib) and all(v is None or v <= log_c1 + t for v, t in zip(g[half:], tol[half:]))
    return RateShapeReport(df=int(p), omega=float(omega), lambdas=lambdas, empirical=emp,
                           shape_values=g, log_c1=float(log_c1), n_mc=int(n_mc), passed=passed)


def default_rate_grid(p: int, omega: float) -> List[float]:
    """Noncentralities where the lower-tail event is visible at 1e5 draws."""
    top = 12.0 / max((1 - math.sqrt(max(omega, 0.0))) ** 2, 1e-3) + 2 * p
    return list(np.linspace(top / 10, top, 10))


def _deviation_reports(x, p, lam, c):
    n_mc = len(x)
    t = c / (p + lam)
    rep_i = _tail_report(
        "noncentral_upper", p, lam, c, int(np.count_nonzero(x - (p + lam) > c)), n_mc,
        math.exp(-0.5 * p * (t - math.log1p(t))), 1.0 - _ncx2_cdf(p + lam + c, p, lam))
    rep_iii = _tail_report(
        "noncentral_lower", p, lam, c, int(np.count_nonzero(x - p <= -c)), n_mc,
        math.exp(-c * c / (4 * p)), _ncx2_cdf(p - c, p, lam) if p - c >= 0 else 0.0)
    return rep_i, rep_iii


def check_noncentral_bounds(p: int, lam: float, c: float, omega: float, n_mc: int, rng,
                            lambdas: Optional[Sequence[float]] = None
                            ) -> Tuple[TailBoundReport, TailBoundReport, TailBoundReport, RateShapeReport]:
    """Upper deviation, lower-tail rate and lower deviation checks of a
    noncentral chi-squared variable.

    Returns reports for the upper deviation bound
    ``exp(-p/2 (t - log(1 + t)))`` with ``t = c / (p + lam)``, the lower
    tail ``P(X <= omega lam)`` evaluated against the fitted rate-shape
    constant, the lower deviation bound ``exp(-c^2 / 4p)``, and the
    rate-shape report itself.
    """
    _check_mc(p, n_mc)
    if lam < 0 or c <= 0:
        raise InputError("need lam >= 0 and c > 0")
    if not omega < 1:
        raise InputError("omega must be < 1")
    x = _ncx2(rng, p, lam, n_mc)
    rep_i, rep_iii = _deviation_reports(x, p, lam, c)

    shape = check_rate_shape(p, omega, lambdas or default_rate_grid(p, omega), n_mc, rng)
    thr = omega * lam
    hits_ii = int(np.count_nonzero(x <= thr)) if lam > 0 else 0
    if lam > 0:
        bound_ii = math.exp(shape.log_c1 - math.log(lam) - lam * (1 - omega) ** 2 / 8)
        exact_ii = _ncx2_cdf(thr, p, lam) if thr > 0 else 0.0
    else:
        bound_ii, exact_ii = math.inf, 0.0
    rep_ii = _tail_report("noncentral_lower_rate", p, lam, thr, hits_ii, n_mc, bound_ii, exact_ii)
    return rep_i, rep_ii, rep_iii, shape


# ---------------------------------------------------------------------------
# restricted eigenvalue


@dataclass(frozen=True)
class KappaReport:
    s: int
    kappa: float
    argmin_support: ModelIndex
    exhaustive: bool


def restricted_kappa(X, s: int, limit: int = KAPPA_LIMIT) -> KappaReport:
    """Smallest ``||X b|| / ||b||`` over vectors with at most ``s`` non-zeros.

    By eigenvalue interlacing the infimum is attained on a support of size
    exactly ``s``, so only those are scanned; each contributes the smallest
    singular value of ``X_S``.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if not 1 <= s <= p:
        raise InputError(f"s must lie in [1, {p}]")
    count = count_supports(p, s) - 1
    if count > limit:
        raise TooManySupports(count, limit)
    best, arg = math.inf, ()
    combos = itertools.combinations(range(p), s)
    while True:
        chunk = list(itertools.islice(combos, 4096))
        if not chunk:
            break
        idx = np.array(chunk)
        blocks = np.transpose(X[:, idx], (1, 0, 2))
        if n >= s:
            sv = np.linalg.svd(blocks, compute_uv=False)[:, -1]
        else:
            sv = np.zeros(len(chunk))
        k = int(np.argmin(sv))
        if sv[k] < best:
            best, arg = float(sv[k]), tuple(int(i) for i in chunk[k])
    return KappaReport(s=s, kappa=best, argmin_support=arg, exhaustive=True)


def restricted_kappa_series(X, s_max: int, limit: int = KAPPA_LIMIT) -> List[KappaReport]:
    return [restricted_kappa(X, s, limit) for s in range(1, s_max + 1)]


# ---------------------------------------------------------------------------
# Bernstein-von Mises distances


def _log_t_radial(r2, s, df, c):
    # log density of an s-variate t with scale c * I at squared radius r2
    log_norm = gammaln(s / 2) - betaln(df / 2, s / 2) - 0.5 * s * math.log(df * math.pi * c)
    return log_norm - 0.5 * (df + s) * np.log1p(r2 / (df * c))


def _log_normal_radial(r2, s, c):
    return -0.5 * s * math.log(2 * math.pi * c) - 0.5 * r2 / c


def _crossings(s, df, c_t, c_g):
    """Squared radii where the t and normal densities cross (at most two)."""
    phi = lambda u: _log_t_radial(u, s, df, c_t) - _log_normal_radial(u, s, c_g)
    u_star = max((df + s) * c_g - df * c_t, 0.0)
    if phi(u_star) >= 0:
        return []
    roots = []
    if u_star > 0 and phi(0.0) > 0:
        roots.append(optimize.brentq(phi, 0.0, u_star, xtol=1e-14 * (1 + u_star), maxiter=500))
    hi = max(2 * u_star, c_g, c_t)
    while phi(hi) < 0:
        hi *= 2
    roots.append(optimize.brentq(phi, u_star, hi, xtol=1e-14 * hi, maxiter=500))
    return roots


def elliptical_distances(s: int, df: float, c_t: float, c_g: float) -> Tuple[float, float]:
    """Total variation and squared Hellinger distance between
    ``t_df(0, c_t I_s)`` and ``N(0, c_g I_s)``.

    Both laws are spherical, so each distance is a one-dimensional integral
    over the radius, evaluated by adaptive quadrature split at the density
    crossings. TV is ``sup_B |P(B) - Q(B)|``; ``H^2 = 1 - int sqrt(f g)``.
    """
    if s == 0:
        return 0.0, 0.0
    log_area = math.log(2.0) + 0.5 * s * math.log(math.pi) - gammaln(s / 2)
    scale = math.sqrt(c_g)

    def radial(rho, fn):
        r = rho * scale
        r2 = r * r
        lf = _log_t_radial(r2, s, df, c_t)
        lg = _log_normal_radial(r2, s, c_g)
        if s > 1 and r == 0:
            return 0.0
        jac = log_area + math.log(scale) + ((s - 1) * math.log(r) if s > 1 else 0.0)
        return fn(lf, lg, jac)

    tv_fn = lambda lf, lg, jac: abs(math.exp(lf + jac) - math.exp(lg + jac))
    bc_fn = lambda lf, lg, jac: math.exp(0.5 * (lf + lg) + jac)
    cuts = [math.sqrt(u) / scale for u in _crossings(s, df, c_t, c_g)]
    edges = [0.0] + cuts + [math.inf]
    opts = dict(epsabs=1e-10, epsrel=1e-10, limit=200)
    tv = 0.5 * sum(integrate.quad(radial, a, b, args=(tv_fn,), **opts)[0] for a, b in zip(edges, edges[1:]))
    bc = sum(integrate.quad(radial, a, b, args=(bc_fn,), **opts)[0] for a, b in zip(edges, edges[1:]))
    return float(min(max(tv, 0.0), 1.0)), float(min(max(1.0 - bc, 0.0), 1.0))


@dataclass(frozen=True)
class BvmReport:
    """Distance of the posterior from its Gaussian limit at the true support.

    ``tv_upper = (1 - pi_Sstar) + TV(conditional t, limit normal)``,
    clipped to 1; ``hellinger_sq`` is the squared Hellinger distance of the
    conditional part.
    """

    n: int
    tv_upper: float
    hellinger_sq: float
    pi_Sstar: float
    tv_conditional: float
    df: float
    scale_ratio: float
    sigma0_source: str = "truth"

    def to_dict(self):
        return asdict(self)


def support_probability(src: Union[ModelPosteriorTable, PosteriorSamples], S) -> float:
    S = tuple(S)
    if isinstance(src, ModelPosteriorTable):
        return src.probability(S)
    if len(src) == 0:
        raise EmptySource("no draws")
    return sum(1 for m in src.models if m == S) / len(src)


def bvm_distance(d: Dataset, src, Sstar, sigma0_sq: float, h: HyperParams,
                 sigma0_source: str = "truth") -> BvmReport:
    if not sigma0_sq > 0:
        raise InputError("sigma0_sq must be positive")
    Sstar = as_model(Sstar, d.p)
    fit = fit_support(d, Sstar)
    df = 2 * h.a0 + h.alpha * d.n
    c_t = (2 * h.b0 + h.alpha * fit.rss) / df
    tv, h2 = elliptical_distances(len(Sstar), df, c_t, sigma0_sq)
    pi = support_probability(src, Sstar)
    return BvmReport(n=d.n, tv_upper=min(1.0, (1.0 - pi) + tv), hellinger_sq=h2, pi_Sstar=pi,
                     tv_conditional=tv, df=df, scale_ratio=c_t / sigma0_sq, sigma0_source=sigma0_source)


# ---------------------------------------------------------------------------
# contraction


@dataclass
class ContractionSummary:
    """Posterior exceedance probabilities for dimension, prediction and
    estimation error, with thresholds expressed in units of ``sigma0_sq``."""

    s_star: int
    eps_n: float
    delta_n: float
    kappa: float
    kappa_source: str
    p_size: float
    p_pred: float
    p_l2: float
    size_quantiles: List[float] = field(default_factory=list)
    pred_quantiles: List[float] = field(default_factory=list)
    l2_quantiles: List[float] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def prediction_rate(s_star: int, p: int) -> float:
    """``s log(p / s)`` with the convention ``s = 1`` for the null truth."""
    s = max(s_star, 1)
    return s * math.log(p / s)


def contraction_metrics(samples: PosteriorSamples, beta_star, sigma0_sq: float, X,
                        C: float = 2.0, M: float = 10.0, kappa: Optional[float] = None) -> ContractionSummary:
    """Exceedance probabilities ``P(|S| >= C s*)``, ``P(||X(b - b*)||^2 > M eps_n)``
    and ``P(||b - b*||^2 > M delta_n)`` under the posterior draws.

    ``delta_n = eps_n / kappa((C + 1) s*)^2``. When ``kappa`` is not given it
    is computed exhaustively if feasible; otherwise it is replaced by the
    smallest singular value of ``X`` over the unions of ``S*`` with every
    visited support, which can only overstate kappa and so makes the
    estimation-error check stricter.
    """
    if len(samples) == 0:
        raise EmptySource("no draws")
    X = np.asarray(X, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    n, p = X.shape
    Sstar = tuple(int(j) for j in np.flatnonzero(beta_star))
    s_star = len(Sstar)
    B = samples.beta_matrix()
    diff = B - beta_star
    sizes = np.array([len(m) for m in samples.models], dtype=float)
    pred = np.sum((diff @ X.T) ** 2, axis=1)
    l2 = np.sum(diff * diff, axis=1)

    eps_n = prediction_rate(s_star, p)
    k_size = min(int(math.ceil((C + 1) * max(s_star, 1))), p, n)
    source = "given"
    if kappa is None:
        try:
            kappa = restricted_kappa(X, k_size, limit=2 * 10**5).kappa
            source = "exhaustive"
        except TooManySupports:
            unions = {tuple(sorted(set(m) | set(Sstar))) for m in samples.models}
            kappa = min(np.linalg.svd(X[:, list(u)], compute_uv=False)[-1] for u in unions if u) if any(unions) else 1.0
            source = "visited_supports"
    delta_n = eps_n / kappa**2 if kappa > 0 else math.inf
    qs = [0.05, 0.5, 0.95]
    return ContractionSummary(
        s_star=s_star, eps_n=eps_n, delta_n=delta_n, kappa=float(kappa), kappa_source=source,
        p_size=float(np.mean(sizes >= C * s_star)) if s_star else float(np.mean(sizes >= C)),
        p_pred=float(np.mean(pred > M * eps_n * sigma0_sq)),
        p_l2=float(np.mean(l2 > M * delta_n * sigma0_sq)),
        size_quantiles=[float(v) for v in np.quantile(sizes, qs)],
        pred_quantiles=[float(v) for v in np.quantile(pred, qs)],
        l2_quantiles=[float(v) for v in np.quantile(l2, qs)],
    )


def trend_fraction(series, decreasing: bool = True, strict: bool = False) -> float:
    """Fraction of rows of ``series`` (replications x grid) that are monotone."""
    a = np.asarray(series, dtype=float)
    if a.ndim != 2 or a.shape[1] < 2:
        raise InputError("series must be replications x grid with at least two grid points")
    step = np.diff(a, axis=1)
    if decreasing:
        ok = step < 0 if strict else step <= 0
    else:
        ok = step > 0 if strict else step >= 0
    return float(np.mean(np.all(ok, axis=1)))


# ---------------------------------------------------------------------------
# default tail-bound suite

# (p, lam, threshold); thresholds stay inside the moderate-deviation regime
# where the two-sided central bound holds exactly
DEFAULT_TAIL_GRID: Tuple[Tuple[int, float, float], ...] = (
    (1, 0.0, 2.0), (2, 1.0, 3.0), (5, 2.0, 2.0), (5, 10.0, 3.0),
    (10, 5.0, 5.0), (10, 20.0, 8.0), (20, 0.0, 10.0), (20, 40.0, 15.0),
    (50, 10.0, 20.0), (50, 100.0, 25.0), (100, 30.0, 30.0), (100, 200.0, 50.0),
)
DEFAULT_OMEGA = 0.5
DEFAULT_SHAPE_DF = 5


def tail_suite(n_mc: int = 10**5, seed: int = 0, grid=DEFAULT_TAIL_GRID, omega: float = DEFAULT_OMEGA,
               shape_df: int = DEFAULT_SHAPE_DF) -> Tuple[List[TailBoundReport], RateShapeReport]:
    """Central and noncentral tail checks at every grid point plus one
    rate-shape check. Each grid point has its own random stream."""
    reports: List[TailBoundReport] = []
    for k, (p, lam, thr) in enumerate(grid):
        reports.append(check_central_tail(p, thr, n_mc, make_rng(seed, 1, k)))
        reports.extend(_deviation_reports(_ncx2(make_rng(seed, 2, k), p, lam, n_mc), p, lam, thr))
    shape = check_rate_shape(shape_df, omega, default_rate_grid(shape_df, omega), n_mc, make_rng(seed, 3))
    return reports, shape

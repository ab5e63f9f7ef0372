"""
Misclassification rate of a two-class 1-D Gaussian node feature before and
after mean aggregation over a d-regular graph with homophily h.

The rate is the overlap area of the two class densities, int min(f1, f2) dx,
which is 1.0 for identical classes. An empirical classifier that sees a
balanced sample makes class-1 errors err1 and class-2 errors err2; the overlap
area corresponds to err1 + err2, i.e. twice the balanced error rate.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, optimize
from scipy.special import ndtr
from scipy.stats import norm

from train.generate_synthetic import GaussianClassSpec, gen_gaussian_regular, mean_aggregate
from train.prepare_dataset import export_csv
from train.utils import derive_rng, derive_seed

logger = logging.getLogger(__name__)

# --- Configuration ---
DEFAULT_GRID = tuple(np.linspace(0.0, 1.0, 21))
CROSSING_TOL = 1e-6
QUADRATURE_SPAN = 12.0
MC_METHODS = ('gaussian', 'graph')
CURVE_COLUMNS = ['h', 'eps_agg', 'eps_raw']

MeanVar = Tuple[float, float]


def _check_sigmas(sig1: float, sig2: float) -> None:
    if not (sig1 > 0 and sig2 > 0):
        raise ValueError(f"standard deviations must be positive, got {sig1}, {sig2}")


def crossing_points(mu1: float, sig1: float, mu2: float, sig2: float) -> np.ndarray:
    """Sorted real solutions of f1(x) = f2(x)."""
    _check_sigmas(sig1, sig2)
    if sig1 == sig2:
        return np.array([]) if mu1 == mu2 else np.array([(mu1 + mu2) / 2])
    a = 1 / (2 * sig1 ** 2) - 1 / (2 * sig2 ** 2)
    b = mu2 / sig2 ** 2 - mu1 / sig1 ** 2
    c = mu1 ** 2 / (2 * sig1 ** 2) - mu2 ** 2 / (2 * sig2 ** 2) - math.log(sig2 / sig1)
    roots = np.roots([a, b, c])
    return np.sort(roots[np.isreal(roots)].real)


def bayes_error(mu1: float, sig1: float, mu2: float, sig2: float) -> float:
    """Overlap area int min(f1, f2) dx of N(mu1, sig1^2) and N(mu2, sig2^2)."""
    _check_sigmas(sig1, sig2)
    if mu1 > mu2:
        mu1, sig1, mu2, sig2 = mu2, sig2, mu1, sig1
    if sig1 == sig2:
        if mu1 == mu2:
            return 1.0
        return float(2 * ndtr(-(mu2 - mu1) / (2 * sig1)))

    roots = crossing_points(mu1, sig1, mu2, sig2)
    if roots.size != 2:
        return overlap_quadrature(mu1, sig1, mu2, sig2)
    x1, x2 = roots
    # the narrower density dominates between the crossings, the wider one in both tails
    (m_n, s_n), (m_w, s_w) = sorted([(mu1, sig1), (mu2, sig2)], key=lambda p: p[1])
    narrow_tails = ndtr((x1 - m_n) / s_n) + 1 - ndtr((x2 - m_n) / s_n)
    wide_middle = ndtr((x2 - m_w) / s_w) - ndtr((x1 - m_w) / s_w)
    return float(np.clip(narrow_tails + wide_middle, 0.0, 1.0))


def overlap_quadrature(mu1: float, sig1: float, mu2: float, sig2: float) -> float:
    """Numerical int min(f1, f2) dx over +-12 pooled sigma; independent check of bayes_error."""
    _check_sigmas(sig1, sig2)
    pooled = math.sqrt((sig1 ** 2 + sig2 ** 2) / 2)
    lo = min(mu1, mu2) - QUADRATURE_SPAN * pooled
    hi = max(mu1, mu2) + QUADRATURE_SPAN * pooled
    breaks = [x for x in crossing_points(mu1, sig1, mu2, sig2) if lo < x < hi]
    value, _ = integrate.quad(lambda x: min(norm.pdf(x, mu1, sig1), norm.pdf(x, mu2, sig2)),
                              lo, hi, points=breaks or None, limit=200, epsabs=1e-12, epsrel=1e-10)
    return float(value)


def aggregated_params(mu1: float, sig1: float, mu2: float, sig2: float, h: float, d: int) -> Tuple[MeanVar, MeanVar]:
    """Mean and variance of the neighbour-mean feature for each class."""
    _check_sigmas(sig1, sig2)
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"homophily must lie in [0, 1], got {h}")
    if d < 1:
        raise ValueError(f"degree must be >= 1, got {d}")
    class1 = (h * mu1 + (1 - h) * mu2, (h * sig1 ** 2 + (1 - h) * sig2 ** 2) / d)
    class2 = (h * mu2 + (1 - h) * mu1, (h * sig2 ** 2 + (1 - h) * sig1 ** 2) / d)
    return class1, class2


def aggregated_error(spec: GaussianClassSpec, h: float) -> float:
    (m1, v1), (m2, v2) = aggregated_params(spec.mu1, spec.sigma1, spec.mu2, spec.sigma2, h, spec.degree)
    return bayes_error(m1, math.sqrt(v1), m2, math.sqrt(v2))


@dataclass
class EpsilonCurve:
    h: np.ndarray
    eps_raw: float
    eps_agg: np.ndarray
    h_lower: Optional[float] = None
    h_upper: Optional[float] = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        self.eps_agg = np.asarray(self.eps_agg, dtype=np.float64)
        if self.h.shape != self.eps_agg.shape:
            raise ValueError("h grid and eps_agg must align")
        if np.any(np.diff(self.h) <= 0):
            raise ValueError("h grid must be strictly ascending")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'h': self.h, 'eps_agg': self.eps_agg, 'eps_raw': self.eps_raw}, columns=CURVE_COLUMNS)


def _crossing(gap, lo: float, hi: float) -> Optional[float]:
    if gap(lo) * gap(hi) >= 0:
        return None
    return float(optimize.bisect(gap, lo, hi, xtol=CROSSING_TOL))


def epsilon_curve(spec: GaussianClassSpec, grid: Sequence[float] = DEFAULT_GRID) -> EpsilonCurve:
    """
    eps_agg over the homophily grid plus the raw-feature error, with the
    crossings H_l in (0, 0.5) and H_u in (0.5, 1) where aggregation stops
    helping, or None when eps_agg never crosses eps_raw on that side.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or grid.min() < 0 or grid.max() > 1:
        raise ValueError("homophily grid must be a non-empty subset of [0, 1]")
    eps_raw = bayes_error(spec.mu1, spec.sigma1, spec.mu2, spec.sigma2)
    eps_agg = np.array([aggregated_error(spec, h) for h in grid])

    def gap(h: float) -> float:
        return aggregated_error(spec, h) - eps_raw

    curve = EpsilonCurve(h=grid, eps_raw=eps_raw, eps_agg=eps_agg,
                         h_lower=_crossing(gap, 0.0, 0.5), h_upper=_crossing(lambda h: -gap(h), 0.5, 1.0))
    logger.info(f"eps_raw={eps_raw:.6f}, crossings H_l={curve.h_lower}, H_u={curve.h_upper}")
    return curve


@dataclass(frozen=True)
class MonteCarloEstimate:
    eps: float
    stderr: float
    err1: float
    err2: float
    n_per_class: int


def _bayes_rule_errors(x1: np.ndarray, x2: np.ndarray, p1: MeanVar, p2: MeanVar) -> Tuple[float, float]:
    """Class-wise error of predicting class 1 wherever f1 >= f2."""
    def says_class1(x):
        return norm.logpdf(x, p1[0], math.sqrt(p1[1])) >= norm.logpdf(x, p2[0], math.sqrt(p2[1]))
    return float(np.mean(~says_class1(x1))), float(np.mean(says_class1(x2)))


def monte_carlo_error(spec: GaussianClassSpec, n_samples: int, aggregate: bool, seed: int,
                      method: str = 'gaussian', index: int = 0) -> MonteCarloEstimate:
    """
    Empirical overlap estimate err1 + err2 of the true-parameter Bayes rule.

    method="gaussian" samples the (aggregated) class distributions directly;
    method="graph" builds a d-regular graph at spec.homophily with n_samples
    nodes per class and mean-aggregates sampled raw features over it, which
    needs spec.homophily * degree to be an integer.
    """
    if n_samples <= 0:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    if method not in MC_METHODS:
        raise ValueError(f"method must be one of {MC_METHODS}, got {method!r}")
    raw1, raw2 = (spec.mu1, spec.sigma1 ** 2), (spec.mu2, spec.sigma2 ** 2)
    p1, p2 = aggregated_params(spec.mu1, spec.sigma1, spec.mu2, spec.sigma2, spec.homophily, spec.degree) \
        if aggregate else (raw1, raw2)

    if method == 'gaussian':
        rng = derive_rng(seed, 'monte_carlo', index)
        x1 = rng.normal(p1[0], math.sqrt(p1[1]), size=n_samples)
        x2 = rng.normal(p2[0], math.sqrt(p2[1]), size=n_samples)
    else:
        k_in = spec.homophily * spec.degree
        if not math.isclose(k_in, round(k_in), abs_tol=1e-9):
            raise ValueError(f"graph method needs homophily * degree to be an integer, got {k_in}")
        graph, labels, features = gen_gaussian_regular(spec, 2 * n_samples, derive_seed(seed, index) if index else seed)
        values = mean_aggregate(graph, features).ravel() if aggregate else features.ravel()
        x1, x2 = values[labels.values == 0], values[labels.values == 1]

    err1, err2 = _bayes_rule_errors(x1, x2, p1, p2)
    stderr = math.sqrt(err1 * (1 - err1) / x1.size + err2 * (1 - err2) / x2.size)
    return MonteCarloEstimate(eps=err1 + err2, stderr=stderr, err1=err1, err2=err2, n_per_class=int(x1.size))


def monte_carlo_column(spec: GaussianClassSpec, grid: Sequence[float], n_samples: int, seed: int,
                       method: str = 'gaussian') -> pd.DataFrame:
    rows = []
    for i, h in enumerate(grid):
        est = monte_carlo_error(replace(spec, homophily=float(h)), n_samples, aggregate=True,
                                seed=seed, method=method, index=i)
        rows.append({'eps_mc': est.eps, 'eps_mc_stderr': est.stderr})
    return pd.DataFrame(rows)


def export_curve_csv(curve: EpsilonCurve, path: str, monte_carlo: Optional[pd.DataFrame] = None) -> str:
    frame = curve.to_frame()
    if monte_carlo is not None:
        frame = pd.concat([frame, monte_carlo.reset_index(drop=True)], axis=1)
    return export_csv(frame, path)

"""Rolling forecast surfaces for wind energy, demand and grid price.

A surface ``f`` is a ``(T+1, T+1)`` array where ``f[t, t']`` is the estimate
held at time ``t`` for period ``t'``.  Only the window
``t <= t' <= min(t + H, T)`` is populated; everything else is NaN.  The
diagonal ``f[t, t]`` is the realized value.

Energy forecasts evolve forward in time with correlated noise that is pushed
through the standard normal CDF and an empirical inverse CDF chosen by the
current forecast level.  Demand is realized first and its forecasts are
filled in backward.  Grid prices are affine in the demand forecasts.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.special import ndtr


@dataclass(frozen=True)
class CovarianceSpec:
    sigma: float
    alpha: float
    horizon: int

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")


def _decay_matrix(alpha: float, horizon: int) -> np.ndarray:
    idx = np.arange(horizon)
    return np.exp(-alpha * np.abs(idx[:, None] - idx[None, :]))


def build_covariance(spec: CovarianceSpec) -> np.ndarray:
    return spec.sigma**2 * _decay_matrix(spec.alpha, spec.horizon)


def cholesky_factor(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises ``ValueError`` unless ``sigma`` is
    symmetric positive definite."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc


def noise_factor(spec: CovarianceSpec) -> np.ndarray:
    """Cholesky factor of the covariance that also covers ``sigma = 0``.

    The correlation part is always positive definite, so factoring it and
    scaling by sigma gives the same ``L`` without rejecting the zero case.
    """
    return spec.sigma * cholesky_factor(_decay_matrix(spec.alpha, spec.horizon))


def sample_correlated_noise(L: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return L @ rng.standard_normal(L.shape[0])


class EmpiricalCdf:
    """Piecewise-linear CDF given by breakpoints ``(support, cumulative)``."""

    def __init__(self, support, cumulative):
        support = np.asarray(support, dtype=float)
        cumulative = np.asarray(cumulative, dtype=float)
        if support.ndim != 1 or support.shape != cumulative.shape or support.size < 2:
            raise ValueError("need at least two matching breakpoints")
        if not np.all(np.diff(support) > 0):
            raise ValueError("support must be strictly increasing")
        if np.any(np.diff(cumulative) < 0) or cumulative[0] < 0 or cumulative[-1] != 1.0:
            raise ValueError("cumulative probabilities must be nondecreasing in [0, 1] and end at 1")
        self.support = support
        self.cumulative = cumulative
        # the inverse keeps the leftmost point of each flat stretch
        keep = np.concatenate(([True], np.diff(cumulative) > 0))
        self._inv_p = cumulative[keep]
        self._inv_x = support[keep]

    def cdf(self, x):
        return np.interp(x, self.support, self.cumulative, left=0.0, right=1.0)

    def ppf(self, u):
        return np.interp(u, self._inv_p, self._inv_x)

    @property
    def median(self) -> float:
        return float(self.ppf(0.5))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "EmpiricalCdf":
        return cls([lo, hi], [0.0, 1.0])


class CdfFamily:
    """Empirical CDFs keyed by forecast-level bucket ``[lo, hi)``."""

    def __init__(self, edges, cdfs):
        self.edges = np.asarray(edges, dtype=float)
        self.cdfs = list(cdfs)
        if len(self.cdfs) != len(self.edges) or not self.cdfs:
            raise ValueError("one lower edge per CDF required")
        if not np.all(np.diff(self.edges) > 0):
            raise ValueError("bucket edges must be increasing")

    def bucket(self, level):
        idx = np.searchsorted(self.edges, level, side="right") - 1
        return np.clip(idx, 0, len(self.cdfs) - 1)

    def select(self, level: float) -> EmpiricalCdf:
        return self.cdfs[int(self.bucket(level))]

    def ppf(self, u, levels):
        """Inverse CDF of each ``u[i]`` under the bucket of ``levels[i]``."""
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        idx = self.bucket(levels)
        for b in np.unique(idx):
            mask = idx == b
            out[mask] = self.cdfs[b].ppf(u[mask])
        return out

    @classmethod
    def from_csv(cls, text: str) -> "CdfFamily":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].lstrip().startswith("#")]
        header, body = rows[0], rows[1:]
        if [h.strip() for h in header] != ["level_min", "level_max", "support", "cumulative"]:
            raise ValueError(f"unexpected CDF header {header}")
        groups: dict[float, list] = {}
        for r in body:
            groups.setdefault(float(r[0]), []).append((float(r[2]), float(r[3])))
        edges = sorted(groups)
        cdfs = [EmpiricalCdf(*zip(*groups[e])) for e in edges]
        return cls(edges, cdfs)

    @classmethod
    def load(cls, path=None) -> "CdfFamily":
        if path is None:
            text = resources.files("pcfa").joinpath("data/empirical_cdfs.csv").read_text()
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        return cls.from_csv(text)


def transform_noise(eps_bar, cdf) -> np.ndarray:
    """Map Gaussian noise through Phi and then an inverse empirical CDF.

    ``cdf`` is one :class:`EmpiricalCdf` applied to every component, or a
    sequence with one CDF per component.
    """
    u = ndtr(np.asarray(eps_bar, dtype=float))
    if isinstance(cdf, EmpiricalCdf):
        return cdf.ppf(u)
    return np.array([c.ppf(ui) for c, ui in zip(cdf, u)], dtype=float)


def roll_energy_forecasts(row, eps) -> np.ndarray:
    """Advance the energy forecasts held at ``t`` by one period.

    ``row`` holds ``f[t, t+1..]`` and ``eps`` the noise for those same
    periods (missing trailing noise counts as zero).  The result is
    ``f[t+1, t+1..]`` clamped at 0; its first entry is the realized
    ``E[t+1]``.
    """
    row = np.asarray(row, dtype=float)
    eps = np.asarray(eps, dtype=float)
    out = row.copy()
    k = min(row.size, eps.size)
    out[:k] += eps[:k]
    return np.maximum(out, 0.0)


@dataclass(frozen=True)
class DemandParams:
    base: float = 30.0
    amplitude: float = 10.0
    frequency: float = 2.0
    rho: float = 0.7
    noise_scale: float = 1.0

    def __post_init__(self):
        if not self.base > self.amplitude >= 0:
            raise ValueError("need base > amplitude >= 0")
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")


@dataclass(frozen=True)
class PriceParams:
    slope: float = 0.1
    mean: float = 20.0
    std: float = 5.0

    def __post_init__(self):
        if self.slope < 0 or self.std < 0:
            raise ValueError("slope and std must be nonnegative")


def demand_profile(params: DemandParams, T: int) -> np.ndarray:
    t = np.arange(T + 1)
    denom = T if T > 0 else 1
    return params.base - params.amplitude * np.sin(params.frequency * np.pi * t / denom)


def ar1_noise(n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) sequence with unit marginal variance."""
    z = rng.standard_normal(n)
    e = np.empty(n)
    if n:
        e[0] = z[0]
    scale = np.sqrt(1.0 - rho * rho)
    for i in range(1, n):
        e[i] = rho * e[i - 1] + scale * z[i]
    return e


def generate_demand_path(params: DemandParams, T: int, rng: np.random.Generator) -> np.ndarray:
    e = params.noise_scale * ar1_noise(T + 1, params.rho, rng)
    return np.ceil(np.maximum(0.0, demand_profile(params, T) + e))


def _window_mask(T: int, H: int) -> np.ndarray:
    i = np.arange(T + 1)
    lead = i[None, :] - i[:, None]
    return (lead >= 0) & (lead <= H)


def backfill_demand_forecasts(demand, L: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Fill demand forecasts backward from the realized path.

    ``L`` is the Cholesky factor of the demand forecast noise (size H).
    Forecasts are rounded to whole units and clamped at 0.  The diagonal is
    the realized demand.
    """
    demand = np.asarray(demand, dtype=float)
    T = demand.size - 1
    H = L.shape[0]
    f = np.full((T + 1, T + 1), np.nan)
    f[np.arange(T + 1), np.arange(T + 1)] = demand
    noise = rng.standard_normal((T + 1, H)) @ L.T
    for t in range(T, 0, -1):
        hi = min(t - 1 + H, T)
        cols = np.arange(t, hi + 1)
        f[t - 1, cols] = np.maximum(0.0, np.rint(f[t, cols] + noise[t - 1, : cols.size]))
    return f


def derive_price_forecasts(demand_surface, params: PriceParams, rng: np.random.Generator):
    """Affine grid prices from demand forecasts; returns ``(surface, P^m)``."""
    a = rng.normal(params.mean, params.std) if params.std > 0 else params.mean
    price = a + params.slope * np.asarray(demand_surface, dtype=float)
    return price, float(np.nanmean(price))


def energy_base_profile(T: int, mean: float, amplitude: float) -> np.ndarray:
    t = np.arange(T + 1)
    denom = T if T > 0 else 1
    return np.maximum(0.0, mean + amplitude * np.sin(2.0 * np.pi * t / denom))


def generate_energy_surface(base, H: int, L: np.ndarray, family: CdfFamily, rng: np.random.Generator) -> np.ndarray:
    """Forward recursion of the wind forecasts.

    Row 0 is the base profile over its window.  Each step perturbs the
    periods still inside the previous window; a period entering the window
    for the first time starts from the base profile.
    """
    base = np.asarray(base, dtype=float)
    T = base.size - 1
    f = np.full((T + 1, T + 1), np.nan)
    f[0, : min(H, T) + 1] = base[: min(H, T) + 1]
    Z = rng.standard_normal((T, L.shape[0]))
    for t in range(T):
        k = min(H, T - t)
        cols = np.arange(t + 1, t + 1 + k)
        prev = f[t, cols]
        u = ndtr(L[:k] @ Z[t])
        eps = family.ppf(u, prev)
        f[t + 1, cols] = roll_energy_forecasts(prev, eps)
        new = t + 1 + H
        if new <= T:
            f[t + 1, new] = base[new]
    return f


@dataclass(frozen=True)
class ForecastConfig:
    """Everything the sample-path generator needs."""

    T: int = 48
    H: int = 23
    sigma_E: float = float(np.sqrt(40.0))
    alpha: float = 0.2
    sigma_D: float = 1.0
    energy_mean: float = 25.0
    energy_amplitude: float = 15.0
    demand: DemandParams = field(default_factory=DemandParams)
    price: PriceParams = field(default_factory=PriceParams)
    cdf_path: str | None = None

    def __post_init__(self):
        if self.T < 0 or self.H < 0:
            raise ValueError("T and H must be nonnegative")
        if self.sigma_E < 0 or self.sigma_D < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def window(self) -> int:
        return min(self.H, self.T) if self.T > 0 else 0


@dataclass(frozen=True)
class ForecastSet:
    energy: np.ndarray = field(repr=False)
    demand: np.ndarray = field(repr=False)
    price: np.ndarray = field(repr=False)
    market_price: float
    H: int
    seed: int | None = None

    @property
    def T(self) -> int:
        return self.energy.shape[0] - 1

    def last(self, t: int) -> int:
        return min(t + self.H, self.T)

    def energy_row(self, t: int) -> np.ndarray:
        return self.energy[t, t : self.last(t) + 1]

    def demand_row(self, t: int) -> np.ndarray:
        return self.demand[t, t : self.last(t) + 1]

    def price_row(self, t: int) -> np.ndarray:
        return self.price[t, t : self.last(t) + 1]

    def realized(self):
        """Realized ``(E, D, P^g)`` series."""
        d = np.arange(self.T + 1)
        return self.energy[d, d], self.demand[d, d], self.price[d, d]

    def write_csv(self, fh) -> None:
        """Long format rows ``t, t', energy, demand, price``."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "t_prime", "energy", "demand", "price"])
        for t in range(self.T + 1):
            for tp in range(t, self.last(t) + 1):
                w.writerow([t, tp, repr(float(self.energy[t, tp])), repr(float(self.demand[t, tp])),
                            repr(float(self.price[t, tp]))])


class ForecastGenerator:
    """Draws sample paths ``omega`` identified by an integer seed.

    Energy noise, demand noise, demand forecast noise and the price
    intercept come from separate child streams of the seed, so changing one
    noise level leaves the other draws untouched.
    """

    def __init__(self, cfg: ForecastConfig, family: CdfFamily | None = None):
        self.cfg = cfg
        self.family = family if family is not None else CdfFamily.load(cfg.cdf_path)
        k = max(cfg.window, 1)
        self.L_energy = noise_factor(CovarianceSpec(cfg.sigma_E, cfg.alpha, k))
        self.L_demand = noise_factor(CovarianceSpec(cfg.sigma_D, cfg.alpha, k))
        self.base = energy_base_profile(cfg.T, cfg.energy_mean, cfg.energy_amplitude)

    def sample(self, seed: int) -> ForecastSet:
        cfg = self.cfg
        s_energy, s_demand, s_dfc, s_price = (
            np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)
        )
        H = cfg.window
        energy = generate_energy_surface(self.base, H, self.L_energy, self.family, s_energy)
        D = generate_demand_path(cfg.demand, cfg.T, s_demand)
        demand = backfill_demand_forecasts(D, self.L_demand, s_dfc)
        mask = _window_mask(cfg.T, H)
        demand[~mask] = np.nan
        price, pm = derive_price_forecasts(demand, cfg.price, s_price)
        return ForecastSet(energy=energy, demand=demand, price=price, market_price=pm, H=H, seed=seed)

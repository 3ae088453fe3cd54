"""Envelope distribution families for B-mode speckle.

Seven families are modelled, each as a frozen dataclass holding its
parameters:

========  ==========================  =====================================
Family    Fields                      Density on x > 0
========  ==========================  =====================================
Rayleigh  sigma                       (x/sigma^2) exp(-x^2 / 2 sigma^2)
Nakagami  m >= 1/2, omega             2 m^m x^(2m-1) exp(-m x^2/omega)
                                      / (Gamma(m) omega^m)
Gamma     shape, scale                x^(a-1) exp(-x/scale) / (Gamma(a) scale^a)
Rician    nu >= 0, s                  (x/s^2) exp(-(x^2+nu^2)/2s^2) I0(x nu/s^2)
Burr      c, k, lambda                Burr type XII with scale lambda
Pareto    a, x_min                    a x_min^a / x^(a+1) on x >= x_min
Lomax     alpha_l, lambda_l           (alpha/lambda) (1 + x/lambda)^(-alpha-1)
========  ==========================  =====================================

The Rayleigh density uses the normalised ``x / sigma**2`` prefactor.

Parameters serialise to ``{"family": name, "params": {field: value}}``; the
Burr scale is exposed as ``lambda`` even though the attribute is ``lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Union

import numpy as np
from scipy import stats as _stats
from scipy.special import xlogy

from .special import gammainc, gammaln, log_i0

__all__ = [
    "ParameterDomainError",
    "SupportError",
    "Rayleigh",
    "Nakagami",
    "Gamma",
    "Rician",
    "Burr",
    "Pareto",
    "Lomax",
    "DistributionParams",
    "FAMILIES",
    "FAMILY_ORDER",
    "IntensityGrid",
    "pdf",
    "log_pdf",
    "cdf",
    "sample",
    "nakagami_to_gamma",
    "rayleigh_as_nakagami",
    "params_to_dict",
    "params_from_dict",
    "make_params",
]


class ParameterDomainError(ValueError):
    """A distribution parameter lies outside its family's domain."""


class SupportError(ValueError):
    """An evaluation point lies where the log-density is undefined."""


def _positive(name, value):
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise ParameterDomainError(f"{name} must be a finite positive number, got {value!r}")
    return value


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class _Family:
    family: ClassVar[str]
    # (serialised name, attribute name)
    fields_: ClassVar[tuple[tuple[str, str], ...]]

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.fields_)

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, attr) for _, attr in self.fields_)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, attr) for name, attr in self.fields_}

    def _logpdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def _sample(self, rng, n):
        raise NotImplementedError

    def sf(self, x):
        return 1.0 - self.cdf(x)


@dataclass(frozen=True)
class Rayleigh(_Family):
    sigma: float

    family: ClassVar[str] = "Rayleigh"
    fields_: ClassVar = (("sigma", "sigma"),)

    def __post_init__(self):
        object.__setattr__(self, "sigma", _positive("sigma", self.sigma))

    def _logpdf(self, x):
        s2 = self.sigma * self.sigma
        return np.log(x) - math.log(s2) - x * x / (2.0 * s2)

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-x * x / (2.0 * self.sigma**2))

    def _sample(self, rng, n):
        return rng.rayleigh(self.sigma, size=n)


@dataclass(frozen=True)
class Nakagami(_Family):
    m: float
    omega: float

    family: ClassVar[str] = "Nakagami"
    fields_: ClassVar = (("m", "m"), ("omega", "omega"))

    def __post_init__(self):
        m = float(self.m)
        if not (math.isfinite(m) and m >= 0.5):
            raise ParameterDomainError(f"Nakagami m must be >= 0.5, got {self.m!r}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "omega", _positive("omega", self.omega))

    def _logpdf(self, x):
        m, om = self.m, self.omega
        const = math.log(2.0) + m * math.log(m) - gammaln(m) - m * math.log(om)
        return const + xlogy(2.0 * m - 1.0, x) - m * x * x / om

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return gammainc(self.m, self.m * x * x / self.omega)

    def _sample(self, rng, n):
        return np.sqrt(rng.gamma(self.m, self.omega / self.m, size=n))


@dataclass(frozen=True)
class Gamma(_Family):
    shape: float
    scale: float

    family: ClassVar[str] = "Gamma"
    fields_: ClassVar = (("shape", "shape"), ("scale", "scale"))

    def __post_init__(self):
        object.__setattr__(self, "shape", _positive("shape", self.shape))
        object.__setattr__(self, "scale", _positive("scale", self.scale))

    def _logpdf(self, x):
        a, th = self.shape, self.scale
        return -gammaln(a) - a * math.log(th) + xlogy(a - 1.0, x) - x / th

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return gammainc(self.shape, x / self.scale)

    def _sample(self, rng, n):
        return rng.gamma(self.shape, self.scale, size=n)


@dataclass(frozen=True)
class Rician(_Family):
    nu: float
    s: float

    family: ClassVar[str] = "Rician"
    fields_: ClassVar = (("nu", "nu"), ("s", "s"))

    def __post_init__(self):
        nu = float(self.nu)
        if not (math.isfinite(nu) and nu >= 0):
            raise ParameterDomainError(f"Rician nu must be >= 0, got {self.nu!r}")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "s", _positive("s", self.s))

    def _logpdf(self, x):
        s2 = self.s * self.s
        return np.log(x) - math.log(s2) - (x * x + self.nu**2) / (2.0 * s2) + log_i0(x * self.nu / s2)

    def cdf(self, x):
        # (X/s)^2 is non-central chi-square with 2 dof and non-centrality (nu/s)^2
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        z = (x / self.s) ** 2
        nc = (self.nu / self.s) ** 2
        if nc == 0.0:
            return -np.expm1(-z / 2.0)
        return _stats.ncx2.cdf(z, 2, nc)

    def _sample(self, rng, n):
        re = rng.normal(self.nu, self.s, size=n)
        im = rng.normal(0.0, self.s, size=n)
        return np.hypot(re, im)


@dataclass(frozen=True)
class Burr(_Family):
    c: float
    k: float
    lam: float

    family: ClassVar[str] = "Burr"
    fields_: ClassVar = (("c", "c"), ("k", "k"), ("lambda", "lam"))

    def __post_init__(self):
        object.__setattr__(self, "c", _positive("c", self.c))
        object.__setattr__(self, "k", _positive("k", self.k))
        object.__setattr__(self, "lam", _positive("lambda", self.lam))

    def _logpdf(self, x):
        c, k, lam = self.c, self.k, self.lam
        z = x / lam
        return (
            math.log(c * k / lam)
            + xlogy(c - 1.0, z)
            - (k + 1.0) * np.log1p(z**c)
        )

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-self.k * np.log1p((x / self.lam) ** self.c))

    def _sample(self, rng, n):
        u = rng.random(n)
        # inverse of 1 - (1 + z^c)^-k, written with the survival draw u
        return self.lam * np.expm1(-np.log1p(-u) / self.k) ** (1.0 / self.c)


@dataclass(frozen=True)
class Pareto(_Family):
    a: float
    x_min: float

    family: ClassVar[str] = "Pareto"
    fields_: ClassVar = (("a", "a"), ("x_min", "x_min"))

    def __post_init__(self):
        object.__setattr__(self, "a", _positive("a", self.a))
        object.__setattr__(self, "x_min", _positive("x_min", self.x_min))

    def _logpdf(self, x):
        a, xm = self.a, self.x_min
        x = np.asarray(x, dtype=float)
        inside = x >= xm
        safe = np.where(inside, x, xm)
        out = math.log(a) + a * math.log(xm) - (a + 1.0) * np.log(safe)
        return np.where(inside, out, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        safe = np.maximum(x, self.x_min)
        return np.where(x >= self.x_min, -np.expm1(self.a * np.log(self.x_min / safe)), 0.0)

    def _sample(self, rng, n):
        return self.x_min * np.exp(rng.standard_exponential(n) / self.a)


@dataclass(frozen=True)
class Lomax(_Family):
    alpha_l: float
    lambda_l: float

    family: ClassVar[str] = "Lomax"
    fields_: ClassVar = (("alpha_l", "alpha_l"), ("lambda_l", "lambda_l"))

    def __post_init__(self):
        object.__setattr__(self, "alpha_l", _positive("alpha_l", self.alpha_l))
        object.__setattr__(self, "lambda_l", _positive("lambda_l", self.lambda_l))

    def _logpdf(self, x):
        a, lam = self.alpha_l, self.lambda_l
        return math.log(a / lam) - (a + 1.0) * np.log1p(x / lam)

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-self.alpha_l * np.log1p(x / self.lambda_l))

    def _sample(self, rng, n):
        return self.lambda_l * np.expm1(rng.standard_exponential(n) / self.alpha_l)


DistributionParams = Union[Rayleigh, Nakagami, Gamma, Rician, Burr, Pareto, Lomax]

FAMILIES: dict[str, type] = {
    cls.family: cls for cls in (Rayleigh, Nakagami, Gamma, Rician, Burr, Pareto, Lomax)
}
FAMILY_ORDER: tuple[str, ...] = tuple(FAMILIES)


def _check_params(params):
    if not isinstance(params, _Family):
        raise TypeError(f"expected distribution parameters, got {type(params).__name__}")


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise SupportError("evaluation points must not be NaN")
    if np.any(x < 0):
        raise SupportError("evaluation points must be nonnegative")
    return x


def pdf(params: DistributionParams, x):
    """Density of ``params`` at ``x`` (scalar or array); zero off the support."""
    _check_params(params)
    x = _as_points(x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.exp(params._logpdf(x))
    return out[()] if out.ndim == 0 else out


def log_pdf(params: DistributionParams, x):
    """Natural log of the density.

    Raises :class:`SupportError` at ``x == 0`` for families whose density
    vanishes or diverges there.
    """
    _check_params(params)
    x = _as_points(x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.asarray(params._logpdf(x), dtype=float)
    bad = (x == 0) & ~np.isfinite(out)
    if np.any(bad):
        raise SupportError(f"{params.family} log-density is undefined at x = 0")
    return out[()] if out.ndim == 0 else out


def cdf(params: DistributionParams, x):
    _check_params(params)
    out = np.asarray(params.cdf(_as_points(x)), dtype=float)
    return out[()] if out.ndim == 0 else out


def sample(params: DistributionParams, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` i.i.d. values; ``seed`` is an int, ``None`` or a Generator."""
    _check_params(params)
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.asarray(params._sample(_rng(seed), n), dtype=float)


def nakagami_to_gamma(p: Nakagami) -> Gamma:
    """Distribution of X**2 when X is Nakagami(m, omega)."""
    return Gamma(shape=p.m, scale=p.omega / p.m)


def rayleigh_as_nakagami(sigma: float) -> Nakagami:
    sigma = _positive("sigma", sigma)
    return Nakagami(m=1.0, omega=2.0 * sigma * sigma)


def make_params(family: str, **values) -> DistributionParams:
    """Build parameters from serialised field names (``lambda`` for Burr)."""
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ParameterDomainError(f"unknown family {family!r}") from None
    expected = {name for name, _ in cls.fields_}
    if set(values) != expected:
        raise ParameterDomainError(
            f"{family} expects parameters {sorted(expected)}, got {sorted(values)}"
        )
    kwargs = {attr: values[name] for name, attr in cls.fields_}
    return cls(**kwargs)


def params_to_dict(params: DistributionParams) -> dict:
    _check_params(params)
    return {"family": params.family, "params": params.as_dict()}


def params_from_dict(data: dict) -> DistributionParams:
    return make_params(data["family"], **data["params"])


@dataclass(frozen=True, eq=False)
class IntensityGrid:
    """Uniform grid of bin centers for discretising densities.

    The default grid has unit-width bins centred on the integers 1..255,
    matching 8-bit pixel values with zero excluded.
    """

    centers: np.ndarray = field(default_factory=lambda: np.arange(1.0, 256.0))
    width: float = 1.0

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        if centers.ndim != 1 or centers.size < 1:
            raise ValueError("grid centers must be a non-empty 1-D sequence")
        width = float(self.width)
        if not width > 0:
            raise ValueError("grid width must be positive")
        if centers.size > 1:
            steps = np.diff(centers)
            if np.any(steps <= 0):
                raise ValueError("grid centers must be strictly increasing")
            if not np.allclose(steps, width, rtol=1e-9, atol=0):
                raise ValueError("grid centers must be spaced by the bin width")
        if centers[0] - width / 2 < 0:
            raise ValueError("grid must not extend below zero")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "width", width)

    @classmethod
    def uniform(cls, n_bins: int = 255, low: float = 0.5, high: float = 255.5) -> "IntensityGrid":
        n_bins = int(n_bins)
        if n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        width = (high - low) / n_bins
        centers = low + width * (np.arange(n_bins) + 0.5)
        return cls(centers, width)

    def refined(self, factor: int = 2) -> "IntensityGrid":
        lo, hi = self.edges[0], self.edges[-1]
        return IntensityGrid.uniform(len(self) * int(factor), lo, hi)

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.centers - self.width / 2, self.centers[-1] + self.width / 2)

    def __len__(self):
        return self.centers.size

    def __eq__(self, other):
        if not isinstance(other, IntensityGrid):
            return NotImplemented
        return self.width == other.width and np.array_equal(self.centers, other.centers)

    __hash__ = None

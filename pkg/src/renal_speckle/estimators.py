"""Parameter estimation for the seven envelope families.

Estimator per family:

* Rayleigh: closed-form maximum likelihood.
* Nakagami: inverse normalised variance (moment) estimator.
* Gamma: Newton iteration for the shape MLE.
* Rician: second/fourth moment inversion, refined by quasi-Newton MLE.
* Pareto: closed-form maximum likelihood.
* Burr, Lomax: multi-start Nelder-Mead on the log-likelihood in log-parameter space.

All fitters drop zero-valued pixels first and report how many were used.
Samples may be any array-like (including
:class:`renal_speckle.region_analysis.RegionSamples`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .envelope_models import (
    FAMILY_ORDER,
    Burr,
    Gamma,
    Lomax,
    Nakagami,
    ParameterDomainError,
    Pareto,
    Rayleigh,
    Rician,
    make_params,
    params_to_dict,
)
from .special import bessel_ratio, digamma, log_i0, trigamma

__all__ = [
    "FitError",
    "InsufficientDataError",
    "DegenerateSampleError",
    "FitResult",
    "FitFailure",
    "log_likelihood",
    "nakagami_inv_moments",
    "fit_rayleigh",
    "fit_nakagami_inv",
    "fit_gamma_mle",
    "fit_rician",
    "fit_heavy_tail_mle",
    "fit_family",
    "fit_all",
    "fit_from_dict",
]

GRAD_TOL = 1e-5
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100
SIMPLEX_XATOL = 1e-8
SIMPLEX_STARTS = 3
UNBOUNDED_SHAPE = 1e6

METHODS = ("closed_form", "moments", "newton_mle", "nelder_mead_mle")


class FitError(ValueError):
    reason = "fit_error"


class InsufficientDataError(FitError):
    reason = "insufficient_data"


class DegenerateSampleError(FitError):
    reason = "degenerate_sample"


@dataclass(frozen=True)
class FitResult:
    params: object
    log_likelihood: float
    n_used: int
    converged: bool
    iterations: int
    method: str
    n_dropped: int = 0
    flags: tuple[str, ...] = ()
    grad_norm: float = 0.0

    ok = True

    @property
    def family(self) -> str:
        return self.params.family

    def to_dict(self) -> dict:
        d = params_to_dict(self.params)
        d.update(
            status="ok",
            log_likelihood=self.log_likelihood,
            n_used=self.n_used,
            n_dropped=self.n_dropped,
            converged=self.converged,
            iterations=self.iterations,
            method=self.method,
            flags=list(self.flags),
            grad_norm=self.grad_norm,
        )
        return d


@dataclass(frozen=True)
class FitFailure:
    family: str
    reason: str
    message: str = ""
    n_used: int = 0

    ok = False

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "status": "failed",
            "reason": self.reason,
            "message": self.message,
            "n_used": self.n_used,
        }


def fit_from_dict(d: dict):
    if d.get("status") == "failed":
        return FitFailure(d["family"], d["reason"], d.get("message", ""), d.get("n_used", 0))
    return FitResult(
        params=make_params(d["family"], **d["params"]),
        log_likelihood=d["log_likelihood"],
        n_used=d["n_used"],
        converged=d["converged"],
        iterations=d["iterations"],
        method=d["method"],
        n_dropped=d.get("n_dropped", 0),
        flags=tuple(d.get("flags", ())),
        grad_norm=d.get("grad_norm", 0.0),
    )


def _prepare(samples, min_n):
    x = np.asarray(samples, dtype=float).ravel()
    if x.size and not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if np.any(x < 0):
        raise ValueError("samples must be nonnegative")
    pos = x[x > 0]
    if pos.size < min_n:
        raise InsufficientDataError(
            f"need at least {min_n} positive samples, got {pos.size}"
        )
    return pos, int(x.size - pos.size)


class _Weighted:
    """Samples collapsed to unique values with multiplicities.

    Quantised pixel data has at most 255 distinct values, so the
    likelihood sums shrink by orders of magnitude.
    """

    def __init__(self, x):
        values, counts = np.unique(x, return_counts=True)
        if values.size < 0.5 * x.size:
            self.x, self.w = values, counts / x.size
        else:
            self.x, self.w = x, np.full(x.size, 1.0 / x.size)
        self.n = x.size
        self.logx = np.log(self.x)
        self.mean_logx = float(self.w @ self.logx)

    def mean(self, v):
        return float(self.w @ v)


def log_likelihood(params, samples) -> float:
    """Sum of log-densities over the positive samples."""
    x = np.asarray(samples, dtype=float).ravel()
    x = x[x > 0]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return float(np.sum(params._logpdf(x)))


def _numeric_grad_norm(fun, theta, h=1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return float(np.linalg.norm(g))


def _nonconstant(x, family):
    if np.ptp(x) == 0:
        raise DegenerateSampleError(f"{family}: samples are constant")


def fit_rayleigh(samples) -> FitResult:
    x, dropped = _prepare(samples, 2)
    sigma = math.sqrt(float(np.mean(x * x)) / 2.0)
    p = Rayleigh(sigma)
    return FitResult(p, log_likelihood(p, x), x.size, True, 0, "closed_form", dropped)


def nakagami_inv_moments(x) -> tuple[float, float]:
    """Unclamped inverse-normalised-variance estimates ``(m, omega)``."""
    x2 = np.asarray(x, dtype=float) ** 2
    omega = float(np.mean(x2))
    var = float(np.mean(x2 * x2)) - omega * omega
    if not var > 0:
        raise DegenerateSampleError("Nakagami: zero variance of squared samples")
    return omega * omega / var, omega


def fit_nakagami_inv(samples) -> FitResult:
    x, dropped = _prepare(samples, 3)
    m, omega = nakagami_inv_moments(x)
    flags = ()
    if m < 0.5:
        m, flags = 0.5, ("m_clamped",)
    p = Nakagami(m, omega)
    return FitResult(p, log_likelihood(p, x), x.size, True, 0, "moments", dropped, flags)


def fit_gamma_mle(samples) -> FitResult:
    """Gamma MLE: Newton on ``ln a - digamma(a) = ln mean - mean(ln x)``."""
    x, dropped = _prepare(samples, 3)
    _nonconstant(x, "Gamma")
    mean = float(np.mean(x))
    var = float(np.var(x))
    target = math.log(mean) - float(np.mean(np.log(x)))
    a = mean * mean / var
    converged = False
    it = 0
    for it in range(1, NEWTON_MAX_ITER + 1):
        g = math.log(a) - digamma(a) - target
        h = 1.0 / a - trigamma(a)
        step = g / h
        a_new = a - step
        if a_new <= 0:
            a_new = a / 2.0
        a = a_new
        if abs(step) <= NEWTON_TOL * max(1.0, a):
            converged = True
            break
    p = Gamma(a, mean / a)
    grad = abs(math.log(a) - digamma(a) - target)
    return FitResult(
        p, log_likelihood(p, x), x.size, converged, it, "newton_mle", dropped, (), grad
    )


def _rician_moments(x):
    mu2 = float(np.mean(x * x))
    mu4 = float(np.mean(x**4))
    nu2 = math.sqrt(max(0.0, 2.0 * mu2 * mu2 - mu4))
    s2 = max((mu2 - nu2) / 2.0, 1e-12 * mu2)
    return math.sqrt(nu2), math.sqrt(s2)


def fit_rician(samples) -> FitResult:
    x, dropped = _prepare(samples, 3)
    _nonconstant(x, "Rician")
    data = _Weighted(x)
    xs, w = data.x, data.w

    def nll(theta):
        nu, t = theta
        s2 = math.exp(2 * t)
        z = xs * nu / s2
        ll = data.mean_logx - 2 * t - data.mean(xs * xs + nu * nu) / (2 * s2) + data.mean(log_i0(np.abs(z)))
        a = bessel_ratio(np.abs(z)) * np.sign(z)
        d_nu = -nu / s2 + data.mean(xs * a) / s2
        d_t = -2.0 + data.mean(xs * xs + nu * nu) / s2 - 2.0 * data.mean(z * a)
        return -ll, -np.array([d_nu, d_t])

    nu0, s0 = _rician_moments(x)
    flags = []
    if nu0 == 0.0:
        flags.append("moment_nu_floored")
    # nu = 0 is always stationary; start away from it
    start = np.array([max(nu0, 0.5 * s0), math.log(s0)])
    res = optimize.minimize(
        nll, start, jac=True, method="L-BFGS-B",
        options={"gtol": 1e-10, "ftol": 1e-15, "maxiter": 1000},
    )
    nu, s = abs(float(res.x[0])), math.exp(float(res.x[1]))
    grad_norm = float(np.linalg.norm(nll(np.array([nu, math.log(s)]))[1]))

    # Rayleigh limit: nu = 0 with the closed-form scale
    s_ray = math.sqrt(float(np.mean(x * x)) / 2.0)
    if nll(np.array([0.0, math.log(s_ray)]))[0] <= nll(np.array([nu, math.log(s)]))[0]:
        nu, s = 0.0, s_ray
        flags.append("nu_floored")
        grad_norm = float(np.linalg.norm(nll(np.array([0.0, math.log(s)]))[1]))

    p = Rician(nu, s)
    converged = bool(res.success) and grad_norm < GRAD_TOL
    return FitResult(
        p, log_likelihood(p, x), x.size, converged, int(res.nit), "newton_mle",
        dropped, tuple(flags), grad_norm,
    )


def _fit_pareto(x, dropped):
    x_min = float(np.min(x))
    total = float(np.sum(np.log(x / x_min)))
    if not total > 0:
        raise DegenerateSampleError("Pareto: all samples equal the minimum")
    p = Pareto(x.size / total, x_min)
    return FitResult(p, log_likelihood(p, x), x.size, True, 0, "closed_form", dropped)


def _burr_objective(data):
    def nll(theta):
        lc, lk, ll = theta
        c, k = math.exp(lc), math.exp(lk)
        lz = data.logx - ll
        val = (
            math.log(c * k) - ll
            + (c - 1.0) * (data.mean_logx - ll)
            - (k + 1.0) * data.mean(np.logaddexp(0.0, c * lz))
        )
        return -val if math.isfinite(val) else math.inf

    return nll


def _lomax_objective(data):
    def nll(theta):
        la, ll = theta
        a, lam = math.exp(la), math.exp(ll)
        val = math.log(a) - ll - (a + 1.0) * data.mean(np.log1p(data.x / lam))
        return -val if math.isfinite(val) else math.inf

    return nll


def _burr_starts(x):
    med = float(np.median(x))
    spread = float(np.std(np.log(x)))
    c0 = 1.8 / spread if spread > 0 else 1.0
    starts = []
    for k0 in (0.5, 1.0, 2.0):
        lam0 = med / (2.0 ** (1.0 / k0) - 1.0) ** (1.0 / c0)
        starts.append([math.log(c0), math.log(k0), math.log(lam0)])
    return starts


def _lomax_starts(x):
    med = float(np.median(x))
    return [[math.log(a0), math.log(med / (2.0 ** (1.0 / a0) - 1.0))] for a0 in (1.5, 3.0, 8.0)]


def _simplex_fit(nll, starts):
    best, iterations = None, 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for start in starts[:SIMPLEX_STARTS]:
            res = optimize.minimize(
                nll, np.asarray(start, dtype=float), method="Nelder-Mead",
                options={"xatol": SIMPLEX_XATOL, "fatol": 1e-13, "maxiter": 20000, "maxfev": 40000},
            )
            iterations += int(res.nit)
            if best is None or res.fun < best.fun:
                best = res
        grad_norm = _numeric_grad_norm(nll, best.x)
    return best, iterations, grad_norm


def fit_heavy_tail_mle(family: str, samples) -> FitResult:
    """Fit Burr, Pareto or Lomax by maximum likelihood (>= 10 positive samples)."""
    if family not in ("Burr", "Pareto", "Lomax"):
        raise ValueError(f"not a heavy-tailed family: {family!r}")
    x, dropped = _prepare(samples, 10)
    if family == "Pareto":
        return _fit_pareto(x, dropped)
    _nonconstant(x, family)
    data = _Weighted(x)
    if family == "Burr":
        best, iterations, grad_norm = _simplex_fit(_burr_objective(data), _burr_starts(x))
        c, k, lam = np.exp(best.x)
        p = Burr(c, k, lam)
    else:
        best, iterations, grad_norm = _simplex_fit(_lomax_objective(data), _lomax_starts(x))
        a, lam = np.exp(best.x)
        p = Lomax(a, lam)
    if not math.isfinite(best.fun):
        raise DegenerateSampleError(f"{family}: likelihood is not finite at any start")
    flags = ()
    # light-tailed data push the tail shape to infinity (Weibull/exponential limit)
    tail_shape = p.k if family == "Burr" else p.alpha_l
    if tail_shape > UNBOUNDED_SHAPE:
        flags = ("unbounded_likelihood",)
    converged = bool(best.success) and grad_norm < GRAD_TOL and not flags
    return FitResult(
        p, log_likelihood(p, x), x.size, converged, iterations, "nelder_mead_mle",
        dropped, flags, grad_norm,
    )


_FITTERS = {
    "Rayleigh": fit_rayleigh,
    "Nakagami": fit_nakagami_inv,
    "Gamma": fit_gamma_mle,
    "Rician": fit_rician,
    "Burr": lambda s: fit_heavy_tail_mle("Burr", s),
    "Pareto": lambda s: fit_heavy_tail_mle("Pareto", s),
    "Lomax": lambda s: fit_heavy_tail_mle("Lomax", s),
}


def fit_family(family: str, samples) -> FitResult:
    try:
        fitter = _FITTERS[family]
    except KeyError:
        raise ValueError(f"unknown family {family!r}") from None
    return fitter(samples)


def fit_all(samples, families=FAMILY_ORDER) -> list:
    """Fit every requested family; failures are returned, never raised.

    The result follows the canonical family order regardless of the order
    of ``families``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n_pos = int(np.count_nonzero(x > 0)) if x.size else 0
    wanted = set(families)
    out = []
    for family in FAMILY_ORDER:
        if family not in wanted:
            continue
        try:
            out.append(fit_family(family, x))
        except FitError as exc:
            out.append(FitFailure(family, exc.reason, str(exc), n_pos))
        except (ParameterDomainError, ValueError, ArithmeticError) as exc:
            out.append(FitFailure(family, "numerical_error", str(exc), n_pos))
    return out

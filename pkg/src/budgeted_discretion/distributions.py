"""Base improvement distributions and the laws derived from them.

An improvement is modelled as ``I = a + s * X`` where ``X`` is drawn from one
of seven standardized base shapes. Everything that matters for behaviour is
computed on the standardized base and rescaled afterwards, so the same code
path serves every location and scale.

Numerics
--------
Integrals over ``[0, inf)`` are evaluated with :func:`scipy.integrate.quad`
after the substitution ``x = v / (1 - v)``; integrals against the base law
are written in quantile form ``E[h(X)] = int_0^1 h(Q(v)) dv`` which keeps the
integrand bounded for heavy tails.
"""

from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate, special

QUAD_ABS_TOL = 1e-9
TAIL_QUANTILE = 1.0 - 1e-10


class QuadratureError(RuntimeError):
    """Raised when an integral misses its tolerance budget."""


class TailTruncationWarning(UserWarning):
    pass


class Family(str, enum.Enum):
    EXPONENTIAL = "exponential"
    HALFNORMAL = "halfnormal"
    GAMMA = "gamma"
    WEIBULL = "weibull"
    LOGNORMAL = "lognormal"
    PARETO = "pareto"
    UNIFORM = "uniform"

    @property
    def has_shape(self) -> bool:
        return self in _SHAPED


_SHAPED = {Family.GAMMA, Family.WEIBULL, Family.LOGNORMAL, Family.PARETO}


@dataclass(frozen=True)
class ShapeSpec:
    """A base shape ``D`` with location ``loc`` and scale ``scale``.

    ``shape`` is the Gamma ``k``, Weibull ``c``, Lognormal ``sigma`` or
    Pareto tail index ``b``; it is ignored (and normalized to ``None``) for
    the one-parameter families. Pareto has its minimum fixed at 1.
    """

    family: Family
    shape: float | None = None
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        if fam.has_shape:
            if self.shape is None:
                raise ValueError(f"{fam.value} requires a shape parameter")
            shape = float(self.shape)
            if not shape > 0 or not math.isfinite(shape):
                raise ValueError(f"shape parameter must be positive, got {shape}")
            if fam is Family.PARETO and shape <= 1:
                raise ValueError(f"Pareto tail index must exceed 1 for a finite mean, got {shape}")
            object.__setattr__(self, "shape", shape)
        else:
            object.__setattr__(self, "shape", None)
        if not self.scale > 0 or not math.isfinite(self.scale):
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not math.isfinite(self.loc):
            raise ValueError("location must be finite")
        object.__setattr__(self, "loc", float(self.loc))
        object.__setattr__(self, "scale", float(self.scale))

    def standardized(self) -> ShapeSpec:
        return replace(self, loc=0.0, scale=1.0)

    def rescaled(self, scale: float, loc: float | None = None) -> ShapeSpec:
        return replace(self, scale=scale, loc=self.loc if loc is None else loc)

    @property
    def label(self) -> str:
        if self.shape is None:
            return self.family.value
        return f"{self.family.value}({self.shape:g})"


def make_spec(family: str | Family, shape: float | None = None, loc: float = 0.0,
              scale: float = 1.0) -> ShapeSpec:
    return ShapeSpec(Family(family), shape, loc, scale)


def mean_normalized(family: str | Family, shape: float | None = None) -> ShapeSpec:
    """Return the member of ``family`` with ``E[I] = 1``.

    Gamma uses ``theta = 1/k``, Weibull ``lambda = 1/Gamma(1 + 1/c)`` and
    Lognormal ``mu = -sigma**2 / 2`` (i.e. ``scale = exp(mu)``).
    """
    spec = make_spec(family, shape)
    return spec.rescaled(1.0 / base_mean(spec))


# ---------------------------------------------------------------------------
# Standardized base laws. All functions below take the *standardized* spec.

def _std_cdf(spec: ShapeSpec, x):
    x = np.asarray(x, dtype=float)
    fam, k = spec.family, spec.shape
    xp = np.maximum(x, 0.0)
    if fam is Family.EXPONENTIAL:
        out = -np.expm1(-xp)
    elif fam is Family.HALFNORMAL:
        out = special.erf(xp / math.sqrt(2.0))
    elif fam is Family.GAMMA:
        out = special.gammainc(k, xp)
    elif fam is Family.WEIBULL:
        out = -np.expm1(-(xp ** k))
    elif fam is Family.LOGNORMAL:
        with np.errstate(divide="ignore"):
            out = special.ndtr(np.log(xp) / k)
    elif fam is Family.PARETO:
        out = np.where(x >= 1.0, -np.expm1(-k * np.log(np.maximum(x, 1.0))), 0.0)
    elif fam is Family.UNIFORM:
        out = np.clip(x, 0.0, 1.0)
    else:  # pragma: no cover
        raise ValueError(fam)
    return np.where(x < 0.0, 0.0, out)


def _std_sf(spec: ShapeSpec, x):
    """Survival function, computed directly to keep precision in the tail."""
    x = np.asarray(x, dtype=float)
    fam, k = spec.family, spec.shape
    xp = np.maximum(x, 0.0)
    if fam is Family.EXPONENTIAL:
        out = np.exp(-xp)
    elif fam is Family.HALFNORMAL:
        out = special.erfc(xp / math.sqrt(2.0))
    elif fam is Family.GAMMA:
        out = special.gammaincc(k, xp)
    elif fam is Family.WEIBULL:
        out = np.exp(-(xp ** k))
    elif fam is Family.LOGNORMAL:
        with np.errstate(divide="ignore"):
            out = special.ndtr(-np.log(xp) / k)
    elif fam is Family.PARETO:
        out = np.maximum(x, 1.0) ** (-k)
    elif fam is Family.UNIFORM:
        out = 1.0 - np.clip(x, 0.0, 1.0)
    else:  # pragma: no cover
        raise ValueError(fam)
    return np.where(x < 0.0, 1.0, out)


def _std_quantile(spec: ShapeSpec, u):
    u = np.asarray(u, dtype=float)
    fam, k = spec.family, spec.shape
    if fam is Family.EXPONENTIAL:
        return -np.log1p(-u)
    if fam is Family.HALFNORMAL:
        return math.sqrt(2.0) * special.erfinv(u)
    if fam is Family.GAMMA:
        return special.gammaincinv(k, u)
    if fam is Family.WEIBULL:
        return (-np.log1p(-u)) ** (1.0 / k)
    if fam is Family.LOGNORMAL:
        return np.exp(k * special.ndtri(u))
    if fam is Family.PARETO:
        return np.exp(-np.log1p(-u) / k)
    if fam is Family.UNIFORM:
        return u.copy()
    raise ValueError(fam)  # pragma: no cover


def _std_mean(spec: ShapeSpec) -> float:
    fam, k = spec.family, spec.shape
    return {
        Family.EXPONENTIAL: lambda: 1.0,
        Family.HALFNORMAL: lambda: math.sqrt(2.0 / math.pi),
        Family.GAMMA: lambda: k,
        Family.WEIBULL: lambda: math.gamma(1.0 + 1.0 / k),
        Family.LOGNORMAL: lambda: math.exp(0.5 * k * k),
        Family.PARETO: lambda: k / (k - 1.0),
        Family.UNIFORM: lambda: 0.5,
    }[fam]()


def _std_stop_loss(spec: ShapeSpec, y):
    """``E[(X - y)^+]`` for the standardized base, any real ``y``."""
    y = np.asarray(y, dtype=float)
    fam, k = spec.family, spec.shape
    lower = 1.0 if fam is Family.PARETO else 0.0
    yy = np.maximum(y, lower)
    if fam is Family.EXPONENTIAL:
        out = np.exp(-yy)
    elif fam is Family.HALFNORMAL:
        out = 2.0 * (np.exp(-0.5 * yy * yy) / math.sqrt(2.0 * math.pi) - yy * special.ndtr(-yy))
    elif fam is Family.GAMMA:
        out = k * special.gammaincc(k + 1.0, yy) - yy * special.gammaincc(k, yy)
    elif fam is Family.WEIBULL:
        a = 1.0 / k
        out = math.gamma(a) * special.gammaincc(a, yy ** k) / k
    elif fam is Family.LOGNORMAL:
        with np.errstate(divide="ignore"):
            ly = np.log(yy)
        out = math.exp(0.5 * k * k) * special.ndtr(k - ly / k) - yy * special.ndtr(-ly / k)
        out = np.maximum(out, 0.0)
    elif fam is Family.PARETO:
        out = yy ** (1.0 - k) / (k - 1.0)
    elif fam is Family.UNIFORM:
        out = 0.5 * (1.0 - np.clip(yy, 0.0, 1.0)) ** 2
    else:  # pragma: no cover
        raise ValueError(fam)
    # below the support the stop-loss is linear
    return np.where(y < lower, _std_mean(spec) - y, out)


# ---------------------------------------------------------------------------
# Public base-law API (location/scale aware).

def base_cdf(spec: ShapeSpec, x):
    """CDF of ``I = a + s X`` at ``x``."""
    z = (np.asarray(x, dtype=float) - spec.loc) / spec.scale
    out = _std_cdf(spec, z)
    return float(out) if out.ndim == 0 else out


def base_quantile(spec: ShapeSpec, u):
    """Inverse CDF of ``I``; ``u`` must lie strictly inside ``(0, 1)``."""
    arr = np.asarray(u, dtype=float)
    if np.any((arr <= 0.0) | (arr >= 1.0)) or np.any(np.isnan(arr)):
        raise ValueError("quantile level must lie in the open interval (0, 1)")
    out = spec.loc + spec.scale * _std_quantile(spec, arr)
    return float(out) if out.ndim == 0 else out


def base_mean(spec: ShapeSpec) -> float:
    return spec.loc + spec.scale * _std_mean(spec)


def sample(spec: ShapeSpec, rng: np.random.Generator, size) -> np.ndarray:
    """Draw ``size`` improvements ``a + s X``.

    Inverse transform for the families with a closed-form quantile, absolute
    value of a normal for Half-Normal, numpy's Marsaglia-Tsang gamma sampler
    and the exponential of a normal for Lognormal.
    """
    fam, k = spec.family, spec.shape
    if fam in (Family.EXPONENTIAL, Family.WEIBULL, Family.PARETO, Family.UNIFORM):
        x = _std_quantile(spec, rng.random(size))
    elif fam is Family.HALFNORMAL:
        x = np.abs(rng.standard_normal(size))
    elif fam is Family.GAMMA:
        x = rng.standard_gamma(k, size)
    elif fam is Family.LOGNORMAL:
        x = np.exp(k * rng.standard_normal(size))
    else:  # pragma: no cover
        raise ValueError(fam)
    if spec.loc == 0.0 and spec.scale == 1.0:
        return x
    return spec.loc + spec.scale * x


def theoretical_excess_kurtosis(spec: ShapeSpec) -> float:
    fam, k = spec.family, spec.shape
    if fam is Family.EXPONENTIAL:
        return 6.0
    if fam is Family.HALFNORMAL:
        return 8.0 * (math.pi - 3.0) / (math.pi - 2.0) ** 2
    if fam is Family.GAMMA:
        return 6.0 / k
    if fam is Family.WEIBULL:
        g = [math.gamma(1.0 + i / k) for i in range(1, 5)]
        mu, var = g[0], g[1] - g[0] ** 2
        m4 = g[3] - 4 * g[2] * mu + 6 * g[1] * mu ** 2 - 3 * mu ** 4
        return m4 / var ** 2 - 3.0
    if fam is Family.LOGNORMAL:
        s2 = k * k
        if 4 * s2 > 700:
            return math.inf
        return math.exp(4 * s2) + 2 * math.exp(3 * s2) + 3 * math.exp(2 * s2) - 6.0
    if fam is Family.PARETO:
        if k <= 4:
            return math.inf
        return 6 * (k ** 3 + k ** 2 - 6 * k - 2) / (k * (k - 3) * (k - 4))
    if fam is Family.UNIFORM:
        return -1.2
    raise ValueError(fam)  # pragma: no cover


def is_heavy_tailed(spec: ShapeSpec) -> bool:
    """True when sample means of ``X`` are too volatile to trust ``c_hat``."""
    return theoretical_excess_kurtosis(spec) > 1e4


# ---------------------------------------------------------------------------
# Quadrature helpers.

def _quad(f: Callable[[float], float], lo: float, hi: float, points=None,
          what: str = "integral") -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, lo, hi, epsabs=QUAD_ABS_TOL * 1e-3, epsrel=1e-12,
                                  limit=400, points=points)
    if not math.isfinite(val) or err > max(QUAD_ABS_TOL, 1e-9 * abs(val)):
        raise QuadratureError(f"{what} did not converge (estimate {val!r}, error {err:.3g})")
    return val


def _quantile_expectation(spec: ShapeSpec, h: Callable[[float], float], hint: float | None = None,
                          what: str = "expectation") -> float:
    """``E[h(X)]`` for the standardized base by quantile substitution."""
    def integrand(v):
        return h(float(_std_quantile(spec, v)))

    pts = None
    if hint is not None:
        v0 = float(_std_cdf(spec, hint))
        if 1e-12 < v0 < 1.0 - 1e-12:
            pts = [v0]
    return _quad(integrand, 0.0, 1.0, points=pts, what=what)


def _spread_integral(cdf: Callable[[float], float], lo: float, hi: float,
                    breaks: Sequence[float] = ()) -> float:
    """``int_lo^hi F (1 - F) dx`` via ``x = lo + v / (1 - v)``.

    ``breaks`` are x-locations (typically base quantiles) that split the
    range, so concentrated laws are not missed by the adaptive rule.
    """
    def to_v(x):
        d = x - lo
        return d / (1.0 + d)

    def integrand(v):
        x = lo + v / (1.0 - v)
        f = cdf(x)
        return f * (1.0 - f) / (1.0 - v) ** 2

    edges = sorted({0.0, to_v(hi), *(to_v(b) for b in breaks if lo < b < hi)})
    return math.fsum(_quad(integrand, a, b, what="threshold integral")
                     for a, b in zip(edges[:-1], edges[1:]))


# ---------------------------------------------------------------------------
# Base threshold c(D).

def _closed_form_threshold(spec: ShapeSpec) -> float | None:
    fam, k = spec.family, spec.shape
    if fam is Family.EXPONENTIAL:
        return 0.5
    if fam is Family.HALFNORMAL:
        return (2.0 - math.sqrt(2.0)) / math.sqrt(math.pi)
    if fam is Family.UNIFORM:
        return 1.0 / 6.0
    if fam is Family.PARETO:
        return k / ((k - 1.0) * (2.0 * k - 1.0))
    if fam is Family.LOGNORMAL:
        return math.exp(0.5 * k * k) * (2.0 * special.ndtr(k / math.sqrt(2.0)) - 1.0)
    return None


_BREAK_LEVELS = np.array([1e-8, 1e-3, 0.1, 0.5, 0.9, 0.999, 1.0 - 1e-7])


def _truncation_point(spec: ShapeSpec) -> float:
    return float(_std_quantile(spec, TAIL_QUANTILE))


def gain_threshold(spec: ShapeSpec) -> float:
    """``E[(I' - I)^+]`` by quadrature of the located and scaled CDF.

    Integrates ``F_I (1 - F_I)`` over the support of ``I`` directly, without
    passing through the standardized base. Truncated at the
    ``1 - 1e-10`` quantile; a :class:`TailTruncationWarning` is issued when the
    discarded tail mass is not negligible.
    """
    lower = spec.loc + (spec.scale if spec.family is Family.PARETO else 0.0)
    upper = spec.loc + spec.scale * _truncation_point(spec)
    if spec.family is Family.UNIFORM:
        upper = spec.loc + spec.scale
    breaks = spec.loc + spec.scale * _std_quantile(spec.standardized(), _BREAK_LEVELS)
    val = _spread_integral(lambda x: float(base_cdf(spec, x)), lower, upper, breaks)
    dropped = spec.scale * float(_std_stop_loss(spec.standardized(), _truncation_point(spec)))
    if dropped > 1e-6 * max(val, 1e-300):
        warnings.warn(f"threshold tail truncated for {spec.label}; "
                      f"dropped mass up to {dropped:.3g}", TailTruncationWarning, stacklevel=2)
    return val


def base_threshold(spec: ShapeSpec, method: str = "auto") -> float:
    """Base threshold ``c(D) = int_0^inf F_D (1 - F_D) dx`` of the standardized shape.

    ``method="auto"`` uses a closed form when one exists (Exponential,
    Half-Normal, Uniform, Pareto, Lognormal) and quadrature otherwise;
    ``"quadrature"`` forces the integral.
    """
    std = spec.standardized()
    if method not in ("auto", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto":
        closed = _closed_form_threshold(std)
        if closed is not None:
            return closed
    return _cached_quad_threshold(std)


@lru_cache(maxsize=256)
def _cached_quad_threshold(std: ShapeSpec) -> float:
    return gain_threshold(std)


# ---------------------------------------------------------------------------
# Difference law of two i.i.d. base draws.

@dataclass(frozen=True)
class DiffLaw:
    """Law of ``D0 = X' - X`` for i.i.d. draws from a standardized base.

    Evaluations are memoized per instance, and instances are shared through
    :func:`diff_law`, so repeated dynamic-programming sweeps over the same
    shape reuse earlier integrals.
    """

    source: ShapeSpec
    closed_form: bool = True
    _memo: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "source", self.source.standardized())

    def cdf(self, x: float) -> float:
        x = float(x)
        if x < 0.0:
            return 1.0 - self.cdf(-x)
        if x == 0.0:
            return 0.5
        key = ("cdf", x)
        if key not in self._memo:
            self._memo[key] = self._cdf_pos(x)
        return self._memo[key]

    def _cdf_pos(self, x: float) -> float:
        spec = self.source
        if self.closed_form:
            if spec.family is Family.EXPONENTIAL:
                return 1.0 - 0.5 * math.exp(-x)
            if spec.family is Family.HALFNORMAL:
                return 1.0 - 0.5 * special.erfc(x / 2.0) ** 2
        # G(x) = 1 - E[S(X + x)]
        tail = _quantile_expectation(spec, lambda q: float(_std_sf(spec, q + x)),
                                     hint=x, what="difference CDF")
        return min(1.0, max(0.5, 1.0 - tail))

    def stop_loss(self, t: float) -> float:
        """``E[(D0 - t)^+]`` for ``t >= 0``."""
        t = float(t)
        if t < 0.0:
            raise ValueError("stop-loss level must be non-negative")
        key = ("sl", t)
        if key not in self._memo:
            self._memo[key] = self._stop_loss(t)
        return self._memo[key]

    def _stop_loss(self, t: float) -> float:
        spec = self.source
        if self.closed_form and spec.family is Family.EXPONENTIAL:
            return 0.5 * math.exp(-t)
        if t == 0.0 and self.closed_form:
            closed = _closed_form_threshold(spec)
            if closed is not None:
                return closed
        return _quantile_expectation(spec, lambda q: float(_std_stop_loss(spec, q + t)),
                                     hint=t, what="partial expectation")


@lru_cache(maxsize=128)
def diff_law(spec: ShapeSpec, closed_form: bool = True) -> DiffLaw:
    return DiffLaw(spec.standardized(), closed_form)


def diff_cdf(law: DiffLaw, x: float) -> float:
    """``G_D(x) = Pr(X' - X <= x)`` on the standardized base."""
    return law.cdf(x)


def psi_of_shape(spec: ShapeSpec, method: str = "auto") -> float:
    """Patience scalar ``psi(D) = G_D(c(D))``.

    Only the standardized base is consulted, so location and scale cannot
    influence the result. ``method="quadrature"`` bypasses every closed form.
    """
    std = spec.standardized()
    if method == "quadrature":
        return diff_law(std, closed_form=False).cdf(base_threshold(std, "quadrature"))
    if method != "auto":
        raise ValueError(f"unknown method {method!r}")
    if std.family is Family.EXPONENTIAL:
        return 1.0 - 0.5 * math.exp(-0.5)
    return diff_law(std).cdf(base_threshold(std))


# ---------------------------------------------------------------------------
# Gain model: alignment probability plus the conditional gain law.

@dataclass(frozen=True)
class GainModel:
    """Gain from discretion ``Delta``: zero w.p. ``p``, else a draw from the
    conditional misalignment law.

    ``cdf_mis``, ``pe_mis`` and ``sampler_mis`` describe ``Delta | misalignment``
    (CDF, partial expectation ``E[(Delta - t)^+ | mis]`` and an
    ``(rng, size) -> array`` sampler). ``base`` is set for the two-draw
    construction and lets scale-free quantities route through the
    standardized shape.
    """

    p: float
    cdf_mis: Callable[[float], float]
    pe_mis: Callable[[float], float]
    sampler_mis: Callable[[np.random.Generator, int], np.ndarray]
    scale: float = 1.0
    base: ShapeSpec | None = None
    name: str = "custom"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"alignment probability must lie in [0, 1], got {self.p}")

    @classmethod
    def from_shape(cls, spec: ShapeSpec, closed_form: bool = True) -> GainModel:
        """Two-household construction ``Delta = (I_M - I_m)^+`` with i.i.d.
        improvements from ``spec``; misalignment has probability 1/2."""
        law = diff_law(spec.standardized(), closed_form)
        s = spec.scale

        def cdf_mis(x):
            if x <= 0.0:
                return 0.0
            return max(0.0, min(1.0, 2.0 * law.cdf(x / s) - 1.0))

        def pe_mis(t):
            if t <= 0.0:
                return 2.0 * s * law.stop_loss(0.0) - t
            return 2.0 * s * law.stop_loss(t / s)

        std = spec.standardized()

        def sampler(rng, size):
            # |X' - X| has the law of X' - X given X' > X
            return s * np.abs(sample(std, rng, size) - sample(std, rng, size))

        return cls(0.5, cdf_mis, pe_mis, sampler, s, spec, f"two-draw {spec.label}")

    @classmethod
    def conditional(cls, spec: ShapeSpec, p: float) -> GainModel:
        """``Delta | misalignment`` distributed as ``spec`` itself."""
        if spec.loc < 0:
            raise ValueError("conditional gain law must have non-negative support")
        std = spec.standardized()

        def cdf_mis(x):
            return float(base_cdf(spec, x))

        def pe_mis(t):
            return spec.scale * float(_std_stop_loss(std, (t - spec.loc) / spec.scale))

        def sampler(rng, size):
            return sample(spec, rng, size)

        return cls(p, cdf_mis, pe_mis, sampler, spec.scale, None, f"conditional {spec.label}")

    @classmethod
    def discrete(cls, values: Sequence[float], probs: Sequence[float], p: float) -> GainModel:
        """Finite conditional gain law on strictly positive ``values``."""
        v = np.asarray(values, dtype=float)
        w = np.asarray(probs, dtype=float)
        if v.shape != w.shape or v.ndim != 1 or len(v) == 0:
            raise ValueError("values and probs must be matching 1-d sequences")
        if np.any(v <= 0):
            raise ValueError("conditional gains must be strictly positive")
        if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("probs must be a probability vector")
        order = np.argsort(v)
        v, w = v[order], w[order]

        def cdf_mis(x):
            return float(w[v <= x].sum())

        def pe_mis(t):
            return float(np.sum(w * np.maximum(v - t, 0.0)))

        def sampler(rng, size):
            return v[rng.choice(len(v), size=size, p=w)]

        return cls(p, cdf_mis, pe_mis, sampler, 1.0, None, "discrete")

    def with_p(self, p: float) -> GainModel:
        """Same conditional gain law under a different alignment probability.

        Only the two-draw construction itself has ``p = 1/2``, so any other
        value drops the link to the base shape.
        """
        return replace(self, p=float(p), base=self.base if p == 0.5 else None)

    def cdf(self, x: float) -> float:
        """Unconditional ``F_Delta(x)``."""
        if x < 0.0:
            return 0.0
        return self.p + (1.0 - self.p) * self.cdf_mis(x)

    @property
    def mean_mis(self) -> float:
        return self.pe_mis(0.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        aligned = rng.random(size) < self.p
        gains = self.sampler_mis(rng, size)
        return np.where(aligned, 0.0, gains)


def partial_expectation_mis(model: GainModel, t: float) -> float:
    """``E[(Delta - t)^+ | misalignment] = int_t^inf (1 - F_mis(u)) du``."""
    if t < 0:
        raise ValueError("threshold must be non-negative")
    if math.isinf(t):
        return 0.0
    return model.pe_mis(float(t))


# ---------------------------------------------------------------------------
# Monte Carlo.

class MCEstimate(NamedTuple):
    c_hat: float
    psi_hat: float
    se_c: float
    se_psi: float
    n: int
    heavy_tail: bool


def _split(n: int, parts: int) -> list[int]:
    base, extra = divmod(n, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


_CHUNK = 1 << 20


def _positive_diffs(spec: ShapeSpec, rng: np.random.Generator, n: int):
    """Yield chunks of ``(I' - I)^+`` totalling ``n`` draws."""
    done = 0
    while done < n:
        m = min(_CHUNK, n - done)
        yield np.maximum(sample(spec, rng, m) - sample(spec, rng, m), 0.0)
        done += m


def mc_estimate(spec: ShapeSpec, n: int, seed: int | Sequence[int], substreams: int = 1,
                threads: int | None = None) -> MCEstimate:
    """Two-stage Monte Carlo estimate of ``(c_hat, psi_hat)``.

    ``c_hat`` is the mean of ``(I' - I)^+`` over ``n`` pairs. A second,
    independent batch of ``n`` pairs gives ``psi_hat``, the fraction with
    ``(I' - I)^+ <= c_hat``. Work is split across ``substreams`` generators
    spawned from ``seed``; results depend on ``(seed, substreams)`` only, never
    on ``threads``.
    """
    if n < 2:
        raise ValueError("need at least two Monte Carlo pairs")
    if substreams < 1:
        raise ValueError("substreams must be positive")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(substreams)]
    sizes = _split(n, substreams)

    def stage1(i):
        tot = tot2 = 0.0
        for d in _positive_diffs(spec, rngs[i], sizes[i]):
            tot += float(d.sum())
            tot2 += float(np.dot(d, d))
        return tot, tot2

    workers = threads or 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(stage1, range(substreams)))
        total = math.fsum(p[0] for p in parts)
        total2 = math.fsum(p[1] for p in parts)
        c_hat = total / n
        var = max(total2 / n - c_hat * c_hat, 0.0) * n / (n - 1)

        def stage2(i):
            return sum(int(np.count_nonzero(d <= c_hat))
                       for d in _positive_diffs(spec, rngs[i], sizes[i]))

        below = sum(pool.map(stage2, range(substreams)))
    psi_hat = below / n
    return MCEstimate(c_hat, psi_hat, math.sqrt(var / n), math.sqrt(psi_hat * (1 - psi_hat) / n),
                      n, is_heavy_tailed(spec))


def excess_kurtosis(samples) -> float:
    """Sample excess kurtosis ``m4 / m2**2 - 3`` from central moments."""
    x = np.asarray(samples, dtype=float)
    if x.size < 4:
        raise ValueError("need at least four samples")
    d = x - x.mean()
    m2 = float(np.mean(d * d))
    if m2 == 0.0:
        raise ValueError("zero variance")
    m4 = float(np.mean((d * d) ** 2))
    return m4 / (m2 * m2) - 3.0


def sample_kurtosis(spec: ShapeSpec, n: int, seed: int | Sequence[int]) -> float:
    return excess_kurtosis(sample(spec, np.random.default_rng(seed), n))

"""Closed-form constants, exponents and symmetry-breaking thresholds.

Everything here is a short rational/radical expression evaluated in double
precision.  For the admissible regime

    p > 1,  N > 2p,  q > p,  lambda < gamma_{N,p}^p

the weight exponent is ``beta = N - (q/p)(N - 2p)``, the critical exponent is
``p** = N p / (N - 2p)`` and ``gamma_{N,p} = N (p-1)(N-2p) / p^2`` is the base
of the sharp Rellich constant ``gamma_{N,p}^p``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .errors import ParameterError, UnsupportedRegimeError

__all__ = [
    "ProblemParams",
    "ThresholdReport",
    "make_params",
    "rellich_gamma",
    "critical_exponent",
    "weight_exponent",
    "breaking_coefficients",
    "f_eval",
    "f_prime",
    "t_zero",
    "q_crit_remark",
    "thresholds",
]


def _check_np(N, p):
    if not p > 1:
        raise ParameterError(f"p ≤ 1: need p > 1 (got p={p})")
    if not N > 2 * p:
        raise ParameterError(f"N ≤ 2p: need N > 2p (got N={N}, p={p})")


def _check_q(p, q):
    if not q > p:
        raise ParameterError(f"q ≤ p: need q > p (got p={p}, q={q})")


def rellich_gamma(N, p):
    """Return ``gamma_{N,p} = N (p-1)(N-2p)/p^2``.

    The sharp constant of the Rellich inequality is ``rellich_gamma(N, p)**p``.
    """
    _check_np(N, p)
    return N * (p - 1) * (N - 2 * p) / (p * p)


def critical_exponent(N, p):
    """Critical Sobolev exponent ``p** = N p / (N - 2p)``."""
    _check_np(N, p)
    return N * p / (N - 2 * p)


def weight_exponent(N, p, q):
    """Dilation-compatible weight exponent ``beta = N - (q/p)(N - 2p)``."""
    _check_np(N, p)
    return N - q * (N - 2 * p) / p


@dataclass(frozen=True)
class ProblemParams:
    """Validated parameter tuple plus derived constants.

    Build instances through :func:`make_params`; the constructor itself does
    not validate.
    """

    N: int
    p: float
    q: float
    lam: float
    beta: float
    p_crit: float
    gamma: float

    @property
    def rellich_constant(self):
        return self.gamma ** self.p

    @property
    def is_critical(self):
        return self.beta == 0.0

    @property
    def amplitude_exponent(self):
        """Exponent ``(N - 2p)/p`` of the invariant dilation."""
        return (self.N - 2 * self.p) / self.p

    def with_lambda(self, lam):
        return make_params(self.N, self.p, self.q, lam)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def make_params(N, p, q, lam=0.0):
    """Validate ``(N, p, q, lambda)`` and populate the derived constants.

    Raises :class:`ParameterError` naming the violated constraint.
    """
    if int(N) != N:
        raise ParameterError(f"N must be an integer dimension (got {N})")
    N = int(N)
    p = float(p)
    q = float(q)
    lam = float(lam)
    if not all(map(math.isfinite, (p, q, lam))):
        raise ParameterError("p, q and lambda must be finite")
    _check_np(N, p)
    _check_q(p, q)
    gamma = rellich_gamma(N, p)
    if not lam < gamma ** p:
        raise ParameterError(
            f"lambda ≥ gamma^p: need lambda < {gamma ** p!r} (got lambda={lam})")
    p_crit = critical_exponent(N, p)
    # exact zero at q = p** so downstream code can branch on it
    beta = 0.0 if q == p_crit else weight_exponent(N, p, q)
    return ProblemParams(N=N, p=p, q=q, lam=lam, beta=beta, p_crit=p_crit, gamma=gamma)


def breaking_coefficients(N, p, q):
    """Return ``(gamma1, gamma2)`` of the symmetry-breaking polynomial."""
    _check_np(N, p)
    if q == p:
        raise ParameterError("q = p: breaking coefficients divide by q - p = 0")
    _check_q(p, q)
    g1 = 2 * (p - 1) * (N - 1) / (q - p)
    g2 = (p - 1) * (N - 1) ** 2 / (q - p)
    return g1, g2


def _pow(t, e):
    if t == 0:
        return 1.0 if e == 0 else 0.0
    return t ** e


def _check_t(t, p):
    if t > 0:
        return
    if t == 0:
        if p < 2:
            raise ParameterError(f"f(t) is singular at t = 0 for p < 2 (p={p})")
        return
    if float(p).is_integer():
        return
    raise ParameterError(f"t ≤ 0 requires an integer p (got t={t}, p={p})")


def f_eval(t, N, p, q):
    """``f(t) = t^p - gamma1 t^(p-1) - gamma2 t^(p-2)``."""
    t = float(t)
    _check_t(t, p)
    g1, g2 = breaking_coefficients(N, p, q)
    if t < 0:
        k = int(p)
        return t ** k - g1 * t ** (k - 1) - g2 * t ** (k - 2)
    return _pow(t, p) - g1 * _pow(t, p - 1) - g2 * _pow(t, p - 2)


def f_prime(t, N, p, q):
    """Derivative ``f'(t) = p t^(p-1) - (p-1) gamma1 t^(p-2) - (p-2) gamma2 t^(p-3)``."""
    t = float(t)
    if not t > 0:
        raise ParameterError("f_prime is evaluated on t > 0 only")
    g1, g2 = breaking_coefficients(N, p, q)
    return p * t ** (p - 1) - (p - 1) * g1 * t ** (p - 2) - (p - 2) * g2 * t ** (p - 3)


def t_zero(N, p, q):
    """Positive critical point of ``f``; only defined for ``p >= 2``."""
    if p < 2:
        raise UnsupportedRegimeError(f"t0 is only derived for p ≥ 2 (got p={p})")
    g1, g2 = breaking_coefficients(N, p, q)
    a = g1 * (p - 1)
    return (a + math.sqrt(a * a + 4 * g2 * p * (p - 2))) / (2 * p)


def q_crit_remark(N, p):
    """Smallest ``q`` with ``gamma_{N,p} >= t0``; the refined threshold applies above it."""
    _check_np(N, p)
    num = p * (N - 1) * (p * p * (N - 1) * (p - 2) + 2 * N * (p - 1) ** 2 * (N - 2 * p))
    den = N * N * (p - 1) * (N - 2 * p) ** 2
    return p + num / den


@dataclass(frozen=True)
class ThresholdReport:
    gamma1: float
    gamma2: float
    t0: float
    f_t0: float
    remark_threshold: float
    remark_applicable: bool
    q_crit_remark: float

    def to_dict(self):
        return asdict(self)


def thresholds(N, p, q):
    """Evaluate ``t0``, ``f(t0)`` and the refined threshold ``f(gamma_{N,p})``.

    ``f(t0)`` is the lambda below which radial extremals are unstable.  When
    ``q_crit_remark <= q <= p**`` the sharper bound ``f(gamma_{N,p})`` applies.
    """
    if p < 2:
        raise UnsupportedRegimeError(f"breaking thresholds need p ≥ 2 (got p={p})")
    _check_np(N, p)
    _check_q(p, q)
    g1, g2 = breaking_coefficients(N, p, q)
    t0 = t_zero(N, p, q)
    gam = rellich_gamma(N, p)
    remark = gam ** p - g1 * gam ** (p - 1) - g2 * gam ** (p - 2)
    qc = q_crit_remark(N, p)
    return ThresholdReport(
        gamma1=g1,
        gamma2=g2,
        t0=t0,
        f_t0=f_eval(t0, N, p, q),
        remark_threshold=remark,
        remark_applicable=bool(qc <= q <= critical_exponent(N, p)),
        q_crit_remark=qc,
    )

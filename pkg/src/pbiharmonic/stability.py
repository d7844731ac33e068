"""Second variation of the quotient at a radial extremal along ``v = u phi_1``.

``phi_1`` is the first spherical harmonic normalized to zero mean and unit
quadratic mean on the sphere (``phi_1 = sqrt(N) cos(theta)``).  Averaging over
the sphere reduces both second variations to radial integrals:

    d''(u)[v, v] = p (q - 1)                      (when d(u) = 1)
    n''(u)[v, v] = p (p-1) int |Delta u|^{p-2} (Delta u - (N-1) u / r^2)^2
                           - lambda |x|^{-2p} |u|^p dx

A radial extremal can only minimize over all fields when
``sigma = n'' - Q d'' >= 0``.  A clearly negative sigma shows that the radial
profile is a saddle and that the constrained infimum is strictly smaller.

The instability threshold is read as ``lambda >= f(t0)`` for stable radial
extremals, i.e. as a bound on lambda, not on ``gamma_{N,p}``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .constants import f_eval, t_zero
from .discretization import RadialProfile, build_axisym_grid
from .errors import NormalizationError, ResidualTooLargeError, UnsupportedRegimeError
from .functionals import FieldOps, el_residual

__all__ = [
    "StabilityReport",
    "BoundChainReport",
    "second_variation_d",
    "second_variation_n",
    "stability_sigma",
    "x_ratio",
    "bound_chain_check",
    "zonal_second_variation",
]

NORMALIZATION_TOL = 1e-8


@dataclass(frozen=True)
class StabilityReport:
    d2_n: float
    d2_d: float
    q_value: float
    sigma: float
    x_ratio: float
    verdict: str
    tol: float = math.nan
    el_residual: float = math.nan
    lam: float = math.nan

    CSV_HEADER = ("lambda", "d2_n", "d2_d", "q_value", "sigma", "x_ratio", "verdict",
                  "el_residual")

    def to_dict(self):
        return asdict(self)

    def csv_row(self):
        return [self.lam, self.d2_n, self.d2_d, self.q_value, self.sigma, self.x_ratio,
                self.verdict, self.el_residual]


def _radial(u):
    if not isinstance(u, RadialProfile):
        raise TypeError(f"expected a RadialProfile, got {type(u).__name__}")
    return u.values


def _check_normalized(ops, v, tol=NORMALIZATION_TOL):
    d = ops.parts(v)[2] ** (ops.P.p / ops.P.q)
    if abs(d - 1.0) > tol:
        raise NormalizationError(f"d(u) = {d!r}; normalize the profile to d(u) = 1 first")
    return d


def second_variation_d(u, P, tol=NORMALIZATION_TOL):
    """``d''(u)[u phi_1, u phi_1]``, which equals ``p (q-1)`` once ``d(u) = 1``."""
    v = _radial(u)
    _check_normalized(FieldOps(u.grid, P), v, tol)
    return P.p * (P.q - 1.0)


def _d2n(ops, v):
    P = ops.P
    p = P.p
    z = ops.lap(v)
    w = z - (P.N - 1) * v / ops.r ** 2
    az = np.abs(z) ** (p - 2) if p != 2.0 else 1.0
    dens = az * w * w - P.lam * ops.hardy * np.abs(v) ** p
    return p * (p - 1) * float(np.sum(ops.W * dens))


def second_variation_n(u, P):
    """``n''(u)[u phi_1, u phi_1]`` from radial integrals; needs ``p >= 2``."""
    if P.p < 2:
        raise UnsupportedRegimeError(f"the second variation needs p ≥ 2 (got p={P.p})")
    return _d2n(FieldOps(u.grid, P), _radial(u))


def x_ratio(u, P):
    """``X = (int |Delta u|^p / int |x|^{-2p} |u|^p)^{1/p}``."""
    ops = FieldOps(u.grid, P)
    v = _radial(u)
    bih = float(np.sum(ops.W * np.abs(ops.lap(v)) ** P.p))
    har = float(np.sum(ops.W * ops.hardy * np.abs(v) ** P.p))
    return (bih / har) ** (1.0 / P.p)


def stability_sigma(u, P, tol=1e-4, residual_threshold=1e-2, report=None):
    """Compare ``n''`` with ``Q d''`` along ``u phi_1`` and return a verdict.

    ``tol`` is relative to ``|d2_n|``: the verdict is ``unstable`` when
    ``sigma < -tol |d2_n|``, ``stable`` when ``sigma > tol |d2_n|`` and
    ``inconclusive`` otherwise.  The first-variation identity is checked
    through the Euler-Lagrange residual (``report.el_residual`` when a quotient
    report is given); above ``residual_threshold`` the profile is not treated
    as an extremal and :class:`ResidualTooLargeError` carries an
    ``inconclusive`` report.
    """
    if P.p < 2:
        raise UnsupportedRegimeError(f"the second variation needs p ≥ 2 (got p={P.p})")
    ops = FieldOps(u.grid, P)
    v = _radial(u)
    _check_normalized(ops, v)
    res = report.el_residual if report is not None else el_residual(u, P)
    Q = ops.quotient_value(v)[0]
    d2n = _d2n(ops, v)
    d2d = P.p * (P.q - 1.0)
    sigma = d2n - Q * d2d
    thr = tol * abs(d2n)
    if sigma < -thr:
        verdict = "unstable"
    elif sigma > thr:
        verdict = "stable"
    else:
        verdict = "inconclusive"
    rep = StabilityReport(d2n, d2d, Q, sigma, x_ratio(u, P), verdict, tol, res, P.lam)
    if not res <= residual_threshold:
        rep = StabilityReport(d2n, d2d, Q, sigma, rep.x_ratio, "inconclusive", tol, res, P.lam)
        raise ResidualTooLargeError(
            f"el_residual {res:.3e} exceeds {residual_threshold:.1e}; "
            "the profile is not a converged extremal", rep)
    return rep


@dataclass(frozen=True)
class BoundChainReport:
    x_ratio: float
    lhs: float
    rhs: float
    holds: bool
    f_x: float
    f_t0: float

    def to_dict(self):
        return asdict(self)


def bound_chain_check(u, P):
    """Evaluate ``(q-p) X^p <= lambda (q-p) + 2(N-1)(p-1) X^{p-1} + (p-1)(N-1)^2 X^{p-2}``.

    Dividing by ``q - p`` the inequality reads ``f(X) <= lambda``; together
    with ``f(X) >= f(t0)`` it gives the lower bound ``lambda >= f(t0)`` for a
    stable radial extremal.  Both values are reported.
    """
    N, p, q, lam = P.N, P.p, P.q, P.lam
    X = x_ratio(u, P)
    lhs = (q - p) * X ** p
    rhs = lam * (q - p) + 2 * (N - 1) * (p - 1) * X ** (p - 1) + (p - 1) * (N - 1) ** 2 * X ** (p - 2)
    return BoundChainReport(X, lhs, rhs, bool(lhs <= rhs), f_eval(X, N, p, q),
                            f_eval(t_zero(N, p, q), N, p, q))


def zonal_second_variation(u, P, K=8, t=1e-3):
    """Central second difference of ``n`` along ``u + s u phi_1`` on a zonal grid.

    Independent of the radial reduction: the perturbed field is sampled on
    Gauss-Gegenbauer nodes and ``n`` is evaluated with the full zonal
    Laplacian.  The truncation error is ``O(t^2)``.
    """
    g = u.grid
    grid = build_axisym_grid(g.r_min, g.r_max, g.M, K, P.N)
    ops = FieldOps(grid, P)
    base = np.repeat(_radial(u)[:, None], K, axis=1)
    phi1 = math.sqrt(P.N) * grid.x[None, :]

    def n_at(s):
        bih, har, _ = ops.parts(base * (1.0 + s * phi1))
        return bih - P.lam * har

    return (n_at(t) + n_at(-t) - 2.0 * n_at(0.0)) / (t * t)


"""Numerator, denominator, quotient and first variation on sampled fields.

For ``u`` radial or zonal,

    n(u) = int |Delta u|^p - lambda |x|^{-2p} |u|^p dx
    d(u) = (int |x|^{-beta} |u|^q dx)^{p/q}
    Q(u) = n(u) / d(u)

are evaluated with the grid quadrature and discrete Laplacian.  Gradients are
exact derivatives of the discrete Q, returned as Riesz representatives with
respect to the quadrature inner product ``<f, v> = sum_i W_i f_i v_i``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .discretization import (
    AxisymField,
    RadialProfile,
    _check_tails,
    apply_laplacian_axisym,
    axisym_weights,
    laplacian_matrix,
    offset_weight,
    radial_weights,
)
from .errors import SingularGradientError, ZeroFieldError

__all__ = [
    "QuotientReport",
    "FieldOps",
    "ops_for",
    "numerator",
    "denominator",
    "quotient",
    "quotient_gradient",
    "el_residual",
    "hardy_integral",
    "inner",
]


class FieldOps:
    """Precomputed weights and operators for one grid and parameter set.

    Works on raw arrays: shape ``(M,)`` for radial fields and ``(M, K)`` for
    zonal ones.  ``hardy_offset`` moves the centre of the Hardy weight to
    ``y e_1`` (zonal grids only).
    """

    def __init__(self, grid, P, hardy_offset=0.0):
        self.P = P
        self.grid = grid
        self.zonal = hasattr(grid, "K")
        rgrid = grid.radial if self.zonal else grid
        self.rgrid = rgrid
        if self.zonal:
            self.W = axisym_weights(grid)
            self.hardy = offset_weight(grid, 2 * P.p, hardy_offset)
            self.dweight = offset_weight(grid, P.beta)
            self._e = np.exp(-2.0 * rgrid.s)[:, None]
            self._B = grid.angular_matrix
        else:
            if hardy_offset:
                raise ValueError("an offset Hardy weight needs a zonal grid")
            self.W = radial_weights(rgrid, P.N)
            self.hardy = rgrid.r ** (-2 * P.p)
            self.dweight = rgrid.r ** (-P.beta)
        self.L = laplacian_matrix(rgrid, P.N)
        self.r = rgrid.r[:, None] if self.zonal else rgrid.r
        self.mask = np.ones(self.W.shape)
        self.mask[0] = self.mask[-1] = 0.0

    # linear pieces -------------------------------------------------------
    def lap(self, u):
        if self.zonal:
            return apply_laplacian_axisym(self.grid, u)
        return self.L @ u

    def lap_adjoint(self, y):
        """Euclidean adjoint of :meth:`lap`."""
        if self.zonal:
            out = self.L.T @ y + (self._e * y) @ self._B
            return out
        return self.L.T @ y

    def eps_field(self, eps):
        """Regularization scale in the dilation-invariant variable ``r^{N/p} Delta u``."""
        if eps == 0.0:
            return 0.0
        return eps * self.r ** (-self.P.N / self.P.p)

    # scalar functionals ------------------------------------------------
    def energy_density(self, z, eps):
        p = self.P.p
        if np.isscalar(eps) and eps == 0.0:
            return np.abs(z) ** p
        e2 = eps * eps
        return (z * z + e2) ** (0.5 * p) - e2 ** (0.5 * p)

    def phi(self, z, eps):
        p = self.P.p
        if np.isscalar(eps) and eps == 0.0:
            if p == 2.0:
                return z
            return np.sign(z) * np.abs(z) ** (p - 1)
        return (z * z + eps * eps) ** (0.5 * (p - 2)) * z

    def parts(self, u, eps=0.0):
        """Return ``(biharmonic energy, hardy integral, weighted q-mass)``."""
        P = self.P
        z = self.lap(u)
        e = self.eps_field(eps)
        au = np.abs(u)
        bih = float(np.sum(self.W * self.energy_density(z, e)))
        har = float(np.sum(self.W * self.hardy * au ** P.p))
        mass = float(np.sum(self.W * self.dweight * au ** P.q))
        return bih, har, mass

    def quotient_value(self, u, eps=0.0):
        bih, har, mass = self.parts(u, eps)
        if mass <= 0.0:
            raise ZeroFieldError("the field vanishes; the quotient is undefined")
        n = bih - self.P.lam * har
        d = mass ** (self.P.p / self.P.q)
        return n / d, n, d, mass

    def gradient(self, u, eps=0.0):
        """Euclidean gradient of the discrete quotient plus ``(Q, n, d, mass)``."""
        P = self.P
        p, q = P.p, P.q
        z = self.lap(u)
        e = self.eps_field(eps)
        if (np.isscalar(e) and e == 0.0 and p < 2.0
                and np.any(z[1:-1] == 0.0)):
            raise SingularGradientError(
                "eps_reg = 0 with p < 2 and a vanishing Laplacian")
        Q, n, d, mass = self.quotient_value(u, eps)
        au = np.abs(u)
        gn = p * (self.lap_adjoint(self.W * self.phi(z, e))
                  - P.lam * self.W * self.hardy * np.sign(u) * au ** (p - 1))
        gm = q * self.W * self.dweight * np.sign(u) * au ** (q - 1)
        gd = (p / q) * mass ** (p / q - 1.0) * gm
        G = (gn - Q * gd) / d
        return G * self.mask, (Q, n, d, mass)

    def strong_residual(self, u):
        """Nodal Euler-Lagrange residual after the rescaling that makes ``c u`` a solution."""
        P = self.P
        p, q = P.p, P.q
        Q, n, d, mass = self.quotient_value(u)
        c = (Q * mass ** ((p - q) / q)) ** (1.0 / (q - p))
        v = c * u
        z = self.lap(v)
        lhs = self.lap(self.phi(z, 0.0))
        av = np.abs(v)
        hard = P.lam * self.hardy * np.sign(v) * av ** (p - 1)
        src = self.dweight * np.sign(v) * av ** (q - 1)
        return (lhs - hard - src) * self.mask, src * self.mask

    def dual_norm(self, f):
        """Quadrature-weighted ``L^{p'}`` norm of ``|x|^2 f``."""
        pp = self.P.p / (self.P.p - 1.0)
        return float(np.sum(self.W * np.abs(self.r ** 2 * f) ** pp) ** (1.0 / pp))


def ops_for(u, P, hardy_offset=0.0):
    return FieldOps(u.grid, P, hardy_offset)


def _values(u):
    if not isinstance(u, (RadialProfile, AxisymField)):
        raise TypeError(f"expected a RadialProfile or AxisymField, got {type(u).__name__}")
    return u.values


def _check_field(ops, u, tail_tol):
    if not np.any(u):
        raise ZeroFieldError("the field vanishes identically")
    if tail_tol is None:
        return
    P = ops.P
    z = ops.lap(u)
    for dens, what in ((ops.W * np.abs(z) ** P.p, "|Delta u|^p"),
                       (ops.W * ops.hardy * np.abs(u) ** P.p, "Hardy term"),
                       (ops.W * ops.dweight * np.abs(u) ** P.q, "weighted q-mass")):
        if dens.ndim == 2:
            dens = dens.sum(axis=1)
        _check_tails(dens, tail_tol, what)


def numerator(u, P, eps_reg=0.0, tail_tol=1e-6):
    ops = ops_for(u, P)
    v = _values(u)
    _check_field(ops, v, tail_tol)
    bih, har, _ = ops.parts(v, eps_reg)
    return bih - P.lam * har


def hardy_integral(u, P, offset=0.0):
    """``int |x - y e_1|^{-2p} |u|^p dx``."""
    ops = ops_for(u, P, offset)
    return float(np.sum(ops.W * ops.hardy * np.abs(_values(u)) ** P.p))


def denominator(u, P, tail_tol=1e-6):
    ops = ops_for(u, P)
    v = _values(u)
    _check_field(ops, v, tail_tol)
    return ops.parts(v)[2] ** (P.p / P.q)


@dataclass(frozen=True)
class QuotientReport:
    numerator_n: float
    denominator_d: float
    quotient_q: float
    el_residual: float
    grid_meta: dict

    def to_dict(self):
        return asdict(self)

    def csv_row(self):
        return [self.numerator_n, self.denominator_d, self.quotient_q, self.el_residual]

    CSV_HEADER = ("numerator_n", "denominator_d", "quotient_q", "el_residual")


def grid_meta(u):
    g = u.grid
    meta = {"kind": "zonal" if isinstance(u, AxisymField) else "radial"}
    meta.update(g.to_dict())
    return meta


def quotient(u, P, with_residual=True, tail_tol=1e-6, hardy_offset=0.0):
    """Assemble a :class:`QuotientReport` for ``u``."""
    ops = ops_for(u, P, hardy_offset)
    v = _values(u)
    _check_field(ops, v, tail_tol)
    Q, n, d, _ = ops.quotient_value(v)
    res = _el_residual(ops, v) if with_residual else math.nan
    return QuotientReport(n, d, Q, res, grid_meta(u))


def quotient_gradient(u, P, eps_reg=0.0):
    """Riesz representative of ``dQ`` under the quadrature inner product."""
    ops = ops_for(u, P)
    v = _values(u)
    if not np.any(v):
        raise ZeroFieldError("the field vanishes identically")
    G, _ = ops.gradient(v, eps_reg)
    g = np.zeros_like(G)
    inside = ops.mask > 0
    g[inside] = G[inside] / ops.W[inside]
    return u.with_values(g)


def inner(f, g, N):
    """Quadrature inner product of two fields on the same grid."""
    if isinstance(f, AxisymField):
        W = axisym_weights(f.grid)
    else:
        W = radial_weights(f.grid, N)
    return float(np.sum(W * f.values * g.values))


def _el_residual(ops, v):
    R, src = ops.strong_residual(v)
    scale = ops.dual_norm(src)
    return ops.dual_norm(R) / scale


def el_residual(u, P):
    """Relative dual-norm residual of the Euler-Lagrange equation.

    ``u`` is first rescaled by the unique ``c > 0`` for which a critical point
    of Q would solve the equation exactly; the residual is then measured as
    ``|| |x|^2 R ||_{p'} / || |x|^{2-beta} |cu|^{q-1} ||_{p'}``.
    """
    ops = ops_for(u, P)
    v = _values(u)
    if not np.any(v):
        raise ZeroFieldError("the field vanishes identically")
    return _el_residual(ops, v)

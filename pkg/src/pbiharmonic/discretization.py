"""Log-radial grids, sampled fields and the discrete calculus on them.

Radial functions on R^N are sampled at ``r_i = exp(s_min + i h)``.  In the log
variable ``s = log r`` the radial Laplacian reads

    Delta u = exp(-2 s) (u_ss + (N - 2) u_s)

and the volume element is ``omega_{N-1} r^N ds``, so integer shifts of the
grid realise the invariant dilation exactly.  Zonal (axisymmetric) fields add
a polar angle sampled at Gauss-Gegenbauer nodes; the angular part of the
Laplacian is applied exactly on zonal harmonics of degree < K.

Boundary convention: fields vanish at both radial ends and so does their
discrete Laplacian (Navier truncation of R^N to an annulus).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import PchipInterpolator
from scipy.special import eval_gegenbauer, gammaln, roots_gegenbauer

from .errors import (
    AxisRegularityError,
    DilationClipError,
    GridError,
    TruncationError,
)

PROFILE_FORMAT = "pbiharmonic.profile"
AXISYM_FORMAT = "pbiharmonic.axisym"
FORMAT_VERSION = 1

DEFAULT_R_MIN = 1e-4
DEFAULT_R_MAX = 1e4
MIN_NODES = 16


def sphere_area(n):
    """Surface area of the unit sphere S^n in R^(n+1)."""
    return 2.0 * math.exp(0.5 * (n + 1) * math.log(math.pi) - gammaln(0.5 * (n + 1)))


@dataclass(frozen=True)
class RadialGrid:
    s_min: float
    s_max: float
    M: int

    def __post_init__(self):
        if not (math.isfinite(self.s_min) and math.isfinite(self.s_max)):
            raise GridError("grid bounds must be finite")
        if not self.s_min < self.s_max:
            raise GridError(
                f"empty log-radial range: s_min={self.s_min} >= s_max={self.s_max}")
        if self.M < MIN_NODES:
            raise GridError(f"need at least {MIN_NODES} nodes (got M={self.M})")

    @property
    def h(self):
        return (self.s_max - self.s_min) / (self.M - 1)

    @cached_property
    def s(self):
        return self.s_min + self.h * np.arange(self.M)

    @cached_property
    def r(self):
        return np.exp(self.s)

    @property
    def r_min(self):
        return math.exp(self.s_min)

    @property
    def r_max(self):
        return math.exp(self.s_max)

    def refined(self, factor=2):
        """Same domain with spacing divided by ``factor``."""
        return RadialGrid(self.s_min, self.s_max, (self.M - 1) * factor + 1)

    def to_dict(self):
        return {"s_min": self.s_min, "s_max": self.s_max, "M": self.M}


def build_grid(r_min=DEFAULT_R_MIN, r_max=DEFAULT_R_MAX, M=2048):
    """Log-uniform grid of ``M`` nodes on ``[r_min, r_max]``."""
    if not r_min > 0:
        raise GridError(f"r_min must be positive (got {r_min})")
    if not r_min < r_max:
        raise GridError(f"empty radial range: r_min={r_min} >= r_max={r_max}")
    return RadialGrid(math.log(r_min), math.log(r_max), int(M))


def _as_values(values, shape):
    v = np.array(values, dtype=float)
    if v.shape != shape:
        raise GridError(f"values have shape {v.shape}, grid expects {shape}")
    if not np.all(np.isfinite(v)):
        raise GridError("field values must be finite")
    v.setflags(write=False)
    return v


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Values of a radial function at the nodes of a :class:`RadialGrid`."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_values(self.values, (self.grid.M,)))

    @classmethod
    def from_function(cls, grid, f):
        return cls(grid, f(grid.r))

    def with_values(self, values):
        return RadialProfile(self.grid, values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __add__(self, other):
        _same_grid(self.grid, other.grid)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        _same_grid(self.grid, other.grid)
        return self.with_values(self.values - other.values)

    def __neg__(self):
        return self.with_values(-self.values)

    @property
    def satisfies_navier(self):
        return self.values[0] == 0.0 and self.values[-1] == 0.0

    def navier(self):
        """Copy with both boundary values set to zero."""
        v = self.values.copy()
        v[0] = v[-1] = 0.0
        return self.with_values(v)

    # serialization ---------------------------------------------------------
    def to_json(self):
        return json.dumps({
            "format": PROFILE_FORMAT,
            "version": FORMAT_VERSION,
            "grid": self.grid.to_dict(),
            "values": self.values.tolist(),
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, (str, bytes)) else text
        if d.get("format") != PROFILE_FORMAT:
            raise GridError(f"not a radial profile record: {d.get('format')!r}")
        if d.get("version") != FORMAT_VERSION:
            raise GridError(f"unsupported profile version {d.get('version')!r}")
        g = d["grid"]
        return cls(RadialGrid(float(g["s_min"]), float(g["s_max"]), int(g["M"])), d["values"])

    def to_text(self):
        g = self.grid
        lines = [f"# s_min={g.s_min!r} s_max={g.s_max!r} M={g.M}", "# r u"]
        lines += [f"{r!r} {u!r}" for r, u in zip(g.r.tolist(), self.values.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        header, values = None, []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "s_min=" in line:
                    header = dict(tok.split("=") for tok in line[1:].split())
                continue
            values.append(float(line.split()[1]))
        if header is None:
            raise GridError("two-column profile is missing its grid header")
        grid = RadialGrid(float(header["s_min"]), float(header["s_max"]), int(header["M"]))
        return cls(grid, values)


def _same_grid(a, b):
    if a != b:
        raise GridError("fields live on different grids")


# ---------------------------------------------------------------------------
# radial calculus


def radial_weights(grid, N):
    """Trapezoid weights in ``s`` for ``int_{R^N} g dx`` (includes ``omega_{N-1} r^N``)."""
    w = np.full(grid.M, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return sphere_area(N - 1) * grid.r ** N * w


def laplacian_matrix(grid, N):
    """Sparse second-order radial Laplacian; first and last rows are zero (Navier)."""
    M, h = grid.M, grid.h
    e = np.exp(-2.0 * grid.s)
    lo = e * (1.0 / h ** 2 - (N - 2) / (2.0 * h))
    di = e * (-2.0 / h ** 2)
    up = e * (1.0 / h ** 2 + (N - 2) / (2.0 * h))
    for a in (lo, di, up):
        a[0] = a[-1] = 0.0
    return sp.diags([lo[1:], di, up[:-1]], [-1, 0, 1], shape=(M, M), format="csr")


def laplacian(u, N):
    """Discrete ``Delta u``; interior nodes only, zero at both ends."""
    return u.with_values(laplacian_matrix(u.grid, N) @ u.values)


def _check_tails(contrib, tail_tol, what):
    peak = np.max(np.abs(contrib))
    if peak == 0.0:
        return
    tail = max(np.max(np.abs(contrib[:2])), np.max(np.abs(contrib[-2:])))
    if tail > tail_tol * peak:
        raise TruncationError(
            f"{what} does not decay at the grid ends "
            f"(tail/peak = {tail / peak:.3e} > {tail_tol:.1e})")


def integrate(g, a=0.0, N=None, tail_tol=1e-6):
    """``int_{R^N} |x|^{-a} g(|x|) dx`` by the trapezoid rule in ``s``.

    Raises :class:`TruncationError` when the integrand is not negligible at
    the grid ends.
    """
    if N is None:
        raise TypeError("integrate needs the dimension N")
    contrib = radial_weights(g.grid, N) * g.grid.r ** (-a) * g.values
    _check_tails(contrib, tail_tol, "integrand")
    return float(np.sum(contrib))


def dilate(u, k, N, p, clip_tol=0.0):
    """Return ``t^{(N-2p)/p} u(t r)`` with ``t = exp(k h)`` as an exact index shift.

    Values shifted off the grid must be negligible: their dilation-invariant
    amplitude ``r^{(N-2p)/p} |u|`` may not exceed ``clip_tol`` times its peak.
    """
    M = u.grid.M
    k = int(k)
    if abs(k) >= M / 4:
        raise DilationClipError(f"shift |k|={abs(k)} is not below M/4={M / 4}")
    if k == 0:
        return u
    a = (N - 2 * p) / p
    amp = np.abs(u.values) * u.grid.r ** a
    lost = amp[:k] if k > 0 else amp[k:]
    peak = amp.max()
    if peak > 0 and lost.max() > clip_tol * peak:
        raise DilationClipError(
            f"shift by {k} clips support (lost/peak = {lost.max() / peak:.3e})")
    v = np.zeros(M)
    if k > 0:
        v[:-k] = u.values[k:]
    else:
        v[-k:] = u.values[:k]
    return u.with_values(math.exp(k * u.grid.h * a) * v)


def _monotone_runs(v):
    """Index ranges ``(a, b)`` of maximal monotone runs; flat steps join the current run."""
    d = np.sign(np.diff(v))
    nz = np.nonzero(d)[0]
    if nz.size == 0:
        return [(0, len(v) - 1)]
    # carry the last nonzero direction across flat steps
    filled = d.copy()
    idx = np.where(d != 0, np.arange(d.size), 0)
    np.maximum.accumulate(idx, out=idx)
    filled = d[idx]
    filled[: nz[0]] = d[nz[0]]
    cuts = np.nonzero(np.diff(filled))[0] + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [d.size]))
    return list(zip(starts.tolist(), ends.tolist()))


def distribution_function(grid, values, N, upsample=16):
    """Level-set volumes of ``|values|`` within the grid shell.

    ``|values|`` is resampled with a monotone cubic (PCHIP) interpolant in
    ``s`` and treated as piecewise linear in the ball volume between fine
    nodes.  On each monotone run the set ``{u > c}`` is an interval whose end
    is found by inverse interpolation, so ``mu(c)`` is exact for that
    representation.  Returns ``(levels, mu)`` with levels increasing from 0.
    """
    vals = np.abs(np.asarray(values, dtype=float))
    m = (grid.M - 1) * upsample + 1
    s_f = np.linspace(grid.s_min, grid.s_max, m)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        # flat stretches (exact zeros outside a support) trip harmless 1/0
        # slope averages inside the interpolant construction
        v_f = np.maximum(PchipInterpolator(grid.s, vals)(s_f), 0.0)
    omega = sphere_area(N - 1) / N
    V = omega * np.expm1(N * (s_f - grid.s_min)) * grid.r_min ** N
    pos = v_f[v_f > 0]
    if pos.size == 0:
        return np.array([0.0]), np.array([0.0])
    levels = np.unique(pos)
    mu = np.zeros(levels.size)
    for a, b in _monotone_runs(v_f):
        vv, VV = v_f[a:b + 1], V[a:b + 1]
        if vv[-1] < vv[0]:
            vv, VV = vv[::-1], VV[::-1]
            mu += np.interp(levels, vv, VV, right=VV[-1]) - VV[-1]
        else:
            mu += VV[-1] - np.interp(levels, vv, VV, right=VV[-1])
    seg = (v_f[:-1] > 0) | (v_f[1:] > 0)
    mu0 = float(np.sum(np.diff(V)[seg]))
    mu = np.minimum.accumulate(np.maximum(mu, 0.0))
    return np.concatenate(([0.0], levels)), np.concatenate(([mu0], mu))


def schwarz_rearrange(g, N, upsample=16, tail_tol=1e-6):
    """Radially decreasing rearrangement of ``|g|``.

    The decreasing profile is the inverse of the level-set volume function
    from :func:`distribution_function`, read at the ball volume of each node
    (measured from the inner grid radius).
    """
    grid = g.grid
    vals = np.abs(g.values)
    top = vals.max()
    if top == 0.0:
        return g.with_values(np.zeros(grid.M))
    if max(vals[-2:].max(), 0.0) > tail_tol * top:
        raise TruncationError("rearrangement needs a profile that decays at r_max")
    levels, mu = distribution_function(grid, vals, N, upsample)
    omega = sphere_area(N - 1) / N
    target = omega * np.expm1(N * (grid.s - grid.s_min)) * grid.r_min ** N
    # mu decreases in the level; interpolate the inverse on increasing volumes
    out = np.interp(target, mu[::-1], levels[::-1], right=0.0)
    return g.with_values(out)


# ---------------------------------------------------------------------------
# zonal fields


@dataclass(frozen=True)
class AxisymGrid:
    """Radial grid times K Gauss-Gegenbauer polar nodes for dimension N."""

    radial: RadialGrid
    K: int
    N: int

    def __post_init__(self):
        if self.K < 2:
            raise GridError(f"need at least 2 polar nodes (got K={self.K})")
        if self.N < 3:
            raise GridError("zonal fields need N >= 3")

    @property
    def alpha(self):
        return 0.5 * (self.N - 2)

    @cached_property
    def _nodes(self):
        x, w = roots_gegenbauer(self.K, self.alpha)
        order = np.argsort(-x)  # theta increasing
        return x[order], w[order]

    @property
    def x(self):
        return self._nodes[0]

    @cached_property
    def theta(self):
        return np.arccos(self.x)

    @property
    def polar_weights(self):
        """Weights for ``int_0^pi f sin^{N-2} theta d theta``."""
        return self._nodes[1]

    @cached_property
    def degrees(self):
        return np.arange(self.K)

    @cached_property
    def basis(self):
        """Columns: zonal harmonics of degree l at the nodes, orthonormal under ``polar_weights``."""
        x, w = self._nodes
        V = np.empty((self.K, self.K))
        for l in range(self.K):
            c = eval_gegenbauer(l, self.alpha, x)
            V[:, l] = c / math.sqrt(np.sum(w * c * c))
        return V

    @cached_property
    def eigenvalues(self):
        l = self.degrees
        return -l * (l + self.N - 2.0)

    @cached_property
    def angular_matrix(self):
        """Nodal Laplace-Beltrami operator on zonal functions."""
        V, w = self.basis, self.polar_weights
        return (V * self.eigenvalues) @ (V.T * w)

    def to_modes(self, values):
        """Nodal ``(M, K)`` values to zonal-harmonic coefficients."""
        return values @ (self.basis * self.polar_weights[:, None])

    def from_modes(self, coeffs):
        return coeffs @ self.basis.T

    def to_dict(self):
        return {**self.radial.to_dict(), "K": self.K, "N": self.N}


def build_axisym_grid(r_min=DEFAULT_R_MIN, r_max=DEFAULT_R_MAX, M=1024, K=16, N=6):
    return AxisymGrid(build_grid(r_min, r_max, M), int(K), int(N))


@dataclass(frozen=True, eq=False)
class AxisymField:
    """Values ``u(r_i, theta_j)`` of a zonal field, shape ``(M, K)``."""

    grid: AxisymGrid
    values: np.ndarray

    def __post_init__(self):
        g = self.grid
        object.__setattr__(self, "values", _as_values(self.values, (g.radial.M, g.K)))

    @classmethod
    def from_function(cls, grid, f, axis_tol=1e-2):
        """Sample ``f(r, theta)``; rejects fields with an angular kink at the poles."""
        r = grid.radial.r[:, None]
        delta = 1e-4
        for pole, sgn in ((0.0, 1.0), (math.pi, -1.0)):
            f0 = np.asarray(f(r, np.full_like(r, pole)), dtype=float)
            f1 = np.asarray(f(r, np.full_like(r, pole + sgn * delta)), dtype=float)
            scale = np.max(np.abs(f0)) + np.max(np.abs(f1))
            # a regular zonal field changes by O(delta^2) off the pole
            if scale > 0 and np.max(np.abs(f1 - f0)) > axis_tol * delta * scale:
                raise AxisRegularityError(
                    f"nonzero angular derivative at theta = {pole:.4g}")
        return cls(grid, f(r, grid.theta[None, :]))

    @classmethod
    def from_radial(cls, grid, u):
        _same_grid(grid.radial, u.grid)
        return cls(grid, np.repeat(u.values[:, None], grid.K, axis=1))

    def with_values(self, values):
        return AxisymField(self.grid, values)

    def radial_part(self):
        """Spherical mean as a :class:`RadialProfile`."""
        g = self.grid
        w = g.polar_weights
        return RadialProfile(g.radial, self.values @ w / w.sum())

    def angular_variance(self):
        """Relative size of the non-radial part (max over radii of modal energy l >= 1)."""
        c = self.grid.to_modes(self.values)
        tot = np.sum(c * c)
        return 0.0 if tot == 0 else float(np.sum(c[:, 1:] ** 2) / tot)

    def to_json(self):
        return json.dumps({
            "format": AXISYM_FORMAT,
            "version": FORMAT_VERSION,
            "grid": self.grid.to_dict(),
            "values": self.values.tolist(),
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, (str, bytes)) else text
        if d.get("format") != AXISYM_FORMAT or d.get("version") != FORMAT_VERSION:
            raise GridError("not a zonal field record")
        g = d["grid"]
        grid = AxisymGrid(RadialGrid(float(g["s_min"]), float(g["s_max"]), int(g["M"])),
                          int(g["K"]), int(g["N"]))
        return cls(grid, d["values"])


def apply_laplacian_axisym(grid, values):
    """Zonal Laplacian on an ``(M, K)`` array; rows 0 and M-1 are zero."""
    L = laplacian_matrix(grid.radial, grid.N)
    e = np.exp(-2.0 * grid.radial.s)[:, None]
    out = L @ values + e * (values @ grid.angular_matrix.T)
    out[0] = out[-1] = 0.0
    return out


def laplacian_axisym(u):
    return u.with_values(apply_laplacian_axisym(u.grid, u.values))


def axisym_weights(grid):
    """``(M, K)`` weights for ``int_{R^N} g dx`` on a zonal grid."""
    N = grid.N
    rad = radial_weights(grid.radial, N) / sphere_area(N - 1)
    return rad[:, None] * (sphere_area(N - 2) * grid.polar_weights)[None, :]


def offset_weight(grid, a, offset=0.0):
    """``|x - y e_1|^{-a}`` at the zonal nodes."""
    r = grid.radial.r[:, None]
    if offset == 0.0:
        return np.repeat(r ** (-a), grid.K, axis=1)
    d2 = r * r - 2.0 * r * offset * grid.x[None, :] + offset * offset
    return d2 ** (-0.5 * a)


def integrate_axisym(g, a=0.0, offset=0.0, tail_tol=1e-6):
    """``int_{R^N} |x - y e_1|^{-a} g(x) dx`` for a zonal field ``g``."""
    grid = g.grid
    contrib = (axisym_weights(grid) * offset_weight(grid, a, offset) * g.values).sum(axis=1)
    _check_tails(contrib, tail_tol, "zonal integrand")
    return float(contrib.sum())

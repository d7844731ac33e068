"""Gauge-fixed preconditioned descent on the quotient.

Each step solves with a linearized biharmonic preconditioner (banded, one
system per zonal degree), backtracks on Q, renormalizes to ``d(u) = 1`` and
recentres the profile by an exact log-grid dilation.  For p = 2 a unit step
is one sweep of nonlinear inverse iteration.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .discretization import AxisymField, AxisymGrid, RadialGrid, RadialProfile, dilate
from .errors import DilationClipError, GaugeError, ParameterError
from .functionals import FieldOps, quotient

log = logging.getLogger(__name__)

__all__ = [
    "MinimizeOptions",
    "MinimizeResult",
    "minimize_radial",
    "minimize_axisym",
    "sweep_lambda",
    "init_profile",
    "SWEEP_HEADER",
]

SWEEP_HEADER = ("lambda", "S_rad", "S_axisym", "sigma", "resid_rad", "resid_axi",
                "iters_rad", "iters_axi")


@dataclass(frozen=True)
class MinimizeOptions:
    max_iters: int = 3000
    grad_tol: float = 1e-9
    polish: bool = True
    polish_switch: float = 0.2
    polish_retry: int = 200
    step_rule: str = "backtracking"
    step: float = 1.0
    eps_schedule: tuple = (1e-2, 1e-4, 1e-6, 1e-8)
    gauge: str = "mass-median"
    seed: int = 0
    boundary_mass_tol: float = 1e-2

    def __post_init__(self):
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")
        if not self.grad_tol > 0:
            raise ParameterError("grad_tol must be positive")
        if not self.polish_switch > 0 or self.polish_retry < 1:
            raise ParameterError("polish_switch must be positive and polish_retry >= 1")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ParameterError(f"unknown step_rule {self.step_rule!r}")
        if self.gauge not in ("mass-median", "peak-at-origin-shift", "none"):
            raise ParameterError(f"unknown gauge {self.gauge!r}")
        eps = tuple(float(e) for e in self.eps_schedule)
        if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ParameterError("eps_schedule must be a nonempty decreasing sequence")
        object.__setattr__(self, "eps_schedule", eps)

    def to_dict(self):
        d = asdict(self)
        d["eps_schedule"] = list(self.eps_schedule)
        return d


@dataclass
class MinimizeResult:
    field: object
    report: object
    iterations: int
    converged: bool
    status: str
    grad_norm: float
    history: list = field(default_factory=list, repr=False)
    restarts: int = 0

    def __iter__(self):
        yield self.field
        yield self.report


# ---------------------------------------------------------------------------
# initial data


def init_profile(grid, P, preset="bump"):
    """Smooth decaying radial start, normalized to ``d(u) = 1``."""
    r = grid.r
    a = P.amplitude_exponent
    if preset == "bump":
        u = r ** 2 / (1.0 + r ** 2) ** (a + 1.0)
    elif preset == "gaussian":
        u = np.exp(-0.5 * r ** 2)
    elif preset == "bubble":
        u = (1.0 + r ** 2) ** (-a)
    else:
        raise ParameterError(f"unknown init preset {preset!r}")
    u = u.copy()
    u[0] = u[-1] = 0.0
    ops = FieldOps(grid, P)
    return RadialProfile(grid, _normalize(ops, u))


def _normalize(ops, u):
    mass = ops.parts(u)[2]
    return u * mass ** (-1.0 / ops.P.q)


# ---------------------------------------------------------------------------
# preconditioner


class _Preconditioner:
    """Linearized Hessian of the numerator, block diagonal in zonal degree."""

    def __init__(self, ops):
        self.ops = ops
        P = ops.P
        rg = ops.rgrid
        self.L = ops.L.tocsc()
        self.e = np.exp(-2.0 * rg.s)
        self.hardy = rg.r ** (-2 * P.p)
        if ops.zonal:
            self.wr = ops.W.sum(axis=1) / ops.grid.polar_weights.sum()
            self.Wmode = ops.W[:, 0] / ops.grid.polar_weights[0]
            self.lams = ops.grid.eigenvalues
            self.V = ops.grid.basis
        else:
            self.Wmode = ops.W
        self.scale = rg.r ** (-P.amplitude_exponent)
        self._fact = None
        self.n = rg.M

    def _weights(self, u, eps):
        P = self.ops.P
        p = P.p
        if p == 2.0:
            a = np.full(self.n, 2.0)
            b = 2.0 * max(-P.lam, 0.0) * self.hardy
            return a, b
        z = self.ops.lap(u)
        e = self.ops.eps_field(max(eps, 1e-10))
        if self.ops.zonal:
            w = self.ops.grid.polar_weights
            az = (z * z + e * e) ** (0.5 * (p - 2))
            a = p * (p - 1) * (az @ w) / w.sum()
            au = np.abs(u) @ w / w.sum()
            e = e[:, 0]
        else:
            a = p * (p - 1) * (z * z + e * e) ** (0.5 * (p - 2))
            au = np.abs(u)
        floor = 1e-12 * np.max(a)
        a = np.maximum(a, floor)
        b = p * (p - 1) * max(-P.lam, 0.0) * self.hardy * np.maximum(au, 1e-300) ** (p - 2)
        return a, b

    def _factor(self, a, b, shift):
        W = self.Wmode
        L = self.L
        facts = []
        shifts = [0.0] if not self.ops.zonal else list(self.lams)
        for lam_l in shifts:
            Ll = L + sp.diags(self.e * lam_l)
            A = Ll.T @ sp.diags(W * a) @ Ll + sp.diags(W * (b + shift * self.hardy))
            # in the dilation-invariant amplitude the operator has O(1) coefficients
            S = sp.diags(self.scale)
            A = (S @ A @ S).tocsc()[1:-1, 1:-1]
            facts.append(splu(A.tocsc()))
        return facts

    def solve(self, u, G, eps, refresh):
        if self._fact is None or refresh:
            a, b = self._weights(u, eps)
            self._fact = self._factor(a, b, 1e-10)
        sc = self.scale[1:-1]
        out = np.zeros_like(G)
        if self.ops.zonal:
            Gm = G @ self.V
            Dm = np.zeros_like(Gm)
            for l, f in enumerate(self._fact):
                Dm[1:-1, l] = sc * f.solve(sc * Gm[1:-1, l])
            out = Dm @ self.V.T
        else:
            out[1:-1] = sc * self._fact[0].solve(sc * G[1:-1])
        return out


# ---------------------------------------------------------------------------
# gauge


def _radial_mass(ops, u):
    dens = ops.W * ops.dweight * np.abs(u) ** ops.P.q
    return dens.sum(axis=1) if dens.ndim == 2 else dens


def _gauge_shift(ops, u, gauge):
    rg = ops.rgrid
    if gauge == "none":
        return 0
    if gauge == "mass-median":
        m = np.cumsum(_radial_mass(ops, u))
        i = int(np.searchsorted(m, 0.5 * m[-1]))
    else:
        amp = np.abs(u) * ops.r ** ops.P.amplitude_exponent
        if amp.ndim == 2:
            amp = amp.max(axis=1)
        i = int(np.argmax(amp))
    target = int(round(-rg.s_min / rg.h)) if rg.s_min < 0 < rg.s_max else rg.M // 2
    return i - target


def _shift_values(ops, u, k):
    """Exact dilation of raw values by ``k`` grid steps; columns shift together."""
    if k == 0:
        return u
    P = ops.P
    rg = ops.rgrid
    if u.ndim == 1:
        return dilate(RadialProfile(rg, u), k, P.N, P.p, clip_tol=1e-3).values.copy()
    cols = [dilate(RadialProfile(rg, u[:, j]), k, P.N, P.p, clip_tol=1e-3).values
            for j in range(u.shape[1])]
    return np.stack(cols, axis=1)


def _boundary_fraction(ops, u):
    m = _radial_mass(ops, u)
    band = max(2, len(m) // 20)
    return float((m[:band].sum() + m[-band:].sum()) / m.sum())


# ---------------------------------------------------------------------------
# Newton polish


def _lap_matrix(ops):
    """Sparse nodal Laplacian acting on flattened values (row-major ``(M, K)``)."""
    L = ops.L.tocsr()
    if not ops.zonal:
        return L
    K = ops.grid.K
    e = np.exp(-2.0 * ops.rgrid.s)
    e[0] = e[-1] = 0.0
    return (sp.kron(L, sp.identity(K)) + sp.kron(sp.diags(e), sp.csr_matrix(ops._B))).tocsr()


class _Euler:
    """Unnormalized Euler-Lagrange map ``F(v) = dE(v)`` and its Jacobian.

    ``E(v) = n(v)/p - (1/q) int |x|^{-beta}|v|^q`` so critical points of E are
    the rescaled critical points of Q.  Everything is expressed in the
    amplitude variable ``w = r^a v`` restricted to interior nodes, where the
    dilation acts by translation and the Jacobian has O(1) coefficients.
    """

    def __init__(self, ops, eps):
        P = ops.P
        self.ops = ops
        self.P = P
        self.eps = eps
        self.D = _lap_matrix(ops)
        shape = ops.W.shape
        self.shape = shape
        scale = np.broadcast_to(ops.r ** (-P.amplitude_exponent), shape)
        self.inside = (ops.mask > 0).ravel()
        self.S = scale.ravel()[self.inside]
        self.W = ops.W.ravel()
        self.H = np.broadcast_to(ops.hardy, shape).ravel()
        self.B = np.broadcast_to(ops.dweight, shape).ravel()
        self.e = np.broadcast_to(ops.eps_field(eps), shape).ravel() if eps else 0.0

    def full(self, w):
        v = np.zeros(self.W.size)
        v[self.inside] = self.S * w
        return v

    def residual(self, w):
        P = self.P
        p, q = P.p, P.q
        v = self.full(w)
        z = self.D @ v
        if np.isscalar(self.e):
            phz = np.sign(z) * np.abs(z) ** (p - 1)
        else:
            phz = (z * z + self.e ** 2) ** (0.5 * (p - 2)) * z
        av = np.abs(v)
        F = (self.D.T @ (self.W * phz) - P.lam * self.W * self.H * np.sign(v) * av ** (p - 1)
             - self.W * self.B * np.sign(v) * av ** (q - 1))
        return self.S * F[self.inside]

    def jacobian(self, w):
        P = self.P
        p, q = P.p, P.q
        v = self.full(w)
        z = self.D @ v
        if np.isscalar(self.e):
            dz = (p - 1) * np.abs(z) ** (p - 2) if p != 2.0 else np.ones_like(z)
        else:
            r2 = z * z + self.e ** 2
            dz = r2 ** (0.5 * (p - 2)) * (1.0 + (p - 2) * z * z / r2)
        av = np.maximum(np.abs(v), 1e-300)
        diag = (-(p - 1) * P.lam * self.W * self.H * av ** (p - 2)
                - (q - 1) * self.W * self.B * av ** (q - 2))
        J = self.D.T @ sp.diags(self.W * dz) @ self.D + sp.diags(diag)
        J = J.tocsr()[self.inside][:, self.inside]
        Sd = sp.diags(self.S)
        return (Sd @ J @ Sd).tocsc()

    def generator(self, w):
        """Dilation generator in the amplitude variable: ``d/ds`` of ``w``."""
        g = np.zeros(self.W.size)
        g[self.inside] = w
        g = g.reshape(self.shape)
        g = np.gradient(g, self.ops.rgrid.h, axis=0)
        return g.ravel()[self.inside]


def _newton_polish(ops, u, eps=0.0, max_steps=40, rtol=1e-13, stall_tol=1e-4):
    """Damped Newton on the Euler-Lagrange equation, bordered against dilations.

    Returns ``(u, steps, ok)`` with ``u`` renormalized to ``d = 1``.  The
    bordering row pins the component along the dilation orbit, which is an
    almost-null direction of the Jacobian on a truncated log grid.
    """
    P = ops.P
    p, q = P.p, P.q
    Q, n, d, mass = ops.quotient_value(u, eps)
    c = (Q * mass ** ((p - q) / q)) ** (1.0 / (q - p))
    eul = _Euler(ops, eps)
    w = (c * u).ravel()[eul.inside] / eul.S
    F = eul.residual(w)
    src = np.linalg.norm(eul.S * (eul.W * eul.B * np.abs(eul.full(w)) ** (q - 1))[eul.inside])
    fn = np.linalg.norm(F)
    steps = 0
    for steps in range(1, max_steps + 1):
        if fn <= rtol * src:
            break
        J = eul.jacobian(w)
        xi = eul.generator(w)
        xi /= np.linalg.norm(xi)
        col = sp.csc_matrix(xi[:, None])
        A = sp.bmat([[J, col], [col.T, None]], format="csc")
        try:
            sol = splu(A).solve(np.concatenate([-F, [0.0]]))
        except RuntimeError:
            break
        dw = sol[:-1]
        t = 1.0
        while t > 1e-4:
            Ft = eul.residual(w + t * dw)
            ft = np.linalg.norm(Ft)
            if ft < (1.0 - 1e-4 * t) * fn:
                break
            t *= 0.5
        else:
            break
        w = w + t * dw
        F, fn_old, fn = Ft, fn, ft
        # stagnation at full steps: what is left is the truncation force along
        # the pinned dilation direction
        if t == 1.0 and fn > 0.5 * fn_old:
            break
    ok = bool(fn <= stall_tol * src)
    v = eul.full(w).reshape(ops.W.shape)
    return _normalize(ops, v), steps, ok


# ---------------------------------------------------------------------------
# descent driver


def _descend(ops, u, opts, monitor=None):
    P = ops.P
    pre = _Preconditioner(ops)
    stages = (0.0,) if P.p == 2.0 else opts.eps_schedule + (0.0,)
    history = []
    it = 0
    restarts = 0
    converged = False
    gnorm = math.inf
    alpha = opts.step
    budget = opts.max_iters
    polish_eps = opts.eps_schedule[-1] if P.p < 2.0 else 0.0
    polished = 0
    for si, eps in enumerate(stages):
        if si:
            restarts += 1
            log.debug("eps restart %d: eps=%g", si, eps)
        stage_cap = it + (budget - it if si == len(stages) - 1
                          else max(1, (budget - it) // (len(stages) - si)))
        refresh = True
        stage_conv = False
        last = si == len(stages) - 1
        next_polish = it + 20
        # intermediate regularization stages only need a warm start
        stage_tol = opts.grad_tol if last else max(opts.grad_tol, 1e-3)
        while it < stage_cap:
            G, (Q, n, d, mass) = ops.gradient(u, eps)
            delta = -pre.solve(u, G, eps, refresh)
            refresh = P.p != 2.0 and it % 10 == 0
            slope = float(np.sum(G * delta))
            if slope >= 0:
                # stale preconditioner; fall back to a fresh one
                delta = -pre.solve(u, G, eps, True)
                slope = float(np.sum(G * delta))
                if slope >= 0:
                    break
            gnorm = math.sqrt(-slope / abs(Q))
            history.append((it, Q, gnorm))
            if monitor is not None:
                monitor(it, u, Q, gnorm)
            if gnorm < stage_tol:
                stage_conv = True
                break
            if last and opts.polish and it >= next_polish and gnorm < opts.polish_switch:
                up, steps, ok = _newton_polish(ops, u, polish_eps)
                Qp = ops.quotient_value(up, eps)[0] if ok else math.inf
                # a polish that raises Q has snapped onto a saddle; keep descending
                if ok and Qp <= Q + 1e-12 * abs(Q):
                    u = up
                    polished = steps
                    history.append((it, Qp, 0.0))
                    stage_conv = True
                    break
                log.debug("polish rejected at iteration %d (ok=%s)", it, ok)
                next_polish = it + opts.polish_retry
            if opts.step_rule == "fixed":
                trial = _normalize(ops, u + opts.step * delta)
                Qt = ops.quotient_value(trial, eps)[0]
            else:
                alpha = min(2.0 * alpha, 4.0 * opts.step)
                while True:
                    trial = _normalize(ops, u + alpha * delta)
                    Qt = ops.quotient_value(trial, eps)[0]
                    if Qt <= Q + 1e-4 * alpha * slope or alpha < 1e-10:
                        break
                    alpha *= 0.5
                if Qt > Q:
                    log.debug("line search failed at iteration %d", it)
                    break
            k = _gauge_shift(ops, trial, opts.gauge)
            if abs(k) >= 2:
                try:
                    shifted = _shift_values(ops, trial, k)
                    shifted[0] = shifted[-1] = 0.0
                    shifted = _normalize(ops, shifted)
                    # clipping a negligible tail may still cost a little energy;
                    # the step's own decrease has to pay for it
                    if ops.quotient_value(shifted, eps)[0] <= Q:
                        trial = shifted
                        refresh = True
                except DilationClipError:
                    pass
            u = trial
            it += 1
        if last:
            converged = stage_conv
    if polished:
        gnorm = _grad_norm(ops, pre, u)
    frac = _boundary_fraction(ops, u)
    if frac > opts.boundary_mass_tol:
        raise GaugeError(f"{100 * frac:.2f}% of the q-mass sits in the boundary bands")
    return u, it, converged, gnorm, history, restarts


def _grad_norm(ops, pre, u):
    G, (Q, *_rest) = ops.gradient(u)
    delta = pre.solve(u, G, 0.0, True)
    return math.sqrt(abs(float(np.sum(G * delta))) / abs(Q))


def _run(field_cls, ops, grid, u0, opts):
    u, it, conv, gnorm, hist, restarts = _descend(ops, u0, opts)
    fld = field_cls(grid, u)
    # a partial result is still reported, even if its tails have not settled
    rep = quotient(fld, ops.P, tail_tol=1e-6 if conv else None)
    status = "converged" if conv else "max_iters"
    if not conv:
        log.warning("minimization stopped after %d iterations (grad %.2e)", it, gnorm)
    return MinimizeResult(fld, rep, it, conv, status, gnorm, hist, restarts)


def minimize_radial(P, grid, init="bump", opts=None):
    """Estimate ``S_q^rad(lambda)`` from above by descent over radial profiles."""
    opts = opts or MinimizeOptions()
    if not isinstance(grid, RadialGrid):
        raise TypeError("minimize_radial needs a RadialGrid")
    if isinstance(init, RadialProfile):
        if init.grid != grid:
            raise ParameterError("initial profile lives on a different grid")
        u0 = init.navier().values.copy()
    else:
        u0 = init_profile(grid, P, init).values.copy()
    ops = FieldOps(grid, P)
    return _run(RadialProfile, ops, grid, _normalize(ops, u0), opts)


def seed_zonal(grid, u, amplitude=1e-2):
    """Radial profile embedded zonally plus ``amplitude * u * cos(theta)``."""
    base = np.repeat(u.values[:, None], grid.K, axis=1)
    return AxisymField(grid, base * (1.0 + amplitude * grid.x[None, :]))


def minimize_axisym(P, grid, init="bump", opts=None, perturb=1e-2):
    """Estimate ``S_q(lambda)`` from above over zonal fields.

    ``init`` may be an :class:`AxisymField`, a :class:`RadialProfile` (embedded
    and seeded with ``perturb * u cos(theta)``) or a radial preset name.
    """
    opts = opts or MinimizeOptions()
    if not isinstance(grid, AxisymGrid):
        raise TypeError("minimize_axisym needs an AxisymGrid")
    if grid.N != P.N:
        raise ParameterError("zonal grid built for a different dimension")
    if isinstance(init, AxisymField):
        u0 = init.values.copy()
    else:
        if not isinstance(init, RadialProfile):
            init = init_profile(grid.radial, P, init)
        u0 = seed_zonal(grid, init.navier(), perturb).values.copy()
    u0[0] = u0[-1] = 0.0
    ops = FieldOps(grid, P)
    return _run(AxisymField, ops, grid, _normalize(ops, u0), opts)


# ---------------------------------------------------------------------------
# lambda continuation


@dataclass
class SweepRow:
    lam: float
    S_rad: float
    S_axisym: float
    sigma: float
    resid_rad: float
    resid_axi: float
    iters_rad: int
    iters_axi: int
    verdict: str = ""
    status: str = "ok"
    error: str = ""

    def csv_row(self):
        return [self.lam, self.S_rad, self.S_axisym, self.sigma, self.resid_rad,
                self.resid_axi, self.iters_rad, self.iters_axi]


def sweep_lambda(P, lambdas, grid, axisym_grid=None, opts=None, tol=1e-4,
                 residual_threshold=1e-2, perturb=1e-2):
    """Warm-started lambda continuation; one :class:`SweepRow` per lambda.

    Rows follow the order of ``lambdas``.  A failing row is recorded with
    ``status='error'`` and the sweep moves on.
    """
    from .stability import stability_sigma

    opts = opts or MinimizeOptions()
    rows = []
    warm = None
    for lam in lambdas:
        lam = float(lam)
        try:
            Pl = P.with_lambda(lam)
            rad = minimize_radial(Pl, grid, warm if warm is not None else "bump", opts)
            warm = rad.field
            st = stability_sigma(rad.field, Pl, tol=tol, residual_threshold=residual_threshold,
                                 report=rad.report)
            S_axi, res_axi, it_axi = math.nan, math.nan, 0
            if axisym_grid is not None:
                axi = minimize_axisym(Pl, axisym_grid, rad.field, opts, perturb=perturb)
                S_axi, res_axi, it_axi = (axi.report.quotient_q, axi.report.el_residual,
                                          axi.iterations)
            status = "ok" if rad.converged else "max_iters"
            rows.append(SweepRow(lam, rad.report.quotient_q, S_axi, st.sigma,
                                 rad.report.el_residual, res_axi, rad.iterations, it_axi,
                                 st.verdict, status))
        except Exception as exc:  # recorded per row; the sweep continues
            log.warning("sweep row lambda=%g failed: %s", lam, exc)
            rows.append(SweepRow(lam, math.nan, math.nan, math.nan, math.nan, math.nan,
                                 0, 0, "inconclusive", "error", str(exc)))
    return rows

"""Complexity functionals, their stationary points, and grid scans."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import dyson
from .errors import DegenerateU, DegenerateVariance, NumericalError, ValidationError
from .mixture import MixtureStats, all_sign_patterns

DEDUP_TOL = 1e-6
MAXIMALITY_TOL = 1e-9
SCAN_POINTS = {1: 1201, 2: 301, 3: 61}


@dataclass(frozen=True)
class ComplexityPoint:
    """F, its gradient, and the boundary value u at one point x."""

    x: np.ndarray
    v: np.ndarray
    F: float
    gradF: np.ndarray
    gradF_x: np.ndarray
    u: np.ndarray
    u_real: bool


@dataclass(frozen=True)
class StationaryPoint:
    v: np.ndarray
    pattern: tuple[str, ...]
    F: float
    is_global_max: bool
    residual: float


@dataclass(frozen=True)
class ScanResult:
    """Tensor-product grid scan of F with the nonreal-region mask."""

    grid: list
    F_values: np.ndarray
    boundary_mask: np.ndarray

    def to_csv(self, path) -> None:
        r = len(self.grid)
        mesh = np.meshgrid(*self.grid, indexing="ij")
        cols = [m.ravel() for m in mesh]
        cols.append(self.F_values.ravel())
        cols.append(self.boundary_mask.ravel().astype(float))
        data = np.column_stack(cols)
        header = ",".join([f"x_{s + 1}" for s in range(r)] + ["F", "nonreal"])
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt=["%.10g"] * (r + 1) + ["%d"])


def _require_positive_xi_prime(stats: MixtureStats) -> None:
    if np.any(stats.xi_prime <= 0):
        raise ValidationError("complexity functionals require xi'_s > 0 "
                              "for every species")


def _quad_const(stats: MixtureStats) -> float:
    return 0.5 * (1.0 - float(stats.lam @ np.log(stats.xi_species)))


def _psi_of_u(stats: MixtureStats, u) -> float:
    # bilinear (unconjugated) pairing, as in dyson.psi
    quad = 0.5 * np.real(u @ stats.xi_dprime @ u)
    return float(quad - stats.lam @ np.log(np.abs(u)))


def _x_of_delta(stats: MixtureStats, delta) -> np.ndarray:
    sq = np.sqrt(stats.xi_prime)
    root_lam = np.sqrt(stats.lam)
    return delta * sq + (stats.xi_dprime @ (delta * root_lam / sq)) / root_lam


def _r_auto(stats: MixtureStats) -> float:
    # beyond this radius the quadratic term dominates the log growth of Psi
    return 2.0 * float(np.max(_x_of_delta(stats, np.ones(stats.r)))) + 4.0


def F_point(stats: MixtureStats, x) -> ComplexityPoint:
    """Evaluate F(x) and its closed-form gradient."""
    x = np.asarray(x, dtype=float)
    if x.shape != (stats.r,):
        raise ValidationError(f"x must have shape ({stats.r},)")
    _require_positive_xi_prime(stats)
    v = np.sqrt(stats.lam) * x
    u = dyson.boundary_u(stats, v)
    if np.abs(u).min() < 1e-8:
        raise DegenerateU("some |u_s| < 1e-8; log|u_s| is unstable")
    ainv_v = np.linalg.solve(stats.A, v)
    value = _quad_const(stats) - 0.5 * float(v @ ainv_v) + _psi_of_u(stats, u)
    grad_v = -ainv_v - u.real
    return ComplexityPoint(
        x=x, v=v, F=value,
        gradF=grad_v, gradF_x=np.sqrt(stats.lam) * grad_v,
        u=u, u_real=bool(np.abs(u.imag).max() <= dyson.REAL_TOL),
    )


def F_extended(stats: MixtureStats, x, E: float) -> float:
    """F(x, E): F(x) minus the Gaussian-conditioning penalty in the energy."""
    x = np.asarray(x, dtype=float)
    ainv_xi = np.linalg.solve(stats.A, stats.xi_prime)
    variance = stats.xi_one - float(stats.xi_prime @ ainv_xi)
    if variance <= 1e-12:
        raise DegenerateVariance(
            f"conditional energy variance {variance:.3e} <= 1e-12")
    mean = float(ainv_xi @ (np.sqrt(stats.lam) * x))
    return F_point(stats, x).F - (float(E) - mean) ** 2 / (2.0 * variance)


def _census_b(stats: MixtureStats, imag_mask, target=1e-12, max_iter=200):
    """Solve the imaginary-part system of the stationary dichotomy.

    Unknown b = Im u.  Species outside imag_mask carry a pinned modulus,
    so their rows read xi'_s b_s - (xi'' b)_s; imag species contribute
    lambda_s / b_s - (xi'' b)_s.  Returns None when Newton fails.
    """
    lam, xp, xpp = stats.lam, stats.xi_prime, stats.xi_dprime
    b = np.zeros(stats.r)
    if not imag_mask.any():
        return b
    diag_pp = np.diag(xpp)
    seed = np.where(diag_pp > 0, diag_pp, xp)
    b[imag_mask] = np.sqrt(lam[imag_mask] / seed[imag_mask])

    def residual(bv):
        g = xp * bv - xpp @ bv
        g[imag_mask] = (lam[imag_mask] / bv[imag_mask]
                        - (xpp @ bv)[imag_mask])
        return g

    g = residual(b)
    for _ in range(max_iter):
        if np.abs(g).max() <= target:
            return b
        jac = np.diag(xp) - xpp
        for s in np.where(imag_mask)[0]:
            jac[s] = -xpp[s]
            jac[s, s] -= lam[s] / b[s] ** 2
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -g, rcond=None)[0]
        t, advanced = 1.0, False
        for _ in range(60):
            bn = b + t * step
            if np.all(bn[imag_mask] > 1e-12) and np.all(bn[~imag_mask] >= 0):
                gn = residual(bn)
                if np.abs(gn).max() < np.abs(g).max():
                    b, g, advanced = bn, gn, True
                    break
            t *= 0.5
        if not advanced:
            return None
    return b if np.abs(residual(b)).max() <= target else None


def find_stationary_points(stats: MixtureStats,
                           tol: float = 1e-8) -> list[StationaryPoint]:
    """Enumerate stationary points of F by the per-species dichotomy.

    Each of the 3^r patterns fixes, per species, either the sign of Re(u_s)
    with |u_s| pinned at sqrt(lambda_s/xi'_s), or Re(u_s) = 0.  The real
    part of the stationarity identity then holds automatically and only
    Im v(u) = 0 is solved.  Patterns whose solution violates the modulus
    cap or the attainability conditions are dropped without error.
    """
    if stats.r > 6:
        raise ValidationError("stationary enumeration supports r <= 6")
    _require_positive_xi_prime(stats)
    rho = np.sqrt(stats.lam / stats.xi_prime)
    raw = []
    for pattern in product(("plus", "minus", "imag"), repeat=stats.r):
        tags = np.array(pattern)
        imag_mask = tags == "imag"
        b = _census_b(stats, imag_mask)
        if b is None:
            continue
        sign_mask = ~imag_mask
        if np.any(rho[sign_mask] - b[sign_mask] <= 1e-9):
            continue
        re = np.zeros(stats.r)
        sgn = np.where(tags == "plus", -1.0, 1.0)
        re[sign_mask] = sgn[sign_mask] * np.sqrt(
            rho[sign_mask] ** 2 - b[sign_mask] ** 2)
        u = re + 1j * b
        if dyson.feasibility(stats, u).case == "infeasible":
            continue
        raw.append((pattern, u, -stats.A @ re))
    kept = []
    for pattern, u, v in raw:
        if any(np.abs(v - other[2]).max() <= DEDUP_TOL for other in kept):
            continue
        kept.append((pattern, u, v))
    if not kept:
        return []
    V = np.array([v for _, _, v in kept])
    # independent stationarity residual through the module-level gradient
    u_dyson = dyson._boundary_batch(V / stats.lam, dyson._coupling(stats),
                                    stats.lam, holder_check=False)
    grad = -np.linalg.solve(stats.A, V.T).T - u_dyson.real
    values = [
        _quad_const(stats) - 0.5 * float(v @ np.linalg.solve(stats.A, v))
        + _psi_of_u(stats, u)
        for _, u, v in kept
    ]
    fmax = max(values)
    points = [
        StationaryPoint(v=v, pattern=pattern, F=value,
                        is_global_max=value >= fmax - MAXIMALITY_TOL,
                        residual=float(np.abs(grad[i]).max()))
        for i, ((pattern, _, v), value) in enumerate(zip(kept, values))
    ]
    points.sort(key=lambda p: (-p.F, tuple(p.v)))
    return points


def fd_hessian(stats: MixtureStats, x, h: float = 1e-4) -> np.ndarray:
    """Finite-difference Hessian of F in x-coordinates."""
    x = np.asarray(x, dtype=float)
    r = x.shape[0]
    hess = np.zeros((r, r))
    for j in range(r):
        e = np.zeros(r)
        e[j] = h
        gp = F_point(stats, x + e).gradF_x
        gm = F_point(stats, x - e).gradF_x
        hess[:, j] = (gp - gm) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def sup_F(stats: MixtureStats, region=None, multistart: int = 32,
          seed: int = 0):
    """Maximize F over a box by multistart ascent with a Newton polish."""
    from scipy.optimize import minimize

    radius = _r_auto(stats) if region is None else float(region)
    if radius <= 0:
        raise ValidationError("region radius must be positive")
    if multistart < 1:
        raise ValidationError("multistart must be at least 1")
    r = stats.r
    rng = np.random.default_rng(seed)

    def negative(xv):
        try:
            pt = F_point(stats, xv)
        except NumericalError:
            return 1e10, np.zeros(r)
        return -pt.F, -pt.gradF_x

    starts = [np.zeros(r)]
    if 2 ** r <= max(multistart, 2):
        for delta in all_sign_patterns(r):
            starts.append(np.clip(_x_of_delta(stats, delta), -radius, radius))
    while len(starts) < multistart:
        starts.append(rng.uniform(-radius, radius, r))

    best_x, best_f = None, -np.inf
    bounds = [(-radius, radius)] * r
    for start in starts[:max(multistart, len(starts))]:
        res = minimize(negative, start, jac=True, method="L-BFGS-B",
                       bounds=bounds,
                       options={"ftol": 1e-14, "gtol": 1e-12, "maxiter": 500})
        if np.isfinite(res.fun) and -res.fun > best_f:
            best_f, best_x = -float(res.fun), np.asarray(res.x)

    # local Newton refinement off the box constraints
    x = best_x
    for _ in range(8):
        try:
            g = F_point(stats, x).gradF_x
            if np.abs(g).max() < 1e-12:
                break
            step = np.linalg.solve(fd_hessian(stats, x), -g)
        except (np.linalg.LinAlgError, NumericalError):
            break
        moved = False
        for t in (1.0, 0.5, 0.25, 0.125):
            xn = np.clip(x + t * step, -radius, radius)
            try:
                if np.abs(F_point(stats, xn).gradF_x).max() < np.abs(g).max():
                    x, moved = xn, True
                    break
            except NumericalError:
                continue
        if not moved:
            break
    final = F_point(stats, x).F
    if final < best_f:
        x, final = best_x, best_f
    return float(final), x


def _parse_scan_grid(stats: MixtureStats, grid_spec):
    if grid_spec is None:
        radius = _r_auto(stats)
        return -radius, radius, SCAN_POINTS[stats.r]
    if isinstance(grid_spec, int):
        radius = _r_auto(stats)
        lo, hi, n = -radius, radius, grid_spec
    else:
        lo, hi, n = grid_spec
    lo, hi, n = float(lo), float(hi), int(n)
    if not lo < hi:
        raise ValidationError("grid range must satisfy lo < hi")
    if n < 2:
        raise ValidationError("grid needs at least 2 points per axis")
    return lo, hi, n


def scan(stats: MixtureStats, grid_spec=None, chunk: int = 4096) -> ScanResult:
    """F and the nonreal mask on a tensor-product x-grid."""
    if stats.r > 3:
        raise ValidationError("tensor-grid scans support r <= 3")
    _require_positive_xi_prime(stats)
    lo, hi, n = _parse_scan_grid(stats, grid_spec)
    axis = np.linspace(lo, hi, n)
    axes = [axis.copy() for _ in range(stats.r)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    V = np.sqrt(stats.lam) * X
    K = dyson._coupling(stats)
    qc = _quad_const(stats)
    values = np.empty(X.shape[0])
    mask = np.empty(X.shape[0], dtype=bool)
    for start in range(0, X.shape[0], chunk):
        sl = slice(start, start + chunk)
        u = dyson._boundary_batch(V[sl] / stats.lam, K, stats.lam,
                                  polish=False, holder_check=False)
        vb = V[sl]
        quad = np.einsum("pi,pi->p", vb, np.linalg.solve(stats.A, vb.T).T)
        pair = 0.5 * np.real(np.einsum("pi,ij,pj->p", u, stats.xi_dprime, u))
        logs = np.log(np.maximum(np.abs(u), 1e-300)) @ stats.lam
        values[sl] = qc - 0.5 * quad + pair - logs
        mask[sl] = u.imag.max(axis=1) > dyson.REAL_TOL
    shape = (n,) * stats.r
    return ScanResult(grid=axes, F_values=values.reshape(shape),
                      boundary_mask=mask.reshape(shape))

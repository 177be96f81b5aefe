"""The verification harness: eta construction along twin solutions, KR
distance tracking, and the numerical counterparts of every stability
inequality.

Constants that the theory leaves existential (C, C_1, C_2, ...) are never
assumed here: each check fits the smallest admissible constant from the data
and the verdicts only concern sweep-uniformity of those fits.  Exact discrete
inequalities (the rate-of-change chain, the truncated-distance combination
bound) are asserted to float tolerance; they are build-breaking, not
statistical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cost import CostKind, CostSpec
from .fields import IntegrabilityModulus, VelocityField, default_modulus, psi_one, sobolev_seminorm
from .measures import Grid, SignedDensity, lq_norm, mass, mean_zero_projection
from .pde import CauchyData, SolutionTrajectory
from .transport import (TransportPlan, kr_distance, potential_gradient_on_support,
                        solve_primal, w_neg11_norm)


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line y = a*x + b; returns (a, b, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


# ---------------------------------------------------------------------------
# stability instances and eta trajectories

@dataclass
class StabilityInstance:
    """Two Cauchy problems with conjugate exponents 1/p + 1/q = 1."""

    data1: CauchyData
    data2: CauchyData
    p: float
    q: float

    def __post_init__(self) -> None:
        inv = (0.0 if self.p == math.inf else 1.0 / self.p) + \
              (0.0 if self.q == math.inf else 1.0 / self.q)
        if abs(inv - 1.0) > 1e-12:
            raise ValueError(f"exponents must satisfy 1/p + 1/q = 1, got p={self.p} q={self.q}")

    def perturbation_size(self, grid: Grid) -> float:
        """r = ||u1-u2||_{L^1(L^p)} + ||f1-f2||_{L^1(L^q)} + ||rho0_1-rho0_2||_q."""
        T = self.data1.horizon
        centers = grid.centers()
        du = np.asarray(self.data1.velocity(0.0, centers)) - \
            np.asarray(self.data2.velocity(0.0, centers))
        du_mag = np.abs(du) if du.ndim == 1 else np.sqrt((du * du).sum(axis=-1))
        u_term = T * lq_norm(SignedDensity(grid, du_mag.reshape(grid.shape)), self.p)
        f1 = self.data1.source_at(0.0, grid)
        f2 = self.data2.source_at(0.0, grid)
        if f1 is None and f2 is None:
            f_term = 0.0
        else:
            z = np.zeros(grid.shape)
            diff = (f1 if f1 is not None else z) - (f2 if f2 is not None else z)
            f_term = T * lq_norm(SignedDensity(grid, diff), self.q)
        rho_term = lq_norm(SignedDensity(
            grid, self.data1.initial.values - self.data2.initial.values), self.q)
        return float(u_term + f_term + rho_term)


@dataclass
class EtaTrajectory:
    """Frames of eta(t) = rho1 - rho2 - (rho0_1 - rho0_2) - int_0^t (f1 - f2),
    mean-zero projected, plus the projection magnitudes that were removed."""

    grid: Grid
    times: np.ndarray
    frames: np.ndarray
    projection_magnitudes: np.ndarray
    instance: StabilityInstance | None = None

    def frame(self, k: int) -> SignedDensity:
        return SignedDensity(self.grid, self.frames[k])

    @property
    def n_frames(self) -> int:
        return len(self.times)


def build_eta(instance: StabilityInstance, traj1: SolutionTrajectory,
              traj2: SolutionTrajectory) -> EtaTrajectory:
    if traj1.grid != traj2.grid:
        raise ValueError("trajectories live on different grids")
    if len(traj1.times) != len(traj2.times) or np.max(np.abs(traj1.times - traj2.times)) > 1e-12:
        raise ValueError("trajectories have different time stamps")
    grid = traj1.grid
    drho0 = instance.data1.initial.values - instance.data2.initial.values
    frames, projections = [], []
    for k, t in enumerate(traj1.times):
        f1 = instance.data1.source_at(t, grid)
        f2 = instance.data2.source_at(t, grid)
        if f1 is None and f2 is None:
            src = 0.0
        else:
            z = np.zeros(grid.shape)
            diff = (f1 if f1 is not None else z) - (f2 if f2 is not None else z)
            if callable(instance.data1.source) or callable(instance.data2.source):
                # trapezoid in time for genuinely time-dependent sources
                ts = np.linspace(0.0, t, 33)
                vals = []
                for s in ts:
                    a = instance.data1.source_at(s, grid)
                    b = instance.data2.source_at(s, grid)
                    vals.append((a if a is not None else z) - (b if b is not None else z))
                src = np.trapezoid(np.stack(vals), ts, axis=0) if t > 0 else 0.0
            else:
                src = diff * t
        raw = traj1.frames[k] - traj2.frames[k] - drho0 - src
        eta = SignedDensity(grid, raw)
        projections.append(abs(mass(eta)))
        frames.append(mean_zero_projection(eta).values)
    return EtaTrajectory(grid, traj1.times.copy(), np.stack(frames),
                         np.asarray(projections), instance)


def eta_flux(instance: StabilityInstance, eta: EtaTrajectory,
             traj2: SolutionTrajectory, k: int) -> np.ndarray:
    """j = u1*eta + (u1-u2)*rho2 + u1*(drho0 + int (f1-f2)) on the grid."""
    grid = eta.grid
    t = float(eta.times[k])
    centers = grid.centers()
    if grid.dim == 1:
        u1 = np.asarray(instance.data1.velocity(t, centers[:, 0])).reshape(grid.shape)[..., None]
        u2 = np.asarray(instance.data2.velocity(t, centers[:, 0])).reshape(grid.shape)[..., None]
    else:
        u1 = np.asarray(instance.data1.velocity(t, centers)).reshape(grid.shape + (2,))
        u2 = np.asarray(instance.data2.velocity(t, centers)).reshape(grid.shape + (2,))
    drho0 = instance.data1.initial.values - instance.data2.initial.values
    f1 = instance.data1.source_at(t, grid)
    f2 = instance.data2.source_at(t, grid)
    z = np.zeros(grid.shape)
    fint = ((f1 if f1 is not None else z) - (f2 if f2 is not None else z)) * t
    rho2 = traj2.frames[k]
    return u1 * eta.frames[k][..., None] + (u1 - u2) * rho2[..., None] \
        + u1 * (drho0 + fint)[..., None]


def track_kr(eta: EtaTrajectory, delta: float, radius: float) -> np.ndarray:
    """D_{delta,R}(eta(t)) for every stored frame."""
    spec = CostSpec(CostKind.BOUNDED_LOG, radius=radius, delta=delta)
    out = np.zeros(eta.n_frames)
    for k in range(eta.n_frames):
        if np.abs(eta.frames[k]).max() > 0:
            out[k] = kr_distance(eta.frame(k), spec)
    return out


# ---------------------------------------------------------------------------
# rate-of-change identity (weak time derivative of the KR distance)

@dataclass
class DerivativeIdentityReport:
    times: np.ndarray
    lhs: np.ndarray          # centered differences of D(t)
    rhs: np.ndarray          # int j . grad(phi_opt) via the plan pairing
    rel_gap: float           # time-integrated |lhs-rhs| / |rhs|


def check_derivative_identity(instance: StabilityInstance, eta: EtaTrajectory,
                              traj2: SolutionTrajectory, delta: float,
                              radius: float) -> DerivativeIdentityReport:
    """Centered-difference dD/dt against the plan-support pairing.

    The right side pairs the flux with grad(phi_opt) through the marginal
    identity, evaluated only on the plan support where the gradient formula
    holds; the potential is never differentiated off-support.
    """
    if eta.n_frames < 5:
        raise ValueError("need at least 5 stored frames")
    spec = CostSpec(CostKind.BOUNDED_LOG, radius=radius, delta=delta)
    D = track_kr(eta, delta, radius)
    hv = eta.grid.cell_volume
    times, lhs, rhs = [], [], []
    for k in range(1, eta.n_frames - 1):
        dt = eta.times[k + 1] - eta.times[k - 1]
        lhs.append((D[k + 1] - D[k - 1]) / dt)
        j = eta_flux(instance, eta, traj2, k)
        plan, _ = solve_primal(eta.frame(k), spec)
        g = potential_gradient_on_support(plan, spec)
        # deposit the support gradient at both endpoint cells, mass-averaged
        flat_j = j.reshape(-1, eta.grid.dim)
        acc = np.zeros((eta.grid.ncells, eta.grid.dim))
        wts = np.zeros(eta.grid.ncells)
        np.add.at(acc, g.src_cells, g.grad * g.mass[:, None])
        np.add.at(acc, g.dst_cells, g.grad * g.mass[:, None])
        np.add.at(wts, g.src_cells, g.mass)
        np.add.at(wts, g.dst_cells, g.mass)
        covered = wts > 0
        ghat = np.zeros_like(acc)
        ghat[covered] = acc[covered] / wts[covered, None]
        rhs.append(float((flat_j[covered] * ghat[covered]).sum() * hv))
        times.append(eta.times[k])
    times = np.asarray(times)
    lhs = np.asarray(lhs)
    rhs = np.asarray(rhs)
    num = np.trapezoid(np.abs(lhs - rhs), times)
    den = np.trapezoid(np.abs(rhs), times)
    rel = float(num / den) if den > 0 else (0.0 if num == 0 else math.inf)
    return DerivativeIdentityReport(times, lhs, rhs, rel)


# ---------------------------------------------------------------------------
# the three-link rate bound chain

@dataclass
class RateBoundsReport:
    delta: float
    lhs_pairing: float        # |int u . grad(phi) eta|
    difference_quotient: float  # iint |u(x)-u(y)|/(delta+|x-y|) dpi
    chain_slack: float        # lhs - quotient; exact math, <= ~1e-9
    over_distance: float      # iint |u(x)-u(y)|/|x-y| dpi (p > 1 route)
    c_l3: float | None        # fitted constant of the Sobolev route
    c_l5: float | None        # fitted constant of the W^{1,1} route
    psi1: float | None


def check_rate_bounds(eta_frame: SignedDensity, u: VelocityField, delta: float,
                      radius: float, p: float, q: float,
                      modulus: IntegrabilityModulus | None = None,
                      modulus_integral: float | None = None,
                      plan: TransportPlan | None = None) -> RateBoundsReport:
    spec = CostSpec(CostKind.BOUNDED_LOG, radius=radius, delta=delta)
    if plan is None or plan.cost != spec:
        plan, _ = solve_primal(eta_frame, spec)
    if plan.n_entries == 0:
        return RateBoundsReport(delta, 0.0, 0.0, 0.0, 0.0, None, None, None)
    g = potential_gradient_on_support(plan, spec)
    xs = plan.src_pos[g.src_idx]
    ys = plan.dst_pos[g.dst_idx]
    ux = np.asarray(u(0.0, xs[:, 0] if u.dim == 1 else xs))
    uy = np.asarray(u(0.0, ys[:, 0] if u.dim == 1 else ys))
    du = ux - uy
    if u.dim == 1:
        pairing = float((g.mass * du * g.grad[:, 0]).sum())
        du_mag = np.abs(du)
    else:
        pairing = float((g.mass * (du * g.grad).sum(axis=1)).sum())
        du_mag = np.sqrt((du * du).sum(axis=1))
    delta_vec = xs - ys
    L = eta_frame.grid.length
    delta_vec = delta_vec - L * np.round(delta_vec / L)
    dist = np.abs(delta_vec[:, 0]) if u.dim == 1 else np.sqrt((delta_vec**2).sum(axis=1))
    quotient = float((g.mass * du_mag / (delta + dist)).sum())
    over_d = float((g.mass * du_mag / dist).sum())
    lhs = abs(pairing)
    c_l3 = c_l5 = psi1 = None
    if p > 1:
        denom = lq_norm(eta_frame, q) * sobolev_seminorm(u, p)
        if 0 < denom < math.inf:
            c_l3 = over_d / denom
    else:
        modulus = modulus or default_modulus()
        if modulus_integral is not None and modulus_integral < math.inf:
            psi1 = psi_one(modulus, delta)
            denom = psi1 * (lq_norm(eta_frame, 1)
                            + lq_norm(eta_frame, math.inf) * modulus_integral)
            if denom > 0:
                c_l5 = quotient / denom
    return RateBoundsReport(delta, lhs, quotient, lhs - quotient, over_d, c_l3, c_l5, psi1)


# ---------------------------------------------------------------------------
# the main stability estimate

@dataclass
class Prop1Report:
    deltas: np.ndarray
    sup_d: np.ndarray          # sup_t D_{delta,R}(eta(t)) per delta
    r: float
    log_slope: float           # growth of sup_d against log(1/delta)
    log_intercept: float
    r2: float
    c1_joint: float            # minimal constants with the r/delta term
    c2_joint: float
    ratio: float               # max/min of sup_d across the sweep
    short_time_ok: bool        # D(t1) <= 2 * extrapolated D(t2)


def check_prop1(instance: StabilityInstance, traj1: SolutionTrajectory,
                traj2: SolutionTrajectory, deltas, radius: float) -> Prop1Report:
    """Fits the smallest constants in
    sup_t D <= C1 * psi_p(delta) + (C2/delta) * r across the delta sweep and
    regresses the sweep against log(1/delta); the paper's dichotomy is read
    off the regression slope (the |log delta| coefficient equals the mass
    transported at scale one)."""
    eta = build_eta(instance, traj1, traj2)
    deltas = np.asarray(sorted(deltas, reverse=True), dtype=float)
    sup_d = np.zeros(len(deltas))
    short_ok = True
    for i, d in enumerate(deltas):
        series = track_kr(eta, d, radius)
        sup_d[i] = series.max()
        if len(series) > 2 and series[2] > 0:
            t1, t2 = eta.times[1], eta.times[2]
            extrapolated = series[2] * (t1 / t2)
            short_ok = short_ok and (series[1] <= 2.0 * extrapolated + 1e-12)
    r = instance.perturbation_size(traj1.grid)
    slope, intercept, r2 = linear_fit(np.log(1.0 / deltas), sup_d)
    psi = np.ones_like(deltas)
    if instance.p == 1:
        modulus = default_modulus()
        psi = np.array([psi_one(modulus, d) for d in deltas])
    if sup_d.max() == 0.0:
        c1_joint = c2_joint = 0.0
    elif r > 0:
        # least max-ratio fit of S <= C1 psi_p + (C2/delta) r: nonnegative
        # least squares for the shape, then inflate to cover every point
        from scipy.optimize import nnls
        X = np.column_stack([psi, r / deltas])
        coef, _ = nnls(X, sup_d)
        pred = X @ coef
        if np.any((pred <= 0) & (sup_d > 0)):
            c1_joint, c2_joint = float((sup_d / psi).max()), 0.0
        else:
            ok = pred > 0
            factor = float(np.max(sup_d[ok] / pred[ok], initial=1.0))
            c1_joint, c2_joint = float(coef[0] * max(factor, 1.0)), \
                float(coef[1] * max(factor, 1.0))
    else:
        c1_joint, c2_joint = float((sup_d / psi).max()), 0.0
    ratio = float(sup_d.max() / sup_d.min()) if sup_d.min() > 0 else math.inf
    return Prop1Report(deltas, sup_d, r, slope, intercept, r2, c1_joint, c2_joint,
                       ratio, short_ok)


# ---------------------------------------------------------------------------
# truncated-distance combination bound and the uniqueness drive

def lemma4_combine(d_val: float, eta_l1: float, eps: float, delta: float,
                   radius: float) -> float:
    """Upper bound delta*exp(D/eps)*||eta||_1 + eps*R + R*D/log(R/delta+1).

    The exponential is evaluated in log space and saturates to +inf instead
    of overflowing.
    """
    if min(eps, delta, radius) <= 0:
        raise ValueError("eps, delta, radius must be positive")
    log_first = math.log(delta) + d_val / eps + (math.log(eta_l1) if eta_l1 > 0 else -math.inf)
    first = math.exp(log_first) if log_first < 700 else math.inf
    return first + eps * radius + radius * d_val / math.log1p(radius / delta)


@dataclass
class UniquenessReport:
    deltas: np.ndarray
    bounds_dr: np.ndarray     # bound on D_R(eta) per delta, eps = 1/sqrt|log delta|
    bounds_w: np.ndarray      # implied bound on ||eta||_{W^-1,1} (R = 1)
    monotone: bool
    reduction: float          # bound(first) / bound(last)


def uniqueness_drive(d_by_delta: dict[float, float], eta_l1: float,
                     radius: float = 1.0) -> UniquenessReport:
    """Replays the uniqueness mechanism: combine the sweep through the
    truncated bound with eps = 1/sqrt(|log delta|) and watch the bound fall."""
    deltas = np.asarray(sorted(d_by_delta, reverse=True), dtype=float)
    bounds = []
    for d in deltas:
        eps = 1.0 / math.sqrt(abs(math.log(d))) if d not in (1.0,) else 1.0
        bounds.append(lemma4_combine(d_by_delta[d], eta_l1, eps, d, radius))
    bounds = np.asarray(bounds)
    # D_1 and the W^{-1,1} norm sandwich within a factor 2 (R = 1)
    bounds_w = 2.0 * bounds
    monotone = bool(np.all(np.diff(bounds) <= 1e-12 * np.maximum(bounds[:-1], 1e-300)))
    reduction = float(bounds[0] / bounds[-1]) if bounds[-1] > 0 else math.inf
    return UniquenessReport(deltas, bounds, bounds_w, monotone, reduction)


# ---------------------------------------------------------------------------
# stability rate in the W^{-1,1} norm

@dataclass
class StabilityRateReport:
    rs: np.ndarray
    sup_w: np.ndarray
    fitted_c: np.ndarray        # sup_w * |log r|
    c_growth: float             # max fitted C / fitted C at the largest r
    schedule_terms: np.ndarray  # (len(rs), 3): sqrt(r), eps, 1/log(1/r+1)
    dominated: np.ndarray       # measured norm <= sum of schedule terms


def stability_rate(rs, sup_w) -> StabilityRateReport:
    rs = np.asarray(rs, dtype=float)
    sup_w = np.asarray(sup_w, dtype=float)
    logs = np.abs(np.log(rs))
    fitted = sup_w * logs
    c_growth = float(fitted.max() / fitted[0]) if fitted[0] > 0 else math.inf
    terms = np.zeros((len(rs), 3))
    for i, r in enumerate(rs):
        eps = 1.0 / abs(math.log(math.sqrt(r)))
        terms[i] = (r * math.exp(1.0 / eps), eps, 1.0 / math.log(1.0 / r + 1.0))
    dominated = sup_w <= terms.sum(axis=1) + 1e-12
    return StabilityRateReport(rs, sup_w, fitted, c_growth, terms, dominated)

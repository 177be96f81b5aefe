"""Exact discrete optimal transport for concave metric costs.

A mean-zero signed density is split into its Jordan parts, the parts become
atoms at the cell centers, and the transport problem between them is solved
as an exact linear program.  Two backends, both certified by LP optimality:

* balanced instances whose atoms all carry the same mass reduce to an
  assignment problem (Birkhoff: the extreme plans are permutations), solved
  by ``scipy.optimize.linear_sum_assignment``;
* everything else goes through the sparse transportation LP with the HiGHS
  simplex, which also returns the node duals used to build Kantorovich-
  Rubinstein potentials.

Potentials are extended from the LP duals to the whole grid by the metric
envelope ``phi(z) = min_j (c(dist(z, y_j)) - v_j)``, which is c-Lipschitz by
construction and attains the dual optimum, hence saturates the constraint on
the support of every optimal plan.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog

from .cost import CostKind, CostSpec, cost_derivative, cost_eval
from .measures import Grid, SignedDensity, jordan_decompose, lq_norm, mass, periodic_distance_matrix

MASS_TOL = 1e-10
_HIGHS_OPTS = {
    "presolve": True,
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass
class TransportPlan:
    """Sparse optimal coupling between the Jordan parts of a density."""

    grid: Grid
    cost: CostSpec
    src_pos: np.ndarray = field(repr=False)  # (m, d) atom positions
    src_mass: np.ndarray = field(repr=False)
    dst_pos: np.ndarray = field(repr=False)
    dst_mass: np.ndarray = field(repr=False)
    src_cells: np.ndarray = field(repr=False)  # flat cell indices of the atoms
    dst_cells: np.ndarray = field(repr=False)
    src_idx: np.ndarray = field(repr=False)  # plan entries: src atom index
    dst_idx: np.ndarray = field(repr=False)
    plan_mass: np.ndarray = field(repr=False)
    value: float = 0.0

    @property
    def n_entries(self) -> int:
        return len(self.plan_mass)

    def entry_distances(self) -> np.ndarray:
        if self.n_entries == 0:
            return np.zeros(0)
        d = self.src_pos[self.src_idx] - self.dst_pos[self.dst_idx]
        L = self.grid.length
        d -= L * np.round(d / L)
        return np.sqrt((d * d).sum(axis=1))

    def marginal_deviation(self) -> float:
        """Worst relative defect of row/column sums against the marginals."""
        if self.n_entries == 0:
            return 0.0
        row = np.bincount(self.src_idx, weights=self.plan_mass, minlength=len(self.src_mass))
        col = np.bincount(self.dst_idx, weights=self.plan_mass, minlength=len(self.dst_mass))
        scale = max(self.src_mass.max(), self.dst_mass.max())
        return float(max(np.abs(row - self.src_mass).max(), np.abs(col - self.dst_mass).max()) / scale)


@dataclass
class Potential:
    """Kantorovich-Rubinstein potential on the full grid, normalized so that
    max(phi) + min(phi) = 0."""

    grid: Grid
    cost: CostSpec
    values: np.ndarray = field(repr=False)


def _atoms(part: SignedDensity) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nonzero cells of a nonnegative density as (positions, masses, cells)."""
    flat = part.values.ravel()
    cells = np.nonzero(flat > 0.0)[0]
    pos = part.grid.centers()[cells]
    return pos, flat[cells] * part.grid.cell_volume, cells


def cost_matrix(spec: CostSpec, pos_a: np.ndarray, pos_b: np.ndarray, length: float,
                block_rows: int = 4096) -> np.ndarray:
    """Dense cost matrix c(dist(x_i, y_j)), generated in row blocks."""
    m = len(pos_a)
    out = np.empty((m, len(pos_b)))
    for lo in range(0, m, block_rows):
        hi = min(lo + block_rows, m)
        d = periodic_distance_matrix(pos_a[lo:hi], pos_b, length)
        out[lo:hi] = cost_eval(spec, d)
    return out


def _uniform(masses: np.ndarray) -> bool:
    return bool(masses.size and np.ptp(masses) <= 1e-12 * masses.max())


def _solve_transport_lp(a: np.ndarray, b: np.ndarray, C: np.ndarray):
    """Exact transportation LP; returns (entries, duals u, v).

    Marginals are normalized to unit total for the solver (pure scaling:
    plan masses scale back, duals are per-unit prices and are unchanged).
    """
    m, n = C.shape
    mn = m * n
    cols = np.arange(mn)
    rows = np.concatenate([np.repeat(np.arange(m), n), m + np.tile(np.arange(n), m)])
    A = sparse.csr_matrix(
        (np.ones(2 * mn), (rows, np.concatenate([cols, cols]))), shape=(m + n, mn)
    )
    scale = a.sum()
    rhs = np.concatenate([a, b]) / scale
    # presolve misreads rows whose mass is below the feasibility tolerance as
    # inconsistent; fall back deterministically before giving up
    res = None
    for opts in (_HIGHS_OPTS, {**_HIGHS_OPTS, "presolve": False}, {}):
        res = linprog(C.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None),
                      method="highs", options=opts)
        if res.status == 0:
            break
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    x = res.x * scale
    keep = np.nonzero(x > 1e-15 * max(a.max(), b.max()))[0]
    si, di = np.divmod(keep, n)
    lam = res.eqlin.marginals
    return (si, di, x[keep]), lam[:m], lam[m:]


def _prune_atoms(pos, masses, cells):
    # drop roundoff-level atoms (mean-zero projection residue); the pruned
    # fraction is <= n_atoms * 1e-13 of the largest atom, far below every
    # tolerance the distances are asserted at
    if len(masses) == 0:
        return pos, masses, cells
    keep = masses > 1e-13 * masses.max()
    return pos[keep], masses[keep], cells[keep]


def _prepare_instance(eta: SignedDensity, cost: CostSpec):
    total = mass(eta)
    l1 = lq_norm(eta, 1)
    if l1 > 0 and abs(total) > MASS_TOL * l1:
        raise ValueError(
            f"density is not mean-zero (mass {total:.3e} vs L1 {l1:.3e}); "
            "apply mean_zero_projection first")
    pos_p, mass_p, cells_p = _prune_atoms(*_atoms(jordan_decompose(eta)[0]))
    pos_n, mass_n, cells_n = _prune_atoms(*_atoms(jordan_decompose(eta)[1]))
    if len(mass_p) and len(mass_n):
        # remove the residual float imbalance exactly
        mass_n = mass_n * (mass_p.sum() / mass_n.sum())
    return pos_p, mass_p, cells_p, pos_n, mass_n, cells_n


def solve_primal(eta: SignedDensity, cost: CostSpec) -> tuple[TransportPlan, float]:
    """Exact optimal plan between the Jordan parts and its transport cost."""
    pos_p, mass_p, cells_p, pos_n, mass_n, cells_n = _prepare_instance(eta, cost)
    empty = TransportPlan(eta.grid, cost, pos_p, mass_p, pos_n, mass_n, cells_p, cells_n,
                          np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0))
    if len(mass_p) == 0 or len(mass_n) == 0:
        return empty, 0.0
    C = cost_matrix(cost, pos_p, pos_n, eta.grid.length)
    if len(mass_p) == len(mass_n) and _uniform(mass_p) and _uniform(mass_n):
        si, dj = linear_sum_assignment(C)
        pm = np.full(len(si), mass_p.mean())
    else:
        (si, dj, pm), _, _ = _solve_transport_lp(mass_p, mass_n, C)
    value = float((C[si, dj] * pm).sum())
    plan = TransportPlan(eta.grid, cost, pos_p, mass_p, pos_n, mass_n, cells_p, cells_n,
                         si, dj, pm, value)
    return plan, value


def solve_dual(eta: SignedDensity, cost: CostSpec) -> tuple[Potential, float]:
    """Optimal potential on the full grid and the dual value (= primal value)."""
    pos_p, mass_p, cells_p, pos_n, mass_n, cells_n = _prepare_instance(eta, cost)
    if len(mass_p) == 0 or len(mass_n) == 0:
        return Potential(eta.grid, cost, np.zeros(eta.grid.shape)), 0.0
    C = cost_matrix(cost, pos_p, pos_n, eta.grid.length)
    _, _, v = _solve_transport_lp(mass_p, mass_n, C)
    # metric envelope from the target duals; c-Lipschitz and optimal
    all_centers = eta.grid.centers()
    phi = np.full(eta.grid.ncells, np.inf)
    for lo in range(0, eta.grid.ncells, 4096):
        hi = min(lo + 4096, eta.grid.ncells)
        d = periodic_distance_matrix(all_centers[lo:hi], pos_n, eta.grid.length)
        phi[lo:hi] = (cost_eval(cost, d) - v[None, :]).min(axis=1)
    phi -= (phi.max() + phi.min()) / 2.0
    phi = phi.reshape(eta.grid.shape)
    value = float((phi.ravel() * eta.values.ravel()).sum() * eta.grid.cell_volume)
    return Potential(eta.grid, cost, phi), value


def duality_gap(plan: TransportPlan, potential: Potential) -> float:
    """Primal minus dual objective; certified nonnegative up to float noise."""
    if plan.grid is not potential.grid and plan.grid != potential.grid:
        raise ValueError("plan and potential live on different grids")
    if plan.cost != potential.cost:
        raise ValueError("plan and potential use different cost specs")
    phi = potential.values.ravel()
    dual = float((phi[plan.src_cells] * plan.src_mass).sum()
                 - (phi[plan.dst_cells] * plan.dst_mass).sum())
    gap = plan.value - dual
    if gap < -1e-12 * (1.0 + abs(plan.value)):
        raise AssertionError(f"negative duality gap {gap}: potential infeasible?")
    return gap


def plan_value(plan: TransportPlan) -> float:
    if plan.n_entries == 0:
        return 0.0
    return float((cost_eval(plan.cost, plan.entry_distances()) * plan.plan_mass).sum())


def kr_distance(eta: SignedDensity, cost: CostSpec) -> float:
    """Kantorovich-Rubinstein distance of eta to zero for the given cost."""
    return solve_primal(eta, cost)[1]


def kr_bounded_log(eta: SignedDensity, delta: float, radius: float) -> float:
    return kr_distance(eta, CostSpec(CostKind.BOUNDED_LOG, radius=radius, delta=delta))


def kr_truncated(eta: SignedDensity, radius: float) -> float:
    return kr_distance(eta, CostSpec(CostKind.TRUNCATED_LINEAR, radius=radius))


def w_neg11_norm(eta: SignedDensity) -> float:
    """Dual-Lipschitz norm: sup of the pairing over grid functions with
    |phi| <= 1 and axis-neighbor slopes <= 1, solved as an LP."""
    g = eta.grid
    v = eta.values.ravel()
    if np.abs(v).max(initial=0.0) == 0.0:
        return 0.0
    l1 = lq_norm(eta, 1)
    if abs(mass(eta)) > MASS_TOL * max(l1, 1e-300):
        raise ValueError("w_neg11_norm needs a mean-zero density")
    N = g.ncells
    idx = np.arange(N)
    if g.dim == 1:
        neighbors = [np.roll(idx, -1)]
    else:
        grid_idx = idx.reshape(g.shape)
        neighbors = [np.roll(grid_idx, -1, axis=0).ravel(), np.roll(grid_idx, -1, axis=1).ravel()]
    rows, cols, vals = [], [], []
    r = 0
    for nb in neighbors:
        rows += [np.arange(r, r + N), np.arange(r, r + N)]
        cols += [idx, nb]
        vals += [np.ones(N), -np.ones(N)]
        r += N
    rows = np.concatenate(rows + [x + r for x in rows])
    cols = np.concatenate(cols * 2)
    vals = np.concatenate(vals + [-x for x in vals])
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * r, N))
    ub = np.full(2 * r, g.h)
    res = linprog(-v * g.cell_volume, A_ub=A, b_ub=ub, bounds=(-1.0, 1.0),
                  method="highs", options=_HIGHS_OPTS)
    if res.status != 0:
        raise RuntimeError(f"W^-1,1 LP failed: {res.message}")
    return float(-res.fun)


@dataclass
class GradientSamples:
    """Potential gradients on the plan support per formula (9)-style rule:
    grad phi at both endpoints equals c'(dist) * (x - y)/|x - y|."""

    src_idx: np.ndarray
    dst_idx: np.ndarray
    src_cells: np.ndarray
    dst_cells: np.ndarray
    mass: np.ndarray
    grad: np.ndarray  # (k, d)
    magnitude: np.ndarray


def potential_gradient_on_support(plan: TransportPlan, cost: CostSpec) -> GradientSamples:
    if cost != plan.cost:
        raise ValueError("cost spec does not match the plan")
    if plan.n_entries == 0:
        d = plan.src_pos.shape[1] if plan.src_pos.size else plan.grid.dim
        z = np.zeros(0, dtype=int)
        return GradientSamples(z, z, z, z, np.zeros(0), np.zeros((0, d)), np.zeros(0))
    delta = plan.src_pos[plan.src_idx] - plan.dst_pos[plan.dst_idx]
    L = plan.grid.length
    delta -= L * np.round(delta / L)
    dist = np.sqrt((delta * delta).sum(axis=1))
    keep = dist > 0  # diagonal mass transports at zero cost; skip
    delta, dist = delta[keep], dist[keep]
    mag = cost_derivative(cost, dist)
    grad = mag[:, None] * delta / dist[:, None]
    return GradientSamples(plan.src_idx[keep], plan.dst_idx[keep],
                           plan.src_cells[plan.src_idx[keep]], plan.dst_cells[plan.dst_idx[keep]],
                           plan.plan_mass[keep], grad, mag)


def plan_to_csv(plan: TransportPlan, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src_cell", "dst_cell", "mass"])
        for i in range(plan.n_entries):
            w.writerow([int(plan.src_cells[plan.src_idx[i]]), int(plan.dst_cells[plan.dst_idx[i]]),
                        repr(float(plan.plan_mass[i]))])


def potential_to_csv(potential: Potential, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "phi"])
        for i, p in enumerate(potential.values.ravel()):
            w.writerow([i, repr(float(p))])

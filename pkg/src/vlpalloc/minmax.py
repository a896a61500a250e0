"""Min-max power allocation under receiver location/orientation uncertainty.

The worst case over a continuous uncertainty set is approached by iterative
entropic regularization: a growing finite candidate set of error points, a
log-sum-exp smoothed outer minimization over the power vector, and an inner
grid-plus-refinement search for the next worst error.  The outer problem is
a smooth convex minimization solved with analytic gradients.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import feasible, fisher
from .scenario import Scenario, angles_from_orientation, orientation_from_angles

LOCATION_BALL = "location_ball"
ORIENTATION_BOX = "orientation_box"


@dataclass(frozen=True)
class UncertaintyModel:
    kind: str
    radius: float = 0.0          # m, location ball
    polar_delta: float = 0.0     # rad, orientation box
    azimuth_delta: float = 0.0   # rad, orientation box

    def __post_init__(self):
        if self.kind not in (LOCATION_BALL, ORIENTATION_BOX):
            raise ValueError(f"unknown uncertainty kind {self.kind!r}")
        if min(self.radius, self.polar_delta, self.azimuth_delta) < 0:
            raise ValueError("uncertainty radii must be non-negative")

    @classmethod
    def location_ball(cls, radius: float) -> "UncertaintyModel":
        return cls(kind=LOCATION_BALL, radius=radius)

    @classmethod
    def orientation_box(cls, polar_delta: float,
                        azimuth_delta: float) -> "UncertaintyModel":
        return cls(kind=ORIENTATION_BOX, polar_delta=polar_delta,
                   azimuth_delta=azimuth_delta)

    @property
    def dim(self) -> int:
        return 3 if self.kind == LOCATION_BALL else 2

    @property
    def degenerate(self) -> bool:
        if self.kind == LOCATION_BALL:
            return self.radius == 0.0
        return self.polar_delta == 0.0 and self.azimuth_delta == 0.0

    def validate_against(self, scenario: Scenario) -> None:
        if self.kind == ORIENTATION_BOX:
            polar, _ = angles_from_orientation(scenario.receiver.orientation)
            if not (0.0 < polar - self.polar_delta
                    and polar + self.polar_delta < math.pi):
                raise ValueError(
                    "polar uncertainty box leaves the valid (0, pi) angle range"
                )

    def project(self, e: np.ndarray) -> np.ndarray:
        """Nearest point of the uncertainty set."""
        e = np.asarray(e, dtype=float)
        if self.kind == LOCATION_BALL:
            norm = float(np.linalg.norm(e))
            if norm > self.radius:
                return e * (self.radius / norm) if norm > 0 else np.zeros_like(e)
            return e
        return np.clip(e, [-self.polar_delta, -self.azimuth_delta],
                       [self.polar_delta, self.azimuth_delta])


@dataclass
class CandidateSet:
    points: list[np.ndarray]
    p_reg: float              # log-sum-exp regularization constant
    iteration: int
    objective_scale: float    # smoothing operates on objectives / this scale

    @property
    def size(self) -> int:
        return len(self.points)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    polar = np.arccos(1 - 2 * i / n)
    azim = np.pi * (1 + math.sqrt(5)) * i
    return np.stack([
        np.cos(azim) * np.sin(polar),
        np.sin(azim) * np.sin(polar),
        np.cos(polar),
    ], axis=1)


def error_grid(model: UncertaintyModel, n_grid: int) -> np.ndarray:
    """Deterministic search grid over the uncertainty set.

    Location ball: the center, inner shells, and a boundary-heavy shell of
    Fibonacci-sphere points.  Orientation box: a uniform lattice.
    """
    if model.kind == LOCATION_BALL:
        if model.radius == 0.0:
            return np.zeros((1, 3))
        n_boundary = max(n_grid // 2, 1)
        n_inner_shells = 4
        per_shell = max((n_grid - n_boundary - 1) // n_inner_shells, 1)
        parts = [np.zeros((1, 3)), model.radius * _fibonacci_sphere(n_boundary)]
        for j in range(1, n_inner_shells + 1):
            r = model.radius * j / (n_inner_shells + 1)
            parts.append(r * _fibonacci_sphere(per_shell))
        return np.vstack(parts)
    side = max(int(round(math.sqrt(n_grid))), 1)
    pol = np.linspace(-model.polar_delta, model.polar_delta, side) \
        if model.polar_delta > 0 else np.zeros(1)
    azi = np.linspace(-model.azimuth_delta, model.azimuth_delta, side) \
        if model.azimuth_delta > 0 else np.zeros(1)
    gp, ga = np.meshgrid(pol, azi, indexing="ij")
    return np.stack([gp.ravel(), ga.ravel()], axis=1)


def _default_grid_size(model: UncertaintyModel) -> int:
    return 2000 if model.kind == LOCATION_BALL else 441


def _blocks_for_errors(scenario: Scenario, model: UncertaintyModel,
                       errors: np.ndarray) -> np.ndarray:
    """Per-LED information blocks at perturbed receiver poses, batched."""
    errors = np.asarray(errors, dtype=float)
    if model.kind == LOCATION_BALL:
        loc = scenario.receiver.location - errors
        return fisher.led_gamma_blocks(scenario, receiver_loc=loc)
    polar, azim = angles_from_orientation(scenario.receiver.orientation)
    th = polar - errors[..., 0]
    ph = azim - errors[..., 1]
    orient = np.stack([
        np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)
    ], axis=-1)
    return fisher.led_gamma_blocks(scenario, receiver_orient=orient)


def objective_at(p, e, scenario: Scenario, model: UncertaintyModel) -> float:
    """Error bound (m^2) at the pose perturbed by ``e``; +inf if singular."""
    blocks = _blocks_for_errors(scenario, model, np.asarray(e, dtype=float))
    return float(fisher.crlb_for_blocks(blocks, np.asarray(p, dtype=float)))


def smoothed_objective(p, candidates: CandidateSet, scenario: Scenario,
                       model: UncertaintyModel) -> float:
    """Log-sum-exp smoothed maximum of the bound over the candidate set (m^2).

    Bracketed between the candidate maximum and the maximum plus
    objective_scale * log(n) / p_reg.  Evaluated with a max shift so the
    exponentials cannot overflow.
    """
    if not candidates.points:
        raise ValueError("candidate set is empty")
    values = np.array(
        [objective_at(p, e, scenario, model) for e in candidates.points]
    )
    return _lse(values / candidates.objective_scale, candidates.p_reg) \
        * candidates.objective_scale


def _lse(scaled_values: np.ndarray, rho: float) -> float:
    zmax = float(np.max(scaled_values))
    if not np.isfinite(zmax):
        return zmax
    return zmax + math.log(float(np.sum(np.exp(rho * (scaled_values - zmax)))))\
        / rho


@dataclass(frozen=True)
class MinmaxParams:
    rho0: float = 10.0            # initial regularization (scaled objective)
    tol_decay: float = 0.5        # outer-solve tolerance decays as tol_decay^k
    target_gap: float = 1e-3      # certified suboptimality target (scaled)
    n_grid: int | None = None     # defaults: 2000 (location), 441 (orientation)
    n_starts: int = 4             # local refinements per grid search
    max_iterations: int = 200
    dedup_tol: float = 1e-9

    def __post_init__(self):
        if not (0.0 < self.tol_decay < 1.0):
            raise ValueError("tol_decay must lie in (0, 1)")
        if self.rho0 <= 0 or self.target_gap <= 0:
            raise ValueError("rho0 and target_gap must be positive")


@dataclass
class IterationRecord:
    iteration: int
    n_candidates: int
    rho: float
    smoothed: float     # m^2
    inner_max: float    # m^2


@dataclass
class MinmaxResult:
    p_star: np.ndarray
    objective: float              # smoothed upper bound at p_star, m^2
    worst_case: float             # inner-search maximum at p_star, m^2
    worst_error: np.ndarray
    converged: bool
    certified_gap: float          # scaled suboptimality certificate
    candidates: CandidateSet
    trace: list[IterationRecord] = field(default_factory=list)


class _OuterProblem:
    """Smoothed outer minimization over the feasible power set (scaled)."""

    def __init__(self, scenario: Scenario, model: UncertaintyModel, mode: str,
                 total_power: float, f_scale: float):
        self.scenario = scenario
        self.model = model
        self.fs = feasible.build_feasible_set(scenario, mode=mode)
        self.total_power = total_power
        self.f_scale = f_scale
        self.p_scale = float(np.max(self.fs.p_ub))

    def _value_and_grad(self, p: np.ndarray, blocks_list: list[np.ndarray],
                        rho: float) -> tuple[float, np.ndarray]:
        vals = np.empty(len(blocks_list))
        grads = np.empty((len(blocks_list), len(p)))
        for i, blocks in enumerate(blocks_list):
            j = np.einsum("i,ijk->jk", p, blocks)
            j = (j + j.T) / 2
            try:
                jinv = np.linalg.inv(j)
            except np.linalg.LinAlgError:
                return math.inf, np.zeros(len(p))
            if np.linalg.eigvalsh(j)[0] <= 0:
                return math.inf, np.zeros(len(p))
            vals[i] = np.trace(jinv) / self.f_scale
            m2 = jinv @ jinv
            grads[i] = -np.einsum("ijk,kj->i", blocks, m2) / self.f_scale
        z = rho * vals
        zmax = z.max()
        w = np.exp(z - zmax)
        w /= w.sum()
        value = (zmax + math.log(float(np.sum(np.exp(z - zmax))))) / rho
        return value, w @ grads

    def _constraints(self):
        cons = [{
            "type": "ineq",
            "fun": lambda x: (self.total_power - np.sum(x) * self.p_scale)
            / self.p_scale,
            "jac": lambda x: -np.ones(len(x)),
        }]
        for con in self.fs.illum:
            kern, thr = con.kernels, con.threshold
            if self.fs.mode == "exact":
                cons.append({
                    "type": "ineq",
                    "fun": lambda x, kern=kern, thr=thr:
                        (kern @ np.sqrt(np.maximum(x * self.p_scale, 1e-12)) - thr)
                        / (1.0 + thr),
                    "jac": lambda x, kern=kern, thr=thr:
                        kern * self.p_scale
                        / (2 * np.sqrt(np.maximum(x * self.p_scale, 1e-12)))
                        / (1.0 + thr),
                })
            else:
                rthr = con.relaxed_threshold()
                cons.append({
                    "type": "ineq",
                    "fun": lambda x, kern=kern, rthr=rthr:
                        (kern @ x * self.p_scale - rthr) / (1.0 + rthr),
                    "jac": lambda x, kern=kern, rthr=rthr:
                        kern * self.p_scale / (1.0 + rthr),
                })
        return cons

    def solve(self, candidates: CandidateSet, x0: np.ndarray) -> np.ndarray:
        blocks_list = [
            _blocks_for_errors(self.scenario, self.model, e)
            for e in candidates.points
        ]
        rho = candidates.p_reg

        def objective(x):
            return self._value_and_grad(x * self.p_scale, blocks_list, rho)

        bounds = list(zip(self.fs.p_lb / self.p_scale, self.fs.p_ub / self.p_scale))
        res = minimize(objective, x0, jac=True, method="SLSQP", bounds=bounds,
                       constraints=self._constraints(),
                       options={"maxiter": 400, "ftol": 1e-12})
        return np.clip(res.x, self.fs.p_lb / self.p_scale,
                       self.fs.p_ub / self.p_scale)


def worst_case_eval(p, scenario: Scenario, model: UncertaintyModel,
                    n_grid: int | None = None,
                    n_starts: int = 4) -> tuple[float, np.ndarray]:
    """Multi-start maximization of the bound over the uncertainty set.

    Deterministic: a fixed grid ranks candidate errors (ties broken by lowest
    index), then a derivative-free simplex ascent refines the best starts,
    projected back onto the set.
    """
    model.validate_against(scenario)
    p = np.asarray(p, dtype=float)
    grid = error_grid(model, n_grid or _default_grid_size(model))
    vals = fisher.crlb_for_blocks(_blocks_for_errors(scenario, model, grid), p)
    order = np.argsort(-vals, kind="stable")
    best_idx = int(order[0])
    best_e, best_v = grid[best_idx], float(vals[best_idx])
    if model.degenerate:
        return best_v, best_e

    def neg_objective(e):
        return -objective_at(p, model.project(e), scenario, model)

    for idx in order[:n_starts]:
        res = minimize(neg_objective, grid[int(idx)], method="Nelder-Mead",
                       options={"xatol": 1e-7, "fatol": 1e-13, "maxiter": 500})
        e = model.project(res.x)
        v = objective_at(p, e, scenario, model)
        if v > best_v:
            best_v, best_e = v, e
    return best_v, best_e


def solve_minmax(scenario: Scenario, model: UncertaintyModel,
                 params: MinmaxParams = MinmaxParams(), mode: str = "exact",
                 total_power: float | None = None) -> MinmaxResult:
    """Iterative entropic regularization for the robust allocation problem.

    Alternates a smoothed convex outer solve with an inner worst-error search;
    the candidate set grows only when the inner maximum exceeds the smoothed
    value.  Terminates once the inner maximum is covered by the smoothed
    objective and the certificate tol_decay^k + log(n)/rho falls below
    target_gap.  The regularization constant follows the additive update
    schedule, applied as many times per iteration as the certificate check
    demands (each application adds log(n)).
    """
    model.validate_against(scenario)
    total = scenario.power.p_total if total_power is None else total_power
    if total is None:
        raise ValueError("scenario has no total power budget; pass total_power")
    n_grid = params.n_grid or _default_grid_size(model)

    nl = scenario.nl
    p_uniform = feasible.uniform_allocation_for_budget(total, nl)
    nominal_blocks = _blocks_for_errors(scenario, model,
                                        np.zeros(model.dim))
    f_scale = float(fisher.crlb_for_blocks(nominal_blocks, p_uniform))
    if not np.isfinite(f_scale) or f_scale <= 0:
        raise ValueError("uniform allocation is unlocalizable at nominal pose")

    outer = _OuterProblem(scenario, model, mode, total, f_scale)

    # Seed the candidate set with the worst error for the uniform allocation.
    _, e0 = worst_case_eval(p_uniform, scenario, model, n_grid, params.n_starts)
    cands = CandidateSet(points=[e0], p_reg=params.rho0, iteration=0,
                         objective_scale=f_scale)

    x = np.clip(p_uniform / outer.p_scale, outer.fs.p_lb / outer.p_scale,
                outer.fs.p_ub / outer.p_scale)
    k = 1
    trace: list[IterationRecord] = []
    converged = False
    smoothed_s = math.inf
    e_next = e0
    f_next = math.inf
    while k <= params.max_iterations:
        x = outer.solve(cands, x)
        p_star = x * outer.p_scale
        blocks_list = [_blocks_for_errors(scenario, model, e)
                       for e in cands.points]
        vals = np.array([float(fisher.crlb_for_blocks(b, p_star))
                         for b in blocks_list])
        smoothed_s = _lse(vals / f_scale, cands.p_reg)

        f_next, e_next = worst_case_eval(p_star, scenario, model, n_grid,
                                         params.n_starts)
        f_next_s = f_next / f_scale
        k += 1

        covered = f_next_s <= smoothed_s + 1e-12
        if not covered:
            if all(np.linalg.norm(e_next - e) > params.dedup_tol
                   for e in cands.points):
                cands.points.append(e_next)
                cands.p_reg = max(cands.p_reg,
                                  math.log(cands.size) ** 2)
            else:
                covered = True  # already represented within dedup tolerance

        n = cands.size
        log_n = math.log(n)
        tol_term = params.tol_decay ** k
        if tol_term + log_n / cands.p_reg > params.target_gap and log_n > 0:
            if tol_term < params.target_gap:
                needed = log_n / (params.target_gap - tol_term)
                bumps = max(1, math.ceil((needed - cands.p_reg) / log_n))
            else:
                bumps = 1
            cands.p_reg += bumps * log_n

        cands.iteration = k
        trace.append(IterationRecord(
            iteration=k, n_candidates=n, rho=cands.p_reg,
            smoothed=smoothed_s * f_scale, inner_max=f_next,
        ))
        gap = tol_term + math.log(cands.size) / cands.p_reg
        if covered and gap <= params.target_gap:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"min-max iteration cap {params.max_iterations} reached; "
            "returning best iterate", RuntimeWarning, stacklevel=2)

    p_star = x * outer.p_scale
    return MinmaxResult(
        p_star=p_star,
        objective=smoothed_s * f_scale,
        worst_case=f_next,
        worst_error=e_next,
        converged=converged,
        certified_gap=params.tol_decay ** k + math.log(cands.size) / cands.p_reg,
        candidates=cands,
        trace=trace,
    )

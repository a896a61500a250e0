"""Certificate-bearing convex programs for LED power allocation.

One builder emits five problems in a common conic normal form (linear
objective over linear, rotated-quadratic and semidefinite cones):

* ``nominal-crlb``          -- minimize the position error bound over P.
* ``robust-crlb``           -- minimize the worst-case bound over a spectral
                               ball of coefficient-matrix perturbations.
* ``worst-case-fixed-power``-- the same worst case for a fixed power vector.
* ``min-power``             -- minimize total power under a bound constraint.
* ``robust-min-power``      -- ditto with the worst-case bound constraint.

The solve step is a pluggable backend (Clarabel by default, SCS fallback)
held to an interior-point-grade tolerance contract.

Internally every problem is rescaled so the semidefinite blocks are of unit
order: powers are divided by max(p_ub) and the coefficient matrix by its
spectral norm; objectives and minimizers are unscaled on exit.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from . import feasible, fisher
from .feasible import FeasibleSet, build_feasible_set
from .scenario import Scenario

LOCALIZATION_DIM = 3  # localization is three-dimensional throughout


class SolverFailure(RuntimeError):
    """The backend could not produce a trustworthy solution."""


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverOptions:
    solver: str = "CLARABEL"
    rel_tol: float = 1e-8      # primal/dual feasibility and gap target
    max_iters: int = 200
    verbose: bool = False


DEFAULT_OPTIONS = SolverOptions()


@dataclass
class ConicProblem:
    """A built problem plus the metadata needed to unscale its solution."""

    provenance: str
    problem: cp.Problem
    p_var: cp.Variable | None      # None when the power vector is fixed
    aux: dict
    p_scale: float
    objective_scale: float         # divide the solved objective by this
    bound_scale: float             # divide bound certificates (t, H, s) by this
    mode: str
    feasible_set: FeasibleSet | None = None


@dataclass(frozen=True)
class AllocationResult:
    p_star: np.ndarray | None
    objective: float
    status: Status
    duality_gap: float | None
    provenance: str
    mode: str
    aux: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def _gamma_entries(gamma) -> np.ndarray:
    entries = gamma.entries if isinstance(gamma, fisher.GammaMatrix) \
        else np.asarray(gamma, dtype=float)
    if entries.ndim != 2 or entries.shape[1] != 3 or entries.shape[0] % 3:
        raise ValueError(f"expected a (3*NL, 3) coefficient matrix, got {entries.shape}")
    return entries


def _fim_expr(p, entries: np.ndarray):
    """Symmetrized information-matrix expression, linear in p."""
    nl = entries.shape[0] // 3
    rows = [cp.reshape(p @ entries[k * nl:(k + 1) * nl, :], (1, 3), order="C")
            for k in range(3)]
    j = cp.vstack(rows)
    return (j + j.T) / 2


def _feasibility_constraints(p, u, fs: FeasibleSet, p_scale: float) -> list:
    """Scaled membership constraints for the power vector variable."""
    cons = [p >= fs.p_lb / p_scale, p <= fs.p_ub / p_scale]
    if fs.total_power is not None:
        cons.append(cp.sum(p) <= fs.total_power / p_scale)
    if fs.mode == "exact":
        cons += [u >= 0, cp.square(u) <= p]
        for con in fs.illum:
            cons.append(con.kernels @ u >= con.threshold / math.sqrt(p_scale))
    else:
        for con in fs.illum:
            cons.append(con.kernels @ p >= con.relaxed_threshold() / p_scale)
    return cons


def _bound_lmi(j_expr, h, s):
    """Block matrix whose positivity bounds trace of the inverse of j_expr."""
    eye = np.eye(3)
    return cp.bmat([[h + s * eye, eye], [eye, j_expr]])


def _robust_lmi(j_expr, kron_expr, h, s, mu, delta_scaled: float, nl: int):
    """Three-block matrix enforcing the bound across the perturbation ball."""
    eye = np.eye(3)
    zero = np.zeros((3, 3 * nl))
    return cp.bmat([
        [h + s * eye, eye, zero],
        [eye, j_expr - mu * eye, -(delta_scaled / 2) * kron_expr.T],
        [zero.T, -(delta_scaled / 2) * kron_expr, mu * np.eye(3 * nl)],
    ])


def _kron_expr(p, nl: int):
    return cp.kron(np.eye(3), cp.reshape(p, (nl, 1), order="C"))


def _bound_constraints(p, entries_scaled, delta_scaled, bound_expr, nl):
    """Constraints forcing the (worst-case) error bound below ``bound_expr``.

    Returns (constraints, aux-variables dict).  ``p`` may be a cvxpy variable
    or a constant vector.
    """
    h = cp.Variable((3, 3), symmetric=True)
    s = cp.Variable()
    j = _fim_expr(p, entries_scaled)
    cons = [cp.trace(h) <= bound_expr - LOCALIZATION_DIM * s, h >> 0]
    aux = {"h": h, "s": s}
    if delta_scaled > 0:
        mu = cp.Variable(nonneg=True)
        kron = _kron_expr(p, nl) if isinstance(p, cp.Variable) \
            else np.kron(np.eye(3), np.reshape(p, (nl, 1)))
        cons.append(_robust_lmi(j, kron, h, s, mu, delta_scaled, nl) >> 0)
        aux["mu"] = mu
    else:
        cons.append(_bound_lmi(j, h, s) >> 0)
    return cons, aux


def _scales(fs: FeasibleSet | None, entries: np.ndarray,
            p_fixed: np.ndarray | None = None) -> tuple[float, float]:
    if fs is not None:
        p_scale = float(np.max(fs.p_ub))
    elif p_fixed is not None:
        p_scale = float(max(np.max(p_fixed), 1.0))
    else:
        p_scale = 1.0
    g_scale = float(np.linalg.norm(entries, 2))
    if not np.isfinite(g_scale) or g_scale <= 0:
        g_scale = 1.0
    return p_scale, g_scale


# ---------------------------------------------------------------------------
# problem builders
# ---------------------------------------------------------------------------

def build_crlb_problem(fs: FeasibleSet, gamma, delta: float = 0.0,
                       provenance: str = "nominal-crlb") -> ConicProblem:
    """min t over p in the set, t an epigraph of the (worst-case) bound."""
    if delta < 0:
        raise ValueError("uncertainty radius must be non-negative")
    entries = _gamma_entries(gamma)
    nl = entries.shape[0] // 3
    p_scale, g_scale = _scales(fs, entries)
    p = cp.Variable(nl)
    u = cp.Variable(nl)
    t = cp.Variable()
    cons, aux = _bound_constraints(p, entries / g_scale, delta / g_scale, t, nl)
    cons += _feasibility_constraints(p, u, fs, p_scale)
    aux["t"] = t
    return ConicProblem(
        provenance=provenance,
        problem=cp.Problem(cp.Minimize(t), cons),
        p_var=p,
        aux=aux,
        p_scale=p_scale,
        objective_scale=g_scale * p_scale,
        bound_scale=g_scale * p_scale,
        mode=fs.mode,
        feasible_set=fs,
    )


def build_min_power_problem(fs: FeasibleSet, gamma, eps: float,
                            delta: float = 0.0,
                            provenance: str = "min-power") -> ConicProblem:
    """min total power subject to the (worst-case) bound <= eps."""
    if eps <= 0:
        raise ValueError("accuracy target must be positive")
    if delta < 0:
        raise ValueError("uncertainty radius must be non-negative")
    entries = _gamma_entries(gamma)
    nl = entries.shape[0] // 3
    p_scale, g_scale = _scales(fs, entries)
    p = cp.Variable(nl)
    u = cp.Variable(nl)
    eps_scaled = eps * g_scale * p_scale
    cons, aux = _bound_constraints(p, entries / g_scale, delta / g_scale,
                                   eps_scaled, nl)
    cons += _feasibility_constraints(p, u, fs, p_scale)
    return ConicProblem(
        provenance=provenance,
        problem=cp.Problem(cp.Minimize(cp.sum(p)), cons),
        p_var=p,
        aux=aux,
        p_scale=p_scale,
        objective_scale=1.0 / p_scale,
        bound_scale=g_scale * p_scale,
        mode=fs.mode,
        feasible_set=fs,
    )


def build_worst_case_problem(p: np.ndarray, gamma, delta: float) -> ConicProblem:
    """min t such that the error bound stays below t across the ball, p fixed."""
    if delta < 0:
        raise ValueError("uncertainty radius must be non-negative")
    entries = _gamma_entries(gamma)
    nl = entries.shape[0] // 3
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("power vector must be non-negative")
    p_scale, g_scale = _scales(None, entries, p_fixed=p)
    t = cp.Variable()
    cons, aux = _bound_constraints(p / p_scale, entries / g_scale,
                                   delta / g_scale, t, nl)
    aux["t"] = t
    return ConicProblem(
        provenance="worst-case-fixed-power",
        problem=cp.Problem(cp.Minimize(t), cons),
        p_var=None,
        aux=aux,
        p_scale=p_scale,
        objective_scale=g_scale * p_scale,
        bound_scale=g_scale * p_scale,
        mode="n/a",
    )


# ---------------------------------------------------------------------------
# backend
# ---------------------------------------------------------------------------

_STATUS_MAP = {
    cp.OPTIMAL: Status.OPTIMAL,
    cp.INFEASIBLE: Status.INFEASIBLE,
    cp.UNBOUNDED: Status.UNBOUNDED,
}


def _attempt(problem: cp.Problem, solver: str, options: SolverOptions,
             max_iters: int) -> str:
    kwargs: dict = {"verbose": options.verbose}
    if solver == "CLARABEL":
        kwargs.update(
            max_iter=max_iters,
            tol_gap_rel=options.rel_tol,
            tol_gap_abs=options.rel_tol,
            tol_feas=options.rel_tol,
        )
    elif solver == "SCS":
        kwargs.update(max_iters=max(50_000, 100 * max_iters),
                      eps_abs=options.rel_tol * 10, eps_rel=options.rel_tol * 10)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # retry ladder decides
            problem.solve(solver=solver, **kwargs)
    except (cp.error.SolverError, ValueError):
        return "solver_error"
    return problem.status or "none"


def _complementarity_gap(problem: cp.Problem) -> float | None:
    """Sum of |<dual, slack>| over all constraints: a duality-gap surrogate."""
    total = 0.0
    for con in problem.constraints:
        dual = con.dual_value
        if dual is None:
            return None
        try:
            if len(con.args) == 2:           # lhs <= rhs
                slack = con.args[1].value - con.args[0].value
            else:                            # expr >> 0 or expr >= 0
                slack = con.args[0].value
            total += float(np.abs(np.sum(np.asarray(dual) * np.asarray(slack))))
        except Exception:
            return None
    return total


def solve_conic(built: ConicProblem,
                options: SolverOptions = DEFAULT_OPTIONS) -> AllocationResult:
    """Solve a built problem with retries, unscale, and post-check feasibility."""
    attempts = [
        (options.solver, options.max_iters),
        (options.solver, 5 * options.max_iters),
        ("SCS", options.max_iters),
    ]
    raw_status = "none"
    for solver, iters in attempts:
        raw_status = _attempt(built.problem, solver, options, iters)
        if raw_status in _STATUS_MAP:
            break

    status = _STATUS_MAP.get(raw_status, Status.NUMERICAL_FAILURE)
    prob = built.problem
    aux_out: dict = {"solver_status": raw_status}
    if status is not Status.OPTIMAL:
        return AllocationResult(
            p_star=None,
            objective=math.inf if status is Status.INFEASIBLE else math.nan,
            status=status,
            duality_gap=None,
            provenance=built.provenance,
            mode=built.mode,
            aux=aux_out,
        )

    objective = float(prob.value) / built.objective_scale
    gap = _complementarity_gap(prob)
    if gap is not None:
        gap /= built.objective_scale
    p_star = None
    if built.p_var is not None:
        p_star = np.asarray(built.p_var.value, dtype=float) * built.p_scale
        if built.feasible_set is not None:
            report = feasible.is_feasible(built.feasible_set, p_star)
            if not report:
                aux_out["feasibility_violations"] = report.violations
    for name, var in built.aux.items():
        value = var.value
        if value is None:
            aux_out[name] = None
        elif name in ("t", "h", "s"):    # epigraph certificates carry m^2 units
            aux_out[name] = np.asarray(value, dtype=float) / built.bound_scale
            if name == "t":
                aux_out[name] = float(aux_out[name])
        else:
            aux_out[name] = np.asarray(value, dtype=float)
    return AllocationResult(
        p_star=p_star,
        objective=objective,
        status=status,
        duality_gap=gap,
        provenance=built.provenance,
        mode=built.mode,
        aux=aux_out,
    )


# ---------------------------------------------------------------------------
# public solves
# ---------------------------------------------------------------------------

def _resolved_feasible_set(scenario: Scenario, mode: str, with_total: bool,
                           total_power: float | None) -> FeasibleSet:
    fs = build_feasible_set(scenario, mode=mode, with_total=with_total)
    if with_total:
        if total_power is not None:
            fs = FeasibleSet(p_lb=fs.p_lb, p_ub=fs.p_ub, total_power=total_power,
                             illum=fs.illum, mode=fs.mode)
        if fs.total_power is None:
            raise ValueError("scenario has no total power budget; pass total_power")
    return fs


def solve_nominal_crlb(scenario: Scenario, gamma, mode: str = "exact",
                       options: SolverOptions = DEFAULT_OPTIONS,
                       total_power: float | None = None) -> AllocationResult:
    """Minimize the position error bound over the full constraint set."""
    fs = _resolved_feasible_set(scenario, mode, True, total_power)
    return solve_conic(build_crlb_problem(fs, gamma), options)


def solve_robust_gamma(scenario: Scenario, gamma_hat, delta: float,
                       mode: str = "relaxed",
                       options: SolverOptions = DEFAULT_OPTIONS,
                       total_power: float | None = None) -> AllocationResult:
    """Minimize the worst-case bound over a spectral perturbation ball."""
    fs = _resolved_feasible_set(scenario, mode, True, total_power)
    return solve_conic(
        build_crlb_problem(fs, gamma_hat, delta=delta, provenance="robust-crlb"),
        options,
    )


def worst_case_crlb_fixed_p(p, gamma_hat, delta: float,
                            options: SolverOptions = DEFAULT_OPTIONS) -> float:
    """Worst-case error bound (m^2) for a fixed power vector.

    Returns +inf when the perturbation ball can drive the information matrix
    singular (the problem is then infeasible rather than erroneous).
    """
    result = solve_conic(build_worst_case_problem(p, gamma_hat, delta), options)
    if result.status is Status.OPTIMAL:
        return result.objective
    if result.status is Status.INFEASIBLE:
        return math.inf
    raise SolverFailure(
        f"worst-case evaluation failed with status {result.status.value} "
        f"({result.aux.get('solver_status')})"
    )


def solve_min_power(scenario: Scenario, gamma, eps: float, mode: str = "exact",
                    options: SolverOptions = DEFAULT_OPTIONS) -> AllocationResult:
    """Minimize total electrical power subject to bound <= eps (no budget cap)."""
    fs = build_feasible_set(scenario, mode=mode, with_total=False)
    return solve_conic(build_min_power_problem(fs, gamma, eps), options)


def solve_robust_min_power(scenario: Scenario, gamma_hat, delta: float,
                           eps: float, mode: str = "relaxed",
                           options: SolverOptions = DEFAULT_OPTIONS) -> AllocationResult:
    """Minimize total power with the bound held below eps across the ball."""
    fs = build_feasible_set(scenario, mode=mode, with_total=False)
    return solve_conic(
        build_min_power_problem(fs, gamma_hat, eps, delta=delta,
                                provenance="robust-min-power"),
        options,
    )


def minimum_feasible_budget(scenario: Scenario, mode: str = "exact",
                            options: SolverOptions = DEFAULT_OPTIONS) -> float:
    """Smallest total power for which the constraint set is non-empty.

    Below this budget the allocation problems report infeasible (the
    feasibility cliff is set by the illumination constraints).
    """
    fs = build_feasible_set(scenario, mode=mode, with_total=False)
    nl = fs.nl
    p = cp.Variable(nl)
    u = cp.Variable(nl)
    p_scale = float(np.max(fs.p_ub))
    cons = _feasibility_constraints(p, u, fs, p_scale)
    built = ConicProblem(
        provenance="feasibility-budget",
        problem=cp.Problem(cp.Minimize(cp.sum(p)), cons),
        p_var=p,
        aux={},
        p_scale=p_scale,
        objective_scale=1.0 / p_scale,
        bound_scale=p_scale,
        mode=mode,
        feasible_set=fs,
    )
    result = solve_conic(built, options)
    if result.status is not Status.OPTIMAL:
        raise SolverFailure(f"feasibility-budget solve returned {result.status.value}")
    return result.objective

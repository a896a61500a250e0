"""Power-allocation constraint sets and reference allocations.

Two representations of the illumination constraints ship side by side:

* ``exact``   -- sum_i sqrt(P_i) * phi_i >= threshold (concave in p; solvers
                 realize it with auxiliary variables u_i, u_i^2 <= P_i).
* ``relaxed`` -- the linear half-space phi^T p >= threshold^2 / sum(phi),
                 a superset of the exact set, which keeps the robust
                 problems purely semidefinite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import channel, fisher
from .scenario import Scenario

# A constraint counts as satisfied when slack >= -FEAS_RTOL * (1 + |threshold|).
FEAS_RTOL = 1e-8


@dataclass(frozen=True)
class IllumConstraint:
    name: str
    kernels: np.ndarray   # per-LED lx/sqrt(W) coefficients, all >= 0
    threshold: float      # lx

    def __post_init__(self):
        arr = np.array(self.kernels, dtype=float)
        arr.flags.writeable = False
        object.__setattr__(self, "kernels", arr)

    def relaxed_threshold(self) -> float:
        """Right-hand side of the linear relaxation phi^T p >= thr^2 / sum(phi)."""
        total = float(self.kernels.sum())
        if total <= 0:
            return np.inf if self.threshold > 0 else 0.0
        return self.threshold**2 / total


@dataclass(frozen=True)
class FeasibleSet:
    p_lb: np.ndarray
    p_ub: np.ndarray
    total_power: float | None
    illum: tuple[IllumConstraint, ...]
    mode: str = "exact"

    def __post_init__(self):
        if self.mode not in ("exact", "relaxed"):
            raise ValueError(f"mode must be 'exact' or 'relaxed', got {self.mode!r}")
        for key in ("p_lb", "p_ub"):
            arr = np.array(getattr(self, key), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, key, arr)
        object.__setattr__(self, "illum", tuple(self.illum))

    @property
    def nl(self) -> int:
        return len(self.p_lb)


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    violations: tuple[tuple[str, float], ...]   # (constraint name, slack < 0)

    def __bool__(self) -> bool:
        return self.feasible


def build_feasible_set(scenario: Scenario, mode: str = "exact",
                       with_total: bool = True) -> FeasibleSet:
    """Precompute illumination kernels and assemble the constraint set."""
    cons = []
    for idx, pc in enumerate(scenario.illumination.point_constraints):
        cons.append(
            IllumConstraint(
                name=f"illum_point[{idx}]",
                kernels=channel.point_kernel_vector(
                    scenario.leds, pc.location, scenario.base_optical_power
                ),
                threshold=pc.threshold,
            )
        )
    cons.append(
        IllumConstraint(
            name="illum_average",
            kernels=channel.average_illuminance_coefficients(
                scenario.leds, scenario.illumination, scenario.base_optical_power
            ),
            threshold=scenario.illumination.average_threshold,
        )
    )
    return FeasibleSet(
        p_lb=scenario.power.p_lb,
        p_ub=scenario.power.p_ub,
        total_power=scenario.power.p_total if with_total else None,
        illum=tuple(cons),
        mode=mode,
    )


def is_feasible(fs: FeasibleSet, p) -> FeasibilityReport:
    """Check a power vector against the set; report each violated constraint."""
    p = np.asarray(p, dtype=float)
    violations: list[tuple[str, float]] = []

    def check(name: str, slack: float, threshold: float) -> None:
        if slack < -FEAS_RTOL * (1.0 + abs(threshold)):
            violations.append((name, float(slack)))

    for i in range(fs.nl):
        check(f"power_box_lower[{i}]", p[i] - fs.p_lb[i], fs.p_lb[i])
        check(f"power_box_upper[{i}]", fs.p_ub[i] - p[i], fs.p_ub[i])
    if fs.total_power is not None:
        check("total_power", fs.total_power - float(p.sum()), fs.total_power)
    clipped = np.maximum(p, 0.0)
    for con in fs.illum:
        if fs.mode == "exact":
            level = float(con.kernels @ np.sqrt(clipped))
            check(con.name, level - con.threshold, con.threshold)
        else:
            thr = con.relaxed_threshold()
            check(con.name, float(con.kernels @ p) - thr, thr)
    return FeasibilityReport(feasible=not violations, violations=tuple(violations))


def uniform_allocation_for_budget(total_power: float, nl: int) -> np.ndarray:
    """Equal split of an electrical power budget across LEDs."""
    if total_power < 0:
        raise ValueError("total power must be non-negative")
    return np.full(nl, total_power / nl)


def uniform_allocation_for_accuracy(gamma, eps: float) -> np.ndarray:
    """Equal per-LED power that drives the error bound down to ``eps`` (m^2)."""
    if eps <= 0:
        raise ValueError("accuracy target must be positive")
    entries = gamma.entries if isinstance(gamma, fisher.GammaMatrix) \
        else np.asarray(gamma, dtype=float)
    nl = entries.shape[0] // 3
    bound_at_unit = fisher.crlb(fisher.fim(entries, np.ones(nl)))
    return np.full(nl, bound_at_unit / eps)

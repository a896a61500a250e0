"""Scenario data model: room geometry, LED transmitters, receiver, constraints.

All quantities are stored in SI units (m, s, W, A/W, W/Hz, lx).  Scenario
files may use convenience units (cm^2, mW, us, MHz, deg, ...) via explicit
unit suffixes; everything is converted once at load time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

UNIT_NORM_TOL = 1e-12


class ScenarioError(ValueError):
    """Raised when a scenario file fails to parse or violates an invariant."""


class SyncMode(str, enum.Enum):
    SYNCHRONOUS = "synchronous"
    ASYNCHRONOUS = "asynchronous"


# Multiplicative factors to SI, keyed by (dimension, unit spelling).
_UNIT_TABLES = {
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "km": 1e3},
    "area": {"m^2": 1.0, "cm^2": 1e-4, "mm^2": 1e-6},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "power": {"W": 1.0, "mW": 1e-3, "kW": 1e3},
    "responsivity": {"A/W": 1.0, "mA/mW": 1.0, "mA/W": 1e-3},
    "noise_psd": {"W/Hz": 1.0},
    "illuminance": {"lx": 1.0, "lux": 1.0},
    "efficacy": {"lm/W": 1.0},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
}


def _parse_quantity(raw, dimension: str, key: str) -> float:
    """Parse a '<number> <unit>' string into an SI float."""
    if isinstance(raw, (int, float)):
        raise ScenarioError(
            f"{key}: missing unit tag (write e.g. \"{raw} "
            f"{next(iter(_UNIT_TABLES[dimension]))}\")"
        )
    parts = str(raw).split()
    if len(parts) != 2:
        raise ScenarioError(f"{key}: expected '<value> <unit>', got {raw!r}")
    value, unit = parts
    table = _UNIT_TABLES[dimension]
    if unit not in table:
        raise ScenarioError(
            f"{key}: unknown {dimension} unit {unit!r} (known: {sorted(table)})"
        )
    try:
        return float(value) * table[unit]
    except ValueError as exc:
        raise ScenarioError(f"{key}: bad numeric value {value!r}") from exc


def _parse_vector(raw, dimension: str, key: str, size: int = 3) -> np.ndarray:
    """Parse a '<v1> <v2> ... <unit>' string into an SI vector."""
    parts = str(raw).split()
    if len(parts) != size + 1:
        raise ScenarioError(f"{key}: expected {size} values plus unit, got {raw!r}")
    unit = parts[-1]
    table = _UNIT_TABLES[dimension]
    if unit not in table:
        raise ScenarioError(f"{key}: unknown {dimension} unit {unit!r}")
    try:
        return np.array([float(v) for v in parts[:-1]]) * table[unit]
    except ValueError as exc:
        raise ScenarioError(f"{key}: bad numeric vector {raw!r}") from exc


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.flags.writeable = False
    return arr


def _check_unit_vector(v: np.ndarray, key: str) -> None:
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        raise ScenarioError(f"{key}: orientation not unit norm (|v| = {norm!r})")


def orientation_from_angles(polar: float, azimuth: float) -> np.ndarray:
    """Unit orientation vector from polar/azimuth angles in radians."""
    return np.array(
        [
            math.sin(polar) * math.cos(azimuth),
            math.sin(polar) * math.sin(azimuth),
            math.cos(polar),
        ]
    )


def angles_from_orientation(orientation: np.ndarray) -> tuple[float, float]:
    """Inverse of orientation_from_angles; azimuth is 0 for the vertical."""
    polar = math.acos(min(1.0, max(-1.0, float(orientation[2]))))
    azimuth = math.atan2(float(orientation[1]), float(orientation[0]))
    return polar, azimuth


@dataclass(frozen=True)
class LedTransmitter:
    location: np.ndarray          # m
    orientation: np.ndarray       # unit vector
    lambertian_order: float
    luminous_efficacy: float      # lm/W
    center_frequency: float       # Hz
    pulse_width: float            # s
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "location", _frozen_array(self.location))
        object.__setattr__(self, "orientation", _frozen_array(self.orientation))
        name = self.label or "led"
        _check_unit_vector(self.orientation, f"{name}.orientation")
        if self.lambertian_order < 1:
            raise ScenarioError(f"{name}.lambertian_order must be >= 1")
        if self.pulse_width <= 0:
            raise ScenarioError(f"{name}.pulse_width must be positive")
        cycles = self.center_frequency * self.pulse_width
        if cycles <= 0 or abs(cycles - round(cycles)) > 1e-9:
            raise ScenarioError(
                f"{name}: center_frequency * pulse_width = {cycles!r} "
                "must be a positive integer"
            )


@dataclass(frozen=True)
class Receiver:
    location: np.ndarray          # m
    orientation: np.ndarray       # unit vector
    responsivity: float           # A/W
    detector_area: float          # m^2
    noise_psd: float              # W/Hz
    sync_mode: SyncMode = SyncMode.ASYNCHRONOUS

    def __post_init__(self):
        object.__setattr__(self, "location", _frozen_array(self.location))
        object.__setattr__(self, "orientation", _frozen_array(self.orientation))
        _check_unit_vector(self.orientation, "receiver.orientation")
        for attr in ("responsivity", "detector_area", "noise_psd"):
            if getattr(self, attr) <= 0:
                raise ScenarioError(f"receiver.{attr} must be positive")

    @property
    def polar_azimuth(self) -> tuple[float, float]:
        return angles_from_orientation(self.orientation)


@dataclass(frozen=True)
class PointConstraint:
    location: np.ndarray          # m
    threshold: float              # lx

    def __post_init__(self):
        object.__setattr__(self, "location", _frozen_array(self.location))
        if self.threshold < 0:
            raise ScenarioError("illumination threshold must be >= 0")


@dataclass(frozen=True)
class IlluminationSpec:
    point_constraints: tuple[PointConstraint, ...]
    average_region: tuple[float, float, float, float]   # xmin, ymin, xmax, ymax (m)
    average_height: float                               # m
    average_threshold: float                            # lx
    average_grid: tuple[int, int] = (50, 50)

    def __post_init__(self):
        object.__setattr__(self, "point_constraints", tuple(self.point_constraints))
        xmin, ymin, xmax, ymax = self.average_region
        if xmax <= xmin or ymax <= ymin:
            raise ScenarioError("illumination.average_region must have positive area")
        if self.average_threshold < 0:
            raise ScenarioError("illumination.average_threshold must be >= 0")
        if min(self.average_grid) < 2:
            raise ScenarioError("illumination.average_grid dimensions must be >= 2")


@dataclass(frozen=True)
class PowerSpec:
    p_lb: np.ndarray              # W electrical, per LED
    p_ub: np.ndarray              # W electrical, per LED
    p_total: float | None = None  # W electrical, optional

    def __post_init__(self):
        object.__setattr__(self, "p_lb", _frozen_array(self.p_lb))
        object.__setattr__(self, "p_ub", _frozen_array(self.p_ub))
        if self.p_lb.shape != self.p_ub.shape:
            raise ScenarioError("power bounds must have matching length")
        if np.any(self.p_lb < 0):
            raise ScenarioError("power.p_lb must be non-negative")
        bad = np.nonzero(self.p_lb > self.p_ub)[0]
        if bad.size:
            raise ScenarioError(
                f"power bounds inverted: p_lb > p_ub at component {int(bad[0])}"
            )
        if self.p_total is not None and self.p_total < float(self.p_lb.sum()):
            raise ScenarioError(
                f"power.total = {self.p_total} W is below the summed lower "
                f"bounds {float(self.p_lb.sum())} W: scenario infeasible"
            )


@dataclass(frozen=True)
class Scenario:
    leds: tuple[LedTransmitter, ...]
    receiver: Receiver
    illumination: IlluminationSpec
    power: PowerSpec
    base_optical_power: float = 2.0 / 3.0   # optical power of the unit base signal

    def __post_init__(self):
        object.__setattr__(self, "leds", tuple(self.leds))
        if not self.leds:
            raise ScenarioError("scenario needs at least one LED")
        if self.base_optical_power <= 0:
            raise ScenarioError("base_optical_power must be positive")
        if len(self.power.p_lb) != len(self.leds):
            raise ScenarioError("power bounds length does not match LED count")
        led_z = min(float(l.location[2]) for l in self.leds)
        point_z = [float(pc.location[2]) for pc in self.illumination.point_constraints]
        point_z.append(self.illumination.average_height)
        if led_z <= max(point_z):
            raise ScenarioError(
                "all LED heights must lie strictly above all illumination points"
            )

    @property
    def nl(self) -> int:
        return len(self.leds)

    def led_locations(self) -> np.ndarray:
        return np.array([l.location for l in self.leds])


def convert_optical_to_electrical(p_opt: float, base_optical_power: float) -> float:
    """Electrical drive power that produces optical power ``p_opt``.

    The transmitted waveform scales with the square root of the electrical
    power, so optical power p_opt corresponds to (p_opt / base)^2 electrical.
    """
    if base_optical_power <= 0:
        raise ScenarioError("base_optical_power must be positive")
    if p_opt < 0:
        raise ScenarioError("optical power must be non-negative")
    return (p_opt / base_optical_power) ** 2


def convert_electrical_to_optical(p_elec: float, base_optical_power: float) -> float:
    if p_elec < 0:
        raise ScenarioError("electrical power must be non-negative")
    return math.sqrt(p_elec) * base_optical_power


def _load_led(entry: dict, index: int) -> LedTransmitter:
    name = f"leds[{index}]"
    if "orientation" in entry:
        orient = np.array(entry["orientation"], dtype=float)
    elif "orientation_polar_deg" in entry:
        pol, az = entry["orientation_polar_deg"]
        orient = orientation_from_angles(math.radians(pol), math.radians(az))
    else:
        raise ScenarioError(f"{name}: missing orientation")
    return LedTransmitter(
        location=_parse_vector(entry.get("location"), "length", f"{name}.location"),
        orientation=orient,
        lambertian_order=float(entry.get("lambertian_order", 1.0)),
        luminous_efficacy=_parse_quantity(
            entry.get("luminous_efficacy"), "efficacy", f"{name}.luminous_efficacy"
        ),
        center_frequency=_parse_quantity(
            entry.get("center_frequency"), "frequency", f"{name}.center_frequency"
        ),
        pulse_width=_parse_quantity(
            entry.get("pulse_width"), "time", f"{name}.pulse_width"
        ),
        label=name,
    )


def _load_receiver(entry: dict) -> Receiver:
    if "orientation" in entry:
        orient = np.array(entry["orientation"], dtype=float)
    elif "orientation_polar_deg" in entry:
        pol, az = entry["orientation_polar_deg"]
        orient = orientation_from_angles(math.radians(pol), math.radians(az))
    else:
        raise ScenarioError("receiver: missing orientation")
    sync = entry.get("sync_mode", "asynchronous")
    try:
        sync_mode = SyncMode(sync)
    except ValueError:
        raise ScenarioError(
            f"receiver.sync_mode must be 'synchronous' or 'asynchronous', got {sync!r}"
        ) from None
    return Receiver(
        location=_parse_vector(entry.get("location"), "length", "receiver.location"),
        orientation=orient,
        responsivity=_parse_quantity(
            entry.get("responsivity"), "responsivity", "receiver.responsivity"
        ),
        detector_area=_parse_quantity(
            entry.get("detector_area"), "area", "receiver.detector_area"
        ),
        noise_psd=_parse_quantity(
            entry.get("noise_psd"), "noise_psd", "receiver.noise_psd"
        ),
        sync_mode=sync_mode,
    )


def _load_illumination(entry: dict) -> IlluminationSpec:
    points = []
    for i, pc in enumerate(entry.get("points", [])):
        points.append(
            PointConstraint(
                location=_parse_vector(
                    pc.get("location"), "length", f"illumination.points[{i}].location"
                ),
                threshold=_parse_quantity(
                    pc.get("threshold"), "illuminance",
                    f"illumination.points[{i}].threshold",
                ),
            )
        )
    region = _parse_vector(
        entry.get("average_region"), "length", "illumination.average_region", size=4
    )
    grid = entry.get("average_grid", [50, 50])
    return IlluminationSpec(
        point_constraints=tuple(points),
        average_region=tuple(float(v) for v in region),
        average_height=_parse_quantity(
            entry.get("average_height"), "length", "illumination.average_height"
        ),
        average_threshold=_parse_quantity(
            entry.get("average_threshold"), "illuminance",
            "illumination.average_threshold",
        ),
        average_grid=(int(grid[0]), int(grid[1])),
    )


def _per_led_bounds(entry: dict, nl: int, base_opt: float) -> tuple[np.ndarray, np.ndarray]:
    def expand(raw, key, optical: bool):
        vals = raw if isinstance(raw, list) else [raw] * nl
        if len(vals) != nl:
            raise ScenarioError(f"power.{key}: expected 1 or {nl} entries")
        out = [_parse_quantity(v, "power", f"power.{key}") for v in vals]
        if optical:
            out = [convert_optical_to_electrical(v, base_opt) for v in out]
        return np.array(out)

    if "min_optical" in entry or "max_optical" in entry:
        lb = expand(entry.get("min_optical", "0 W"), "min_optical", optical=True)
        ub = expand(entry.get("max_optical"), "max_optical", optical=True)
    else:
        lb = expand(entry.get("min_electrical", "0 W"), "min_electrical", optical=False)
        ub = expand(entry.get("max_electrical"), "max_electrical", optical=False)
    return lb, ub


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file (YAML key-value tree with unit tags)."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: expected a mapping at top level")
    for section in ("leds", "receiver", "illumination", "power"):
        if section not in raw:
            raise ScenarioError(f"{path}: missing section {section!r}")

    base_opt = float(raw.get("signal", {}).get("base_optical_power", 2.0 / 3.0))
    leds = tuple(_load_led(e, i) for i, e in enumerate(raw["leds"]))
    power_entry = raw["power"]
    lb, ub = _per_led_bounds(power_entry, len(leds), base_opt)
    total = power_entry.get("total")
    p_total = None if total is None else _parse_quantity(total, "power", "power.total")

    return Scenario(
        leds=leds,
        receiver=_load_receiver(raw["receiver"]),
        illumination=_load_illumination(raw["illumination"]),
        power=PowerSpec(p_lb=lb, p_ub=ub, p_total=p_total),
        base_optical_power=base_opt,
    )


def tables_scenario_path() -> Path:
    """Path of the reference scenario shipped with the package."""
    return Path(__file__).parent / "data" / "tables_1_2.scenario"

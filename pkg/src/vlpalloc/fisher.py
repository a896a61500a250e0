"""Fisher information for receiver-location estimation.

Builds the per-LED information coefficient blocks from channel gradients and
base-signal energies, stacks them into the coefficient matrix used by every
optimization problem, and evaluates the position error bound (trace of the
inverse information matrix, m^2).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from . import channel
from .scenario import Scenario, SyncMode

ENERGY_CROSS_CHECK_RTOL = 1e-6
SINGULARITY_RTOL = 1e-14


class UnlocalizableError(ValueError):
    """Information matrix is singular or indefinite: position not identifiable."""

    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"information matrix not positive definite "
            f"(min eigenvalue {min_eigenvalue:.3e} 1/m^2)"
        )


def base_signal(t, pulse_width: float, center_frequency: float):
    """Unit-power base waveform on [0, pulse_width]."""
    t = np.asarray(t, dtype=float)
    return (2.0 / 3.0) * (1 - np.cos(2 * np.pi * t / pulse_width)) \
        * (1 + np.cos(2 * np.pi * center_frequency * t))


def base_signal_derivative(t, pulse_width: float, center_frequency: float):
    t = np.asarray(t, dtype=float)
    a = 2 * np.pi / pulse_width
    b = 2 * np.pi * center_frequency
    return (2.0 / 3.0) * (
        a * np.sin(a * t) * (1 + np.cos(b * t))
        - b * (1 - np.cos(a * t)) * np.sin(b * t)
    )


@dataclass(frozen=True)
class SignalEnergies:
    e1: float  # integral of squared waveform derivative, 1/s
    e2: float  # integral of squared waveform, s
    e3: float  # integral of waveform times derivative, dimensionless

    def __post_init__(self):
        if self.e1 <= 0 or self.e2 <= 0:
            raise ValueError("signal energies e1, e2 must be positive")
        if self.e1 * self.e2 < self.e3**2:
            raise ValueError("signal energies violate the Cauchy-Schwarz bound")


@lru_cache(maxsize=64)
def signal_energies(pulse_width: float, center_frequency: float) -> SignalEnergies:
    """Closed-form waveform energies, cross-checked by adaptive quadrature.

    Requires center_frequency * pulse_width to be a positive integer (>= 3 in
    practice; smaller values make the carrier and envelope harmonics overlap
    and the cross-check below rejects them).
    """
    cycles = center_frequency * pulse_width
    if cycles <= 0 or abs(cycles - round(cycles)) > 1e-9:
        raise ValueError(
            f"center_frequency * pulse_width = {cycles!r} must be a positive integer"
        )
    ts, fc = pulse_width, center_frequency
    e1 = (4 * np.pi**2 / 3) * (1.0 / ts + fc**2 * ts)
    e2 = ts
    e3 = 0.0

    limit = int(max(200, 16 * cycles))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        e1_q, _ = quad(
            lambda t: base_signal_derivative(t, ts, fc) ** 2, 0, ts,
            limit=limit, epsabs=0.0, epsrel=1e-10,
        )
        e2_q, _ = quad(
            lambda t: base_signal(t, ts, fc) ** 2, 0, ts,
            limit=limit, epsabs=0.0, epsrel=1e-10,
        )
        e3_q, _ = quad(
            lambda t: base_signal(t, ts, fc) * base_signal_derivative(t, ts, fc),
            0, ts, limit=limit, epsabs=1e-12 * math.sqrt(e1 * e2), epsrel=1e-10,
        )
    e3_scale = math.sqrt(e1 * e2)
    if (abs(e1_q - e1) > ENERGY_CROSS_CHECK_RTOL * e1
            or abs(e2_q - e2) > ENERGY_CROSS_CHECK_RTOL * e2
            or abs(e3_q - e3) > ENERGY_CROSS_CHECK_RTOL * e3_scale):
        raise ValueError(
            "closed-form signal energies disagree with quadrature "
            f"(pulse_width={ts}, center_frequency={fc}): "
            f"e1 {e1:.6e} vs {e1_q:.6e}, e2 {e2:.6e} vs {e2_q:.6e}, "
            f"e3 {e3:.6e} vs {e3_q:.6e}"
        )
    return SignalEnergies(e1=e1, e2=e2, e3=e3)


def led_gamma_blocks(scenario: Scenario, receiver_loc=None,
                     receiver_orient=None) -> np.ndarray:
    """Per-LED 3x3 information coefficient blocks, units 1/(m^2 W).

    The information matrix for a power vector p is sum_i P_i * blocks[i].
    ``receiver_loc`` may carry leading batch axes (shape (..., 3)); the result
    then has shape (..., NL, 3, 3).  Defaults evaluate at the scenario's
    nominal receiver pose.
    """
    rx = scenario.receiver
    loc = rx.location if receiver_loc is None else np.asarray(receiver_loc, float)
    orient = rx.orientation if receiver_orient is None \
        else np.asarray(receiver_orient, float)
    noise_ratio = rx.responsivity**2 / rx.noise_psd
    sync = rx.sync_mode is SyncMode.SYNCHRONOUS

    blocks = []
    for led in scenario.leds:
        en = signal_energies(led.pulse_width, led.center_frequency)
        ga = channel.gain_gradient(led, loc, orient, rx.detector_area)
        if sync:
            alpha = np.asarray(
                channel.lambertian_gain(led, loc, orient, rx.detector_area)
            )
            gt = channel.toa_gradient(led.location, loc)
            block = noise_ratio * (
                en.e2 * ga[..., :, None] * ga[..., None, :]
                + en.e1 * alpha[..., None, None] ** 2
                * gt[..., :, None] * gt[..., None, :]
                - en.e3 * alpha[..., None, None]
                * (ga[..., :, None] * gt[..., None, :]
                   + gt[..., :, None] * ga[..., None, :])
            )
        else:
            coeff = noise_ratio * (en.e2 - en.e3**2 / en.e1)
            block = coeff * ga[..., :, None] * ga[..., None, :]
        blocks.append(block)
    return np.stack(blocks, axis=-3)


def gamma_entry(led_index: int, k1: int, k2: int, scenario: Scenario) -> float:
    """One information coefficient (axes k1, k2 in {1,2,3}) for one LED."""
    if k1 not in (1, 2, 3) or k2 not in (1, 2, 3):
        raise ValueError("axis indices must be 1, 2 or 3")
    blocks = led_gamma_blocks(scenario)
    return float(blocks[led_index, k1 - 1, k2 - 1])


@dataclass(frozen=True)
class GammaMatrix:
    """Stacked information coefficients, shape (3*NL, 3).

    Row block k1 (length NL) and column k2 hold the per-LED coefficients
    pairing location axes k1 and k2, so the information matrix is
    J(p) = (I_3 kron p)^T entries.
    """

    entries: np.ndarray
    sync_mode: SyncMode = SyncMode.ASYNCHRONOUS

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] % 3:
            raise ValueError(f"expected (3*NL, 3) coefficient matrix, got {arr.shape}")
        nl = arr.shape[0] // 3
        scale = float(np.abs(arr).max()) or 1.0
        diag = np.stack([arr[k * nl:(k + 1) * nl, k] for k in range(3)])
        if np.any(diag < -1e-12 * scale):
            raise ValueError("diagonal information coefficients must be >= 0")
        arr.flags.writeable = False
        object.__setattr__(self, "entries", arr)

    @property
    def nl(self) -> int:
        return self.entries.shape[0] // 3

    def blocks(self) -> np.ndarray:
        """Per-LED 3x3 blocks, shape (NL, 3, 3)."""
        nl = self.nl
        return np.stack(
            [self.entries[[k * nl + i for k in range(3)], :] for i in range(nl)]
        )

    def spectral_norm(self) -> float:
        return float(np.linalg.norm(self.entries, 2))

    @classmethod
    def from_blocks(cls, blocks: np.ndarray,
                    sync_mode: SyncMode = SyncMode.ASYNCHRONOUS) -> "GammaMatrix":
        blocks = np.asarray(blocks, dtype=float)
        nl = blocks.shape[0]
        entries = np.zeros((3 * nl, 3))
        for k in range(3):
            entries[k * nl:(k + 1) * nl, :] = blocks[:, k, :]
        return cls(entries=entries, sync_mode=sync_mode)


def assemble_gamma(scenario: Scenario) -> GammaMatrix:
    """Information coefficient matrix at the scenario's nominal receiver pose."""
    return GammaMatrix.from_blocks(
        led_gamma_blocks(scenario), sync_mode=scenario.receiver.sync_mode
    )


@dataclass(frozen=True)
class Fim:
    """3x3 symmetric information matrix, units 1/m^2."""

    j: np.ndarray

    def __post_init__(self):
        arr = np.array(self.j, dtype=float)
        if arr.shape != (3, 3):
            raise ValueError("information matrix must be 3x3")
        arr.flags.writeable = False
        object.__setattr__(self, "j", arr)


def _entries_of(gamma) -> np.ndarray:
    return gamma.entries if isinstance(gamma, GammaMatrix) else np.asarray(gamma, float)


def fim(gamma, p) -> Fim:
    """Information matrix J(p); linear in p and symmetrized.

    ``gamma`` may be a GammaMatrix or a raw (3*NL, 3) array (e.g. a perturbed
    nominal matrix); the symmetric part is taken so perturbed inputs still
    produce a valid quadratic-form matrix.
    """
    entries = _entries_of(gamma)
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("power vector must be non-negative")
    nl = entries.shape[0] // 3
    if p.shape != (nl,):
        raise ValueError(f"power vector length {p.shape} does not match NL={nl}")
    j = np.vstack([p @ entries[k * nl:(k + 1) * nl, :] for k in range(3)])
    return Fim(j=(j + j.T) / 2)


def crlb(f: Fim) -> float:
    """Position error bound: trace of the inverse information matrix (m^2)."""
    eigvals, _ = np.linalg.eigh(f.j)
    scale = float(np.max(np.abs(eigvals)))
    if eigvals[0] <= SINGULARITY_RTOL * scale or scale == 0.0:
        raise UnlocalizableError(float(eigvals[0]))
    return float(np.sum(1.0 / eigvals))


def per_axis_crlb(f: Fim) -> np.ndarray:
    """Diagonal of the inverse information matrix: per-axis bounds (m^2)."""
    eigvals, vecs = np.linalg.eigh(f.j)
    scale = float(np.max(np.abs(eigvals)))
    if eigvals[0] <= SINGULARITY_RTOL * scale or scale == 0.0:
        raise UnlocalizableError(float(eigvals[0]))
    return np.einsum("ik,k,ik->i", vecs, 1.0 / eigvals, vecs)


def crlb_for_blocks(blocks: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Vectorized error bound over batched per-LED blocks.

    ``blocks`` has shape (..., NL, 3, 3); returns shape (...) with +inf where
    the information matrix is singular or indefinite.
    """
    p = np.asarray(p, dtype=float)
    j = np.einsum("i,...ijk->...jk", p, blocks)
    j = (j + np.swapaxes(j, -1, -2)) / 2
    eigvals = np.linalg.eigvalsh(j)
    scale = np.max(np.abs(eigvals), axis=-1)
    ok = eigvals[..., 0] > SINGULARITY_RTOL * np.maximum(scale, 1e-300)
    with np.errstate(divide="ignore"):
        out = np.where(ok, np.sum(1.0 / np.maximum(eigvals, 1e-300), axis=-1), np.inf)
    return out if out.ndim else float(out)

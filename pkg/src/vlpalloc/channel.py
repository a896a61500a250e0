"""Lambertian optical channel: gain, analytic gradients, illuminance kernels.

All functions broadcast over leading axes of the receiver-location argument,
so a grid of candidate positions can be evaluated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import IlluminationSpec, LedTransmitter

SPEED_OF_LIGHT = 299_792_458.0  # m/s


class ChannelGeometryError(ValueError):
    """Raised for degenerate geometry (coincident points, point above LED)."""


@dataclass(frozen=True)
class ChannelGain:
    """Gain and its spatial sensitivities for one LED/receiver pair."""

    alpha: float            # dimensionless
    grad_alpha: np.ndarray  # 1/m, d(alpha)/d(receiver location)
    grad_tau: np.ndarray    # s/m, d(TOA)/d(receiver location)
    los: bool               # False when the pair has no line of sight

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ValueError("channel gain must be finite")
        direction = SPEED_OF_LIGHT * np.asarray(self.grad_tau, dtype=float)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValueError("TOA gradient is not a unit direction over c")


def _geometry(led: LedTransmitter, receiver_loc, receiver_orient):
    """Broadcast receiver location/orientation and return shared dot products."""
    d = np.asarray(receiver_loc, dtype=float) - led.location
    nr = np.asarray(receiver_orient, dtype=float)
    d, nr = np.broadcast_arrays(d, nr)
    dist = np.linalg.norm(d, axis=-1)
    if np.any(dist == 0.0):
        raise ChannelGeometryError("receiver location coincides with LED location")
    d_nt = d @ led.orientation
    d_nr = np.einsum("...k,...k->...", d, nr)
    return d, nr, dist, d_nt, d_nr


def line_of_sight(led: LedTransmitter, receiver_loc, receiver_orient) -> np.ndarray:
    """True where the receiver is in front of the LED and facing it."""
    _, _, _, d_nt, d_nr = _geometry(led, receiver_loc, receiver_orient)
    return (d_nt > 0.0) & (d_nr < 0.0)


def lambertian_gain(led: LedTransmitter, receiver_loc, receiver_orient,
                    detector_area: float):
    """Channel attenuation factor for one LED.

    Positive under line-of-sight incidence; 0 where the receiver sits behind
    the LED emission half-space or the light hits the detector's back side.
    """
    d, _, dist, d_nt, d_nr = _geometry(led, receiver_loc, receiver_orient)
    m = led.lambertian_order
    los = (d_nt > 0.0) & (d_nr < 0.0)
    front = np.where(d_nt > 0.0, d_nt, 0.0)
    alpha = -((m + 1) * detector_area / (2 * np.pi)) * front**m * d_nr / dist ** (m + 3)
    alpha = np.where(los, alpha, 0.0)
    return alpha if alpha.ndim else float(alpha)


def gain_gradient(led: LedTransmitter, receiver_loc, receiver_orient,
                  detector_area: float) -> np.ndarray:
    """Analytic gradient of lambertian_gain w.r.t. the receiver location (1/m)."""
    d, nr, dist, d_nt, d_nr = _geometry(led, receiver_loc, receiver_orient)
    m = led.lambertian_order
    los = (d_nt > 0.0) & (d_nr < 0.0)
    front = np.where(d_nt > 0.0, d_nt, 1.0)  # placeholder off-LOS, masked below

    dist = dist[..., None]
    d_nt_ = front[..., None]
    d_nr_ = d_nr[..., None]
    term1 = d_nt_ ** (m - 1) / dist ** (m + 3) * (
        m * led.orientation * d_nr_ + nr * d_nt_
    )
    term2 = (m + 3) * d / dist ** (m + 5) * d_nt_**m * d_nr_
    grad = -((m + 1) * detector_area / (2 * np.pi)) * (term1 - term2)
    return np.where(los[..., None], grad, 0.0)


def toa_gradient(led_loc, receiver_loc) -> np.ndarray:
    """Gradient of the time of arrival w.r.t. the receiver location (s/m)."""
    d = np.asarray(receiver_loc, dtype=float) - np.asarray(led_loc, dtype=float)
    dist = np.linalg.norm(d, axis=-1)
    if np.any(dist == 0.0):
        raise ChannelGeometryError("receiver location coincides with LED location")
    return d / (SPEED_OF_LIGHT * dist[..., None])


def channel_gain(led: LedTransmitter, receiver_loc, receiver_orient,
                 detector_area: float) -> ChannelGain:
    """Bundle gain, gain gradient and TOA gradient for one LED/receiver pair."""
    loc = np.asarray(receiver_loc, dtype=float)
    alpha = lambertian_gain(led, loc, receiver_orient, detector_area)
    return ChannelGain(
        alpha=float(alpha),
        grad_alpha=gain_gradient(led, loc, receiver_orient, detector_area),
        grad_tau=toa_gradient(led.location, loc),
        los=bool(line_of_sight(led, loc, receiver_orient)),
    )


def illuminance_kernel(led: LedTransmitter, point, base_optical_power: float):
    """Horizontal illuminance per sqrt(W electrical) at ``point`` (lx/sqrt(W)).

    Total illuminance for a power vector p is sum_i sqrt(P_i) * kernel_i.
    """
    pt = np.asarray(point, dtype=float)
    height = led.location[2] - pt[..., 2]
    if np.any(height <= 0.0):
        raise ChannelGeometryError("illuminance point at or above LED height")
    d = pt - led.location
    dist = np.linalg.norm(d, axis=-1)
    d_nt = d @ led.orientation
    m = led.lambertian_order
    front = np.where(d_nt > 0.0, d_nt, 0.0)
    phi = ((m + 1) * led.luminous_efficacy * base_optical_power / (2 * np.pi)
           * front**m * height / dist ** (m + 3))
    return phi if phi.ndim else float(phi)


def point_kernel_vector(leds, point, base_optical_power: float) -> np.ndarray:
    """Per-LED illuminance kernels at a single point."""
    return np.array(
        [illuminance_kernel(led, point, base_optical_power) for led in leds]
    )


def average_illuminance_coefficients(leds, illumination: IlluminationSpec,
                                     base_optical_power: float) -> np.ndarray:
    """Midpoint-rule average of each LED's illuminance kernel over the region.

    Average illuminance for a power vector p is sum_i sqrt(P_i) * coeff_i.
    """
    xmin, ymin, xmax, ymax = illumination.average_region
    nx, ny = illumination.average_grid
    xs = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
    ys = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack(
        [gx, gy, np.full_like(gx, illumination.average_height)], axis=-1
    )
    return np.array(
        [float(np.mean(illuminance_kernel(led, pts, base_optical_power)))
         for led in leds]
    )


def total_illuminance(leds, point, powers, base_optical_power: float) -> float:
    """Total illuminance (lx) at a point for electrical power vector ``powers``."""
    p = np.asarray(powers, dtype=float)
    return float(np.sqrt(p) @ point_kernel_vector(leds, point, base_optical_power))

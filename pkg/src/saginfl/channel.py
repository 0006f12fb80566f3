"""Channel coefficients and achievable rates for every link class.

Ground-air links are Rician; air-space links use a deterministic free-space
coefficient degraded by outdated CSI (Bessel-weighted decorrelation);
inter-satellite links follow the standard thermal-noise-limited cross-link
budget.  All functions are stateless given an explicit random generator, so
callers own their random streams.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import j0 as _bessel_j0

from .config import BOLTZMANN, SPEED_OF_LIGHT


@dataclass
class LinkBudget:
    """One directed link, resolved to an achievable rate."""

    coeff_mag_sq: float
    bandwidth: float
    tx_power: float
    interference: float = 0.0
    noise: float = 0.0
    rate: float = field(init=False)

    def __post_init__(self) -> None:
        for name in ("coeff_mag_sq", "bandwidth", "tx_power",
                     "interference", "noise"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.bandwidth == 0.0:
            raise ValueError("bandwidth must be positive")
        denom = self.interference + self.noise
        if denom <= 0.0:
            raise ValueError("interference + noise must be positive")
        snr = self.tx_power * self.coeff_mag_sq / denom
        self.rate = self.bandwidth * math.log2(1.0 + snr)


@dataclass
class FadingDraw:
    """One slot's small-scale fading state for a ground-air link."""

    rician_factor: float
    los_coeff: complex
    nlos_coeff: complex

    @classmethod
    def sample(cls, rng: np.random.Generator, rician_factor: float,
               distance_m: float, wavelength_m: float) -> "FadingDraw":
        """LoS phase deterministic from geometry, NLoS circular Gaussian."""
        los = cmath.exp(-2j * math.pi * distance_m / wavelength_m)
        re, im = rng.standard_normal(2)
        nlos = complex(re, im) / math.sqrt(2.0)
        return cls(rician_factor=rician_factor, los_coeff=los,
                   nlos_coeff=nlos)


def ground_air_coeff(distance_m: float, draw: FadingDraw, tau_los: float,
                     tau_nlos: float) -> complex:
    """Rician ground-air channel coefficient.

    ``sqrt(w/(w+1)) g_los d^(-tau_los/2) + sqrt(1/(w+1)) g_nlos d^(-tau_nlos/2)``
    """
    if distance_m <= 0.0:
        raise ValueError("distance must be positive")
    w = draw.rician_factor
    los = math.sqrt(w / (w + 1.0)) * draw.los_coeff * distance_m ** (-tau_los / 2.0)
    nlos = math.sqrt(1.0 / (w + 1.0)) * draw.nlos_coeff * distance_m ** (-tau_nlos / 2.0)
    return los + nlos


def rician_mean_power(rician_factor: float, distance_m: float,
                      tau_los: float, tau_nlos: float) -> float:
    """Closed-form E[|h|^2] of :func:`ground_air_coeff`."""
    w = rician_factor
    return (w / (w + 1.0)) * distance_m ** (-tau_los) \
        + (1.0 / (w + 1.0)) * distance_m ** (-tau_nlos)


def uplink_rate_user_uav(bandwidth: float, tx_power: float,
                         coeff_mag_sq: float,
                         co_channel: list[tuple[float, float]],
                         noise_var: float) -> LinkBudget:
    """Ground-user uplink with co-channel interference from other users.

    ``co_channel`` holds ``(tx_power, |h|^2 at this receiver)`` pairs for the
    other concurrently transmitting uplink users.
    """
    interference = sum(p * h2 for p, h2 in co_channel)
    return LinkBudget(coeff_mag_sq=coeff_mag_sq, bandwidth=bandwidth,
                      tx_power=tx_power, interference=interference,
                      noise=noise_var)


def downlink_rate_uav_user(bandwidth: float, tx_power: float,
                           coeff_mag_sq: float, noise_var: float) -> LinkBudget:
    """UAV broadcast downlink; interference-free by construction."""
    return LinkBudget(coeff_mag_sq=coeff_mag_sq, bandwidth=bandwidth,
                      tx_power=tx_power, interference=0.0, noise=noise_var)


def uplink_rate_uav_sat(bandwidth: float, tx_power: float,
                        coeff_mag_sq: float,
                        co_channel: list[tuple[float, float]],
                        noise_var: float) -> LinkBudget:
    """UAV-to-satellite uplink with interference from other uploading UAVs."""
    interference = sum(p * h2 for p, h2 in co_channel)
    return LinkBudget(coeff_mag_sq=coeff_mag_sq, bandwidth=bandwidth,
                      tx_power=tx_power, interference=interference,
                      noise=noise_var)


def downlink_rate_sat_uav(bandwidth: float, tx_power: float,
                          coeff_mag_sq: float, noise_var: float) -> LinkBudget:
    """Satellite-to-UAV downlink; interference-free."""
    return LinkBudget(coeff_mag_sq=coeff_mag_sq, bandwidth=bandwidth,
                      tx_power=tx_power, interference=0.0, noise=noise_var)


def sat_uav_coeff(distance_m: float, antenna_gain: float,
                  wavelength_m: float, phase_rad: float) -> complex:
    """Free-space satellite/UAV coefficient ``sqrt(g) lambda/(4 pi d) e^{j p}``."""
    if distance_m <= 0.0:
        raise ValueError("distance must be positive")
    if wavelength_m <= 0.0:
        raise ValueError("wavelength must be positive")
    mag = math.sqrt(antenna_gain) * wavelength_m / (4.0 * math.pi * distance_m)
    return mag * cmath.exp(1j * phase_rad)


def csi_decorrelation(doppler_hz: float, delay_s: float) -> float:
    """Outdating factor: zeroth-order Bessel of ``2 pi D T``."""
    return float(_bessel_j0(2.0 * math.pi * doppler_hz * delay_s))


def outdated_csi(h_hat: complex, doppler_hz: float, delay_s: float,
                 rng: np.random.Generator) -> complex:
    """Decorrelate an estimated coefficient by Doppler-induced aging.

    ``h = delta h_hat + sqrt(1 - delta^2) g`` with ``g`` complex Gaussian of
    the same variance as ``h_hat``, so E[|h|^2] is preserved for any delta.
    """
    delta = csi_decorrelation(doppler_hz, delay_s)
    scale = abs(h_hat)
    re, im = rng.standard_normal(2)
    g = scale * complex(re, im) / math.sqrt(2.0)
    return delta * h_hat + math.sqrt(max(0.0, 1.0 - delta * delta)) * g


def thermal_noise_w(bandwidth_hz: float,
                    temperature_k: float = 354.81) -> float:
    """Thermal noise power over a band: Boltzmann * T * B."""
    if bandwidth_hz <= 0.0 or temperature_k <= 0.0:
        raise ValueError("bandwidth and temperature must be positive")
    return BOLTZMANN * temperature_k * bandwidth_hz


def isl_rate(distance_m: float, bandwidth: float, tx_power: float,
             eta_max: float, carrier_hz: float,
             temperature_k: float = 354.81) -> float:
    """Inter-satellite link rate.

    ``B log2(1 + P eta^2 / (k T B (4 pi d F / c)^2))`` with ``k`` Boltzmann's
    constant and ``T`` the thermal noise temperature.
    """
    if min(distance_m, bandwidth, tx_power, carrier_hz) <= 0.0:
        raise ValueError("distance, bandwidth, power, carrier must be positive")
    path = (4.0 * math.pi * distance_m * carrier_hz / SPEED_OF_LIGHT) ** 2
    noise = thermal_noise_w(bandwidth, temperature_k)
    snr = tx_power * eta_max * eta_max / (noise * path)
    return bandwidth * math.log2(1.0 + snr)

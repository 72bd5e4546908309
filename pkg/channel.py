"""
Propagation model: delay, free-space and two-ray ground path loss, Rice/Rayleigh block fading,
thermal noise and the received-power link budget.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8  # m/s
BOLTZMANN = 1.380649e-23  # J/K
MIN_DISTANCE = 0.1  # m, path loss is evaluated no closer than this


class ChannelVariant(enum.Enum):
    FREE_SPACE = "free-space"
    TWO_RAY = "two-ray"
    RICE = "rice"
    RAYLEIGH = "rayleigh"


@dataclass(frozen=True)
class ChannelModel:
    """
    Propagation variant and its parameters.

    ``rice`` and ``rayleigh`` add block fading on top of ``path_loss`` (free space or two-ray).
    ``k_factor`` is linear; ``math.inf`` is the pure specular limit.
    """

    variant: ChannelVariant = ChannelVariant.FREE_SPACE
    k_factor: float = 0.0
    path_loss: ChannelVariant = ChannelVariant.FREE_SPACE

    def __post_init__(self):
        if self.k_factor < 0:
            raise ValueError("k_factor must be >= 0")
        if self.path_loss not in (ChannelVariant.FREE_SPACE, ChannelVariant.TWO_RAY):
            raise ValueError("path_loss must be free-space or two-ray")

    @property
    def has_fading(self) -> bool:
        return self.variant in (ChannelVariant.RICE, ChannelVariant.RAYLEIGH)


@dataclass(frozen=True)
class RadioParams:
    """Radio configuration; the two classmethods hold the two columns of the reference parameter table."""

    bandwidth: float  # Hz
    carrier_frequency: float  # Hz
    throughput: float  # bit/s
    antenna_height: float  # m
    antenna_gain: float  # dB
    noise_figure: float  # dB
    temperature: float  # K
    sensitivity: float  # dBm
    rx_threshold: float  # dBm
    tx_power: float  # dBm
    family: str = "uwb"

    def __post_init__(self):
        for name in ("bandwidth", "carrier_frequency", "throughput", "antenna_height", "temperature"):
            if getattr(self, name) <= 0:
                raise ValueError(f"radio.{name} must be positive")
        if self.sensitivity > self.rx_threshold:
            raise ValueError("radio.sensitivity must be <= radio.rx_threshold")
        if self.family not in ("uwb", "oqpsk"):
            raise ValueError(f"unknown radio family {self.family!r}")

    @classmethod
    def uwb(cls, **overrides) -> RadioParams:
        values = dict(
            bandwidth=100e6,
            carrier_frequency=0.8e9,
            throughput=1e6,
            antenna_height=0.45,
            antenna_gain=3.0,
            noise_figure=5.0,
            temperature=270.0,
            sensitivity=-85.0,
            rx_threshold=-80.0,
            tx_power=-24.318,
            family="uwb",
        )
        values.update(overrides)
        return cls(**values)

    @classmethod
    def oqpsk(cls, **overrides) -> RadioParams:
        values = dict(
            bandwidth=2e6,
            carrier_frequency=2.45e9,
            throughput=0.25e6,
            antenna_height=0.03,
            antenna_gain=3.0,
            noise_figure=10.0,
            temperature=270.0,
            sensitivity=-96.0,
            rx_threshold=-85.0,
            tx_power=17.0,
            family="oqpsk",
        )
        values.update(overrides)
        return cls(**values)


def dbm_to_watts(dbm: float) -> float:
    return 10 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def propagation_delay(distance: float) -> float:
    """Propagation delay in seconds over ``distance`` meters."""
    if distance < 0:
        raise ValueError("distance must be >= 0")
    return distance / SPEED_OF_LIGHT


def free_space_loss(distance: float, frequency: float) -> float:
    """
    Friis free-space path loss in dB.

    Parameters
    ----------
    distance : float
        Link distance in meters, strictly positive. Callers clamp to ``MIN_DISTANCE``.
    frequency : float
        Carrier frequency in Hz.
    """
    if distance <= 0 or frequency <= 0:
        raise ValueError("free_space_loss needs distance > 0 and frequency > 0")
    return 20.0 * math.log10(4.0 * math.pi * distance * frequency / SPEED_OF_LIGHT)


def crossover_distance(ht: float, hr: float, frequency: float) -> float:
    wavelength = SPEED_OF_LIGHT / frequency
    return 4.0 * math.pi * ht * hr / wavelength


def two_ray_loss(distance: float, ht: float, hr: float, frequency: float) -> float:
    """
    Two-ray ground reflection path loss in dB, free space below the crossover distance.
    """
    if distance <= 0 or ht <= 0 or hr <= 0:
        raise ValueError("two_ray_loss needs distance, ht and hr > 0")
    if distance < crossover_distance(ht, hr, frequency):
        return free_space_loss(distance, frequency)
    return 40.0 * math.log10(distance) - 20.0 * math.log10(ht * hr)


def path_loss(model: ChannelModel, distance: float, ht: float, hr: float, frequency: float) -> float:
    distance = max(distance, MIN_DISTANCE)
    if model.path_loss is ChannelVariant.TWO_RAY or model.variant is ChannelVariant.TWO_RAY:
        return two_ray_loss(distance, ht, hr, frequency)
    return free_space_loss(distance, frequency)


def fading_gains(model: ChannelModel, generator: np.random.Generator, size: int) -> np.ndarray:
    """Vector of |h|^2 samples with unit mean power."""
    if model.variant is ChannelVariant.RAYLEIGH:
        k = 0.0
    elif model.variant is ChannelVariant.RICE:
        k = model.k_factor
    else:
        return np.ones(size)
    if math.isinf(k):
        return np.ones(size)
    specular = math.sqrt(k / (k + 1.0))
    diffuse = math.sqrt(1.0 / (2.0 * (k + 1.0)))
    h = specular + diffuse * (generator.standard_normal(size) + 1j * generator.standard_normal(size))
    return np.abs(h) ** 2


def fading_gain(model: ChannelModel, stream) -> float:
    """
    One block-fading power multiplier.

    Parameters
    ----------
    model : ChannelModel
        Rice or Rayleigh; other variants return 1.
    stream : RngStream
        The receiver's channel-fading stream.
    """
    stream.draws += 1
    return float(fading_gains(model, stream.generator, 1)[0])


def noise_power(radio: RadioParams) -> float:
    """In-band thermal noise at the detector in watts: k_B * T * B scaled by the noise figure."""
    return BOLTZMANN * radio.temperature * radio.bandwidth * 10 ** (radio.noise_figure / 10.0)


def received_power_dbm(
    tx: RadioParams,
    rx: RadioParams,
    distance: float,
    model: ChannelModel,
    stream=None,
) -> float:
    """Link budget in dBm, including one fading draw when the model fades."""
    loss = path_loss(model, distance, tx.antenna_height, rx.antenna_height, tx.carrier_frequency)
    level = tx.tx_power + tx.antenna_gain + rx.antenna_gain - loss
    if model.has_fading and stream is not None:
        level += 10.0 * math.log10(max(fading_gain(model, stream), 1e-30))
    return level


def received_power(
    tx: RadioParams,
    rx: RadioParams,
    distance: float,
    model: ChannelModel,
    stream=None,
) -> float:
    """
    Received power in watts at ``distance``.

    Without fading (or without a stream) this is a pure function of the radio parameters and the
    distance.
    """
    if distance <= 0:
        raise ValueError("received_power needs distance > 0")
    return dbm_to_watts(received_power_dbm(tx, rx, distance, model, stream))

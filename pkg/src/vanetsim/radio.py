"""OFDM PHY profiles, frame airtime, two-ray-ground propagation, reception."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s


class UnsupportedRate(ValueError):
    pass


class PhyName(str, enum.Enum):
    Dot11p = "80211p"
    Dot11a = "80211a"

    @classmethod
    def parse(cls, name: "str | PhyName") -> "PhyName":
        if isinstance(name, PhyName):
            return name
        key = str(name).lower().replace(".", "").replace("_", "").replace("ieee", "")
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise ValueError(f"unknown PHY profile {name!r} (expected 80211p or 80211a)")


@dataclass(frozen=True)
class PhyProfile:
    """One radio standard. Durations are integer nanoseconds."""

    name: PhyName
    rates_mbps: tuple[float, ...]
    modulations: tuple[str, ...]
    coding_rates: tuple[str, ...]  # labels only, never used in airtime math
    subcarriers: int
    t_symbol_ns: int
    t_guard_ns: int
    t_fft_ns: int
    t_preamble_ns: int
    subcarrier_spacing_mhz: float
    slot_ns: int
    sifs_ns: int
    cw_min: int
    cw_max: int
    frequency_hz: float

    def __post_init__(self):
        if not self.rates_mbps:
            raise ValueError("rates_mbps must be nonempty")
        if self.t_symbol_ns != self.t_fft_ns + self.t_guard_ns:
            raise ValueError("OFDM symbol must equal FFT period plus guard interval")
        if not 0 <= self.cw_min <= self.cw_max:
            raise ValueError("need 0 <= cw_min <= cw_max")

    @property
    def t_signal_ns(self) -> int:
        return self.t_symbol_ns

    @property
    def difs_ns(self) -> int:
        return self.sifs_ns + 2 * self.slot_ns

    @property
    def basic_rate(self) -> float:
        return min(self.rates_mbps)

    # microsecond views, as the standard tables print them
    t_symbol_us = property(lambda self: self.t_symbol_ns / 1000)
    t_guard_us = property(lambda self: self.t_guard_ns / 1000)
    t_fft_us = property(lambda self: self.t_fft_ns / 1000)
    t_preamble_us = property(lambda self: self.t_preamble_ns / 1000)
    slot_us = property(lambda self: self.slot_ns / 1000)
    sifs_us = property(lambda self: self.sifs_ns / 1000)
    difs_us = property(lambda self: self.difs_ns / 1000)

    def with_overrides(self, **overrides) -> "PhyProfile":
        if "rates_mbps" in overrides:
            overrides["rates_mbps"] = tuple(float(r) for r in overrides["rates_mbps"])
        return replace(self, **overrides)


_OFDM_MODULATIONS = ("BPSK", "QPSK", "16-QAM", "64-QAM")
_CODING_LABELS = ("1/2", "1/3", "3/4")

_PROFILES = {
    PhyName.Dot11p: PhyProfile(
        name=PhyName.Dot11p,
        rates_mbps=(3.0, 4.5, 6.0, 9.0, 12.0, 18.0, 24.0, 27.0),
        modulations=_OFDM_MODULATIONS,
        coding_rates=_CODING_LABELS,
        subcarriers=52,
        t_symbol_ns=8000,
        t_guard_ns=1600,
        t_fft_ns=6400,
        t_preamble_ns=32000,
        subcarrier_spacing_mhz=0.15624,
        slot_ns=13000,
        sifs_ns=32000,
        cw_min=15,
        cw_max=1023,
        frequency_hz=5.9e9,
    ),
    PhyName.Dot11a: PhyProfile(
        name=PhyName.Dot11a,
        rates_mbps=(6.0, 9.0, 12.0, 18.0, 24.0, 36.0, 48.0, 54.0),
        modulations=_OFDM_MODULATIONS,
        coding_rates=_CODING_LABELS,
        subcarriers=52,
        t_symbol_ns=4000,
        t_guard_ns=800,
        t_fft_ns=3200,
        t_preamble_ns=16000,
        subcarrier_spacing_mhz=0.3125,
        slot_ns=9000,
        sifs_ns=16000,
        cw_min=15,
        cw_max=1023,
        frequency_hz=5.18e9,
    ),
}


def builtin_profile(name: "str | PhyName") -> PhyProfile:
    return _PROFILES[PhyName.parse(name)]


# SERVICE (16) and tail (6) bits ahead of the PSDU
_SERVICE_TAIL_BITS = 22


def bits_per_symbol(profile: PhyProfile, rate_mbps: float) -> int:
    if not any(rate_mbps == r for r in profile.rates_mbps):
        raise UnsupportedRate(f"{rate_mbps} Mbps not in {profile.name.value} rates {profile.rates_mbps}")
    n_dbps = Fraction(repr(float(rate_mbps))) * Fraction(profile.t_symbol_ns, 1000)
    if n_dbps.denominator != 1:
        raise UnsupportedRate(f"{rate_mbps} Mbps gives a fractional bits-per-symbol count")
    return int(n_dbps)


def frame_airtime(profile: PhyProfile, rate_mbps: float, psdu_bytes: int) -> int:
    """Airtime of one PPDU in integer nanoseconds."""
    if psdu_bytes < 0:
        raise ValueError("psdu_bytes must be nonnegative")
    n_dbps = bits_per_symbol(profile, rate_mbps)
    n_sym = -(-(_SERVICE_TAIL_BITS + 8 * psdu_bytes) // n_dbps)
    return profile.t_preamble_ns + profile.t_signal_ns + n_sym * profile.t_symbol_ns


def propagation_delay_ns(distance_m: float) -> int:
    return int(round(distance_m / SPEED_OF_LIGHT * 1e9))


@dataclass(frozen=True)
class ChannelModel:
    tx_power: float = 0.2818  # W
    antenna_gain_tx: float = 1.0
    antenna_gain_rx: float = 1.0
    antenna_height_tx: float = 1.5  # m
    antenna_height_rx: float = 1.5  # m
    frequency: float = 5.9e9  # Hz
    system_loss: float = 1.0
    rx_sensitivity: float = field(default=None)  # W; None -> 250 m range
    capture_ratio_db: float = 10.0

    def __post_init__(self):
        for name in ("tx_power", "antenna_gain_tx", "antenna_gain_rx", "antenna_height_tx",
                     "antenna_height_rx", "frequency"):
            if not getattr(self, name) > 0:
                raise ValueError(f"channel {name} must be positive")
        if not self.system_loss >= 1:
            raise ValueError("system_loss must be >= 1")
        if self.rx_sensitivity is None:
            object.__setattr__(self, "rx_sensitivity", received_power(self, DEFAULT_RANGE_M))
        elif not self.rx_sensitivity > 0:
            raise ValueError("rx_sensitivity must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.frequency

    @property
    def crossover_distance(self) -> float:
        return 4 * math.pi * self.antenna_height_tx * self.antenna_height_rx / self.wavelength

    @property
    def range_m(self) -> float:
        """Distance at which the received power falls to the sensitivity."""
        return range_for_power(self, self.rx_sensitivity)


DEFAULT_RANGE_M = 250.0


def channel_for(profile: PhyProfile, **overrides) -> ChannelModel:
    """Default channel at the profile's carrier frequency."""
    overrides.setdefault("frequency", profile.frequency_hz)
    return ChannelModel(**overrides)


def received_power(ch: ChannelModel, d: float) -> float:
    if not d > 0:
        raise ValueError("distance must be positive")
    gain = ch.tx_power * ch.antenna_gain_tx * ch.antenna_gain_rx
    if d < ch.crossover_distance:
        lam = ch.wavelength
        return gain * lam * lam / ((4 * math.pi) ** 2 * d * d * ch.system_loss)
    h2 = (ch.antenna_height_tx * ch.antenna_height_rx) ** 2
    return gain * h2 / (d ** 4 * ch.system_loss)


def received_power_array(ch: ChannelModel, d: np.ndarray) -> np.ndarray:
    """Vectorised :func:`received_power`; distances are clamped to 1 mm."""
    d = np.maximum(d, 1e-3)
    gain = ch.tx_power * ch.antenna_gain_tx * ch.antenna_gain_rx
    lam = ch.wavelength
    friis = gain * lam * lam / ((4 * math.pi) ** 2 * d * d * ch.system_loss)
    far = d >= ch.crossover_distance
    if far.any():
        h2 = (ch.antenna_height_tx * ch.antenna_height_rx) ** 2
        friis[far] = gain * h2 / (d[far] ** 4 * ch.system_loss)
    return friis


def range_for_power(ch: ChannelModel, power: float) -> float:
    gain = ch.tx_power * ch.antenna_gain_tx * ch.antenna_gain_rx
    lam = ch.wavelength
    d = math.sqrt(gain * lam * lam / ((4 * math.pi) ** 2 * power * ch.system_loss))
    if d < ch.crossover_distance:
        return d
    h2 = (ch.antenna_height_tx * ch.antenna_height_rx) ** 2
    return (gain * h2 / (power * ch.system_loss)) ** 0.25


class ReceptionOutcome(enum.Enum):
    Received = "received"
    BelowSensitivity = "below_sensitivity"
    Collision = "collision"


def reception_outcome(rx_power: float, interfering_powers, ch: ChannelModel) -> ReceptionOutcome:
    if rx_power < ch.rx_sensitivity:
        return ReceptionOutcome.BelowSensitivity
    interference = math.fsum(interfering_powers)
    if interference > 0 and 10 * math.log10(rx_power / interference) < ch.capture_ratio_db:
        return ReceptionOutcome.Collision
    return ReceptionOutcome.Received

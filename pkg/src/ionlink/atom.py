"""Level structure, decay channels and angular-momentum algebra of the 40Ca+ ion.

All rates are angular frequencies in rad/s; J and mJ are half-integers
stored as floats.  Energies are never absolute: levels only carry an
ordering rank, and all dynamics are expressed through detunings and
Zeeman shifts in a rotating frame.

The default model ships as a flat key=value data file
(``data/ca40_model.txt``) and can be replaced by a user file of the
same format.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from scipy.constants import physical_constants

from .kvformat import parse_kv_file, parse_kv_text

# mu_B / hbar in rad/s per Tesla (2pi * 1.3996... MHz/G)
MU_B_OVER_HBAR = (
    physical_constants["Bohr magneton"][0]
    / physical_constants["reduced Planck constant"][0]
)

TWO_PI = 6.283185307179586

# J for the standard fine-structure labels; custom models may override.
_LABEL_J = {"S1/2": 0.5, "P1/2": 0.5, "P3/2": 1.5, "D3/2": 1.5, "D5/2": 2.5}

WAVELENGTH_LABELS = (393, 397, 850, 854, 866, 729, 732)


class ModelError(ValueError):
    """Unknown level, bad quantum numbers, or inconsistent model data."""


@dataclass(frozen=True)
class Level:
    label: str
    J: float
    gJ: float
    energy_rank: int    # ordering only; absolute energies are never used

    def __post_init__(self):
        if self.J < 0 or round(2 * self.J) != 2 * self.J:
            raise ModelError(f"level {self.label}: J={self.J} is not half-integer")
        if self.label in _LABEL_J and _LABEL_J[self.label] != self.J:
            raise ModelError(f"level {self.label}: J={self.J} inconsistent with label")
        if self.gJ <= 0:
            raise ModelError(f"level {self.label}: gJ must be > 0")


@dataclass(frozen=True)
class ZeemanState:
    level: Level
    mJ: float

    def __post_init__(self):
        if abs(self.mJ) > self.level.J + 1e-12:
            raise ModelError(f"|mJ|={abs(self.mJ)} exceeds J={self.level.J}")
        if round(self.level.J - self.mJ) != self.level.J - self.mJ:
            raise ModelError(f"mJ={self.mJ} not in the mJ ladder of J={self.level.J}")


@dataclass(frozen=True)
class DecayChannel:
    upper: str
    lower: str
    rate: float         # partial decay rate, rad/s
    wavelength: int     # nm label

    def __post_init__(self):
        if self.rate < 0:
            raise ModelError(f"decay {self.upper}->{self.lower}: negative rate")
        if self.wavelength not in WAVELENGTH_LABELS:
            raise ModelError(f"decay {self.upper}->{self.lower}: "
                             f"unknown wavelength label {self.wavelength}")


@dataclass(frozen=True)
class MagneticField:
    tesla: float

    def __post_init__(self):
        if self.tesla < 0:
            raise ModelError("magnetic field magnitude must be >= 0")

    @classmethod
    def from_gauss(cls, gauss: float) -> "MagneticField":
        return cls(gauss * 1e-4)

    @property
    def gauss(self) -> float:
        return self.tesla * 1e4


class AtomModel:
    """Immutable container for levels and decay channels.

    Safe for unrestricted shared read access; all mutating state lives in
    the constructor.
    """

    def __init__(self, levels: list[Level], channels: list[DecayChannel]):
        self._levels = {lv.label: lv for lv in levels}
        if len(self._levels) != len(levels):
            raise ModelError("duplicate level labels")
        for ch in channels:
            up, lo = self.level(ch.upper), self.level(ch.lower)
            if up.energy_rank <= lo.energy_rank:
                raise ModelError(f"decay {ch.upper}->{ch.lower}: "
                                 "upper level must lie above lower level")
        self._channels = tuple(channels)
        self._order = tuple(sorted(self._levels, key=lambda k: self._levels[k].energy_rank))

    @property
    def labels(self) -> tuple[str, ...]:
        return self._order

    @property
    def channels(self) -> tuple[DecayChannel, ...]:
        return self._channels

    def level(self, label: str) -> Level:
        try:
            return self._levels[label]
        except KeyError:
            raise ModelError(f"unknown level {label!r}") from None

    def sublevels(self, label: str) -> list[ZeemanState]:
        lv = self.level(label)
        n = int(round(2 * lv.J)) + 1
        return [ZeemanState(lv, -lv.J + m) for m in range(n)]

    def channels_from(self, label: str) -> list[DecayChannel]:
        self.level(label)
        return [ch for ch in self._channels if ch.upper == label]

    def channel(self, upper: str, lower: str) -> DecayChannel | None:
        self.level(upper), self.level(lower)
        for ch in self._channels:
            if ch.upper == upper and ch.lower == lower:
                return ch
        return None

    def dipole_connected(self, a: str, b: str) -> bool:
        return self.channel(a, b) is not None or self.channel(b, a) is not None

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "AtomModel":
        return cls._build(parse_kv_text(text, source=source))

    @classmethod
    def from_file(cls, path) -> "AtomModel":
        return cls._build(parse_kv_file(path))

    @classmethod
    def default(cls) -> "AtomModel":
        data = resources.files("ionlink.data").joinpath("ca40_model.txt").read_text()
        return cls.from_text(data, source="ca40_model.txt")

    @classmethod
    def _build(cls, raw: dict[str, str]) -> "AtomModel":
        levels: dict[str, dict] = {}
        decays: dict[tuple[str, str], dict] = {}
        for key, value in raw.items():
            parts = key.split(".")
            if parts[0] == "level" and len(parts) == 3:
                levels.setdefault(parts[1], {})[parts[2]] = value
            elif parts[0] == "decay" and len(parts) == 4:
                decays.setdefault((parts[1], parts[2]), {})[parts[3]] = value
            else:
                raise ModelError(f"unrecognized model key {key!r}")

        level_objs = []
        for label, fields in levels.items():
            J = float(fields["J"]) if "J" in fields else _LABEL_J.get(label)
            if J is None:
                raise ModelError(f"level {label}: J not given and label not standard")
            level_objs.append(Level(label=label, J=J, gJ=float(fields["gJ"]),
                                    energy_rank=int(fields["energy_rank"])))

        channel_objs = []
        for (upper, lower), fields in decays.items():
            if "rate_2pi_mhz" in fields:
                rate = TWO_PI * 1e6 * float(fields["rate_2pi_mhz"])
            elif "lifetime_s" in fields:
                rate = 1.0 / float(fields["lifetime_s"])
            else:
                raise ModelError(f"decay {upper}->{lower}: "
                                 "needs rate_2pi_mhz or lifetime_s")
            channel_objs.append(DecayChannel(upper=upper, lower=lower, rate=rate,
                                             wavelength=int(fields["wavelength_nm"])))
        return cls(level_objs, channel_objs)


def total_decay_rate(label: str, model: AtomModel) -> float:
    """Sum of partial decay rates out of a level, rad/s (0 for ground states)."""
    model.level(label)
    return sum(ch.rate for ch in model.channels_from(label))


def branching_ratio(upper: str, lower: str, model: AtomModel) -> float:
    """Fraction of decays from `upper` that end in `lower` (0 if no channel)."""
    total = total_decay_rate(upper, model)
    if total == 0.0:
        raise ModelError(f"level {upper} has zero total decay rate")
    ch = model.channel(upper, lower)
    return 0.0 if ch is None else ch.rate / total


def zeeman_shift(state: ZeemanState, field: MagneticField) -> float:
    """Linear Zeeman shift mu_B * gJ * mJ * B / hbar, rad/s (signed)."""
    return MU_B_OVER_HBAR * state.level.gJ * state.mJ * field.tesla


@lru_cache(maxsize=None)
def _cg(two_jl: int, two_ml: int, q: int, two_ju: int, two_mu: int) -> float:
    # sympy import deferred: only generator construction needs it
    from sympy import Rational
    from sympy.physics.wigner import clebsch_gordan

    val = clebsch_gordan(Rational(two_jl, 2), 1, Rational(two_ju, 2),
                         Rational(two_ml, 2), q, Rational(two_mu, 2))
    return float(val)


def coupling_amplitude(lower: ZeemanState, upper: ZeemanState, q: int,
                       model: AtomModel | None = None) -> float:
    """Relative dipole amplitude <J_l m_l; 1 q | J_u m_u> between sublevels.

    Clebsch-Gordan convention: for every upper sublevel the squared
    amplitudes summed over lower sublevels and q equal 1.  Returns 0
    when the selection rule m_u = m_l + q is not met.
    """
    if q not in (-1, 0, 1):
        raise ModelError(f"polarization index q={q} not in (-1, 0, 1)")
    if model is not None and not model.dipole_connected(lower.level.label,
                                                        upper.level.label):
        raise ModelError(f"levels {lower.level.label} and {upper.level.label} "
                         "are not dipole-connected in this model")
    if round(upper.mJ - lower.mJ) != q:
        return 0.0
    return _cg(int(round(2 * lower.level.J)), int(round(2 * lower.mJ)), q,
               int(round(2 * upper.level.J)), int(round(2 * upper.mJ)))

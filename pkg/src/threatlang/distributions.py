"""Local time-to-compromise distributions."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt

from .exceptions import InvalidParameters

_LOGGER = logging.getLogger(__name__)


class Family(Enum):
    """Supported distribution families."""

    CONSTANT = "Constant"
    EXPONENTIAL = "Exponential"
    GAMMA = "Gamma"
    LOGNORMAL = "LogNormal"
    BERNOULLI = "Bernoulli"
    INFINITY = "Infinity"


_ARITY = {
    Family.CONSTANT: 1,
    Family.EXPONENTIAL: 1,
    Family.GAMMA: 2,
    Family.LOGNORMAL: 2,
    Family.BERNOULLI: 1,
    Family.INFINITY: 0,
}

# MAL-style named difficulty levels
_PRESETS = {
    "EasyAndCertain": (Family.EXPONENTIAL, (1.0,)),
    "HardAndCertain": (Family.EXPONENTIAL, (0.1,)),
    "VeryHardAndCertain": (Family.EXPONENTIAL, (0.01,)),
}

_DIST = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(([^()]*)\)\s*")


def format_number(value: float) -> str:
    """Shortest round-tripping text for a parameter value."""
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


@dataclass(frozen=True)
class TtcDistribution:
    """A distribution family with validated parameters; values are abstract days."""

    family: Family
    params: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        arity = _ARITY[self.family]
        if len(self.params) != arity:
            raise InvalidParameters(
                f"{self.family.value} takes {arity} parameter(s), got {len(self.params)}"
            )
        if any(math.isnan(p) or math.isinf(p) for p in self.params):
            raise InvalidParameters(f"{self.family.value} parameters must be finite")
        p = self.params
        match self.family:
            case Family.CONSTANT if p[0] < 0:
                raise InvalidParameters(f"Constant value must be >= 0, got {p[0]}")
            case Family.EXPONENTIAL if p[0] <= 0:
                raise InvalidParameters(f"Exponential rate must be > 0, got {p[0]}")
            case Family.GAMMA if p[0] <= 0 or p[1] <= 0:
                raise InvalidParameters(f"Gamma shape and scale must be > 0, got {p}")
            case Family.LOGNORMAL if p[1] <= 0:
                raise InvalidParameters(f"LogNormal sigma must be > 0, got {p[1]}")
            case Family.BERNOULLI if not 0.0 <= p[0] <= 1.0:
                raise InvalidParameters(f"Bernoulli probability must be in [0, 1], got {p[0]}")

    @classmethod
    def constant(cls, value: float) -> TtcDistribution:
        return cls(Family.CONSTANT, (float(value),))

    @classmethod
    def exponential(cls, rate: float) -> TtcDistribution:
        return cls(Family.EXPONENTIAL, (float(rate),))

    @classmethod
    def gamma(cls, shape: float, scale: float) -> TtcDistribution:
        return cls(Family.GAMMA, (float(shape), float(scale)))

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> TtcDistribution:
        return cls(Family.LOGNORMAL, (float(mu), float(sigma)))

    @classmethod
    def bernoulli(cls, p: float) -> TtcDistribution:
        return cls(Family.BERNOULLI, (float(p),))

    @classmethod
    def infinity(cls) -> TtcDistribution:
        return cls(Family.INFINITY)

    @classmethod
    def from_parts(cls, name: str, params: tuple[float, ...]) -> TtcDistribution:
        """Build from a family or preset name and its parameters.

        Raises:
            InvalidParameters: For an unknown family or out-of-domain parameters.
        """
        if name in _PRESETS:
            if params:
                raise InvalidParameters(f"{name} takes no parameters")
            family, params = _PRESETS[name]
            _LOGGER.debug("Expanding preset %s to %s %s", name, family.value, params)
            return cls(family, params)
        try:
            family = Family(name)
        except ValueError as err:
            known = ", ".join([f.value for f in Family] + list(_PRESETS))
            raise InvalidParameters(f"unknown distribution {name!r} (known: {known})") from err
        return cls(family, tuple(float(p) for p in params))

    @property
    def mean(self) -> float:
        """Expected value."""
        p = self.params
        match self.family:
            case Family.CONSTANT | Family.BERNOULLI:
                return p[0]
            case Family.EXPONENTIAL:
                return 1.0 / p[0]
            case Family.GAMMA:
                return p[0] * p[1]
            case Family.LOGNORMAL:
                return math.exp(p[0] + p[1] ** 2 / 2)
            case _:
                return math.inf

    @property
    def is_deterministic(self) -> bool:
        return self.family in (Family.CONSTANT, Family.INFINITY)

    def sample(self, rng: np.random.Generator, size: int) -> npt.NDArray[np.float64]:
        """Draw ``size`` values; Bernoulli draws are 1.0 for TRUE and 0.0 for FALSE."""
        p = self.params
        match self.family:
            case Family.CONSTANT:
                return np.full(size, p[0])
            case Family.INFINITY:
                return np.full(size, np.inf)
            case Family.EXPONENTIAL:
                return rng.exponential(1.0 / p[0], size)
            case Family.GAMMA:
                return rng.gamma(p[0], p[1], size)
            case Family.LOGNORMAL:
                return rng.lognormal(p[0], p[1], size)
            case _:
                return (rng.random(size) < p[0]).astype(np.float64)

    def __str__(self) -> str:
        return f"{self.family.value}({', '.join(format_number(p) for p in self.params)})"


def parse_distribution(text: str) -> TtcDistribution:
    """Parse DSL distribution syntax such as ``Gamma(2, 1.5)``.

    Raises:
        InvalidParameters: If the text is malformed or the parameters are invalid.
    """
    match = _DIST.fullmatch(text)
    if not match:
        raise InvalidParameters(f"malformed distribution {text!r}")
    name, body = match.groups()
    try:
        params = tuple(float(part) for part in body.split(",")) if body.strip() else ()
    except ValueError as err:
        raise InvalidParameters(f"malformed parameters in {text!r}") from err
    return TtcDistribution.from_parts(name, params)


def sample_local(d: TtcDistribution, rng: np.random.Generator) -> float | bool:
    """Draw one local value; Bernoulli yields a boolean enablement."""
    value = float(d.sample(rng, 1)[0])
    if d.family is Family.BERNOULLI:
        return value == 1.0
    return value


CONSTANT_ZERO = TtcDistribution.constant(0.0)

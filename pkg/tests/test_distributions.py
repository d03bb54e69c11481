"""Tests for local TTC distributions."""

import logging
import math

import numpy as np
import pytest

from threatlang.distributions import (
    Family,
    TtcDistribution,
    format_number,
    parse_distribution,
    sample_local,
)
from threatlang.exceptions import InvalidParameters


def test_constant_is_exact():
    rng = np.random.default_rng(0)
    d = TtcDistribution.constant(3)
    assert all(sample_local(d, rng) == 3.0 for _ in range(100))


def test_infinity():
    d = parse_distribution("Infinity()")
    assert d.is_deterministic
    assert d.mean == math.inf
    assert sample_local(d, np.random.default_rng(0)) == math.inf


def test_exponential_mean():
    """Test the sample mean against the analytic 1/rate."""
    samples = TtcDistribution.exponential(2.0).sample(np.random.default_rng(1), 100_000)
    assert samples.mean() == pytest.approx(0.5, abs=0.01)


def test_bernoulli_frequency():
    rng = np.random.default_rng(2)
    d = TtcDistribution.bernoulli(0.2)
    draws = [sample_local(d, rng) for _ in range(100_000)]
    assert all(isinstance(v, bool) for v in draws[:10])
    assert sum(draws) / len(draws) == pytest.approx(0.2, abs=0.005)


def test_gamma_and_lognormal_means():
    assert TtcDistribution.gamma(2, 1.5).mean == 3.0
    assert TtcDistribution.lognormal(0, 0.5).mean == pytest.approx(math.exp(0.125))


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("Gamma(2, 1.5)", TtcDistribution.gamma(2, 1.5)),
        ("Exponential(0.5)", TtcDistribution.exponential(0.5)),
        ("LogNormal(-1,0.25)", TtcDistribution.lognormal(-1, 0.25)),
        ("Constant(0)", TtcDistribution.constant(0)),
        ("EasyAndCertain()", TtcDistribution.exponential(1.0)),
        ("HardAndCertain()", TtcDistribution.exponential(0.1)),
        ("VeryHardAndCertain()", TtcDistribution.exponential(0.01)),
    ],
)
def test_parse_distribution(text: str, expected: TtcDistribution):
    assert parse_distribution(text) == expected


def test_preset_expansion_is_logged(caplog: pytest.LogCaptureFixture):
    with caplog.at_level(logging.DEBUG, logger="threatlang.distributions"):
        parse_distribution("HardAndCertain()")
    assert "Expanding preset HardAndCertain to Exponential" in caplog.text


def test_str_uses_dsl_syntax():
    assert str(TtcDistribution.gamma(2, 1.5)) == "Gamma(2, 1.5)"
    assert str(TtcDistribution.infinity()) == "Infinity()"
    assert parse_distribution(str(TtcDistribution.lognormal(0.1, 1e-05))).params == (0.1, 1e-05)


@pytest.mark.parametrize(
    "text",
    [
        "Exponential(0)",
        "Gamma(1)",
        "Constant(-1)",
        "LogNormal(0, 0)",
        "Bernoulli(1.5)",
        "Weibull(1)",
        "EasyAndCertain(2)",
        "Gamma(2",
        "Constant(nan)",
    ],
)
def test_invalid_distributions(text: str):
    """Test that bad parameters fail at construction time."""
    with pytest.raises(InvalidParameters):
        parse_distribution(text)


def test_family_values():
    assert Family("LogNormal") is Family.LOGNORMAL


def test_format_number():
    assert format_number(2.0) == "2"
    assert format_number(1.5) == "1.5"

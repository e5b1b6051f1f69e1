"""Scenario frame: price and emission trajectories plus stock-wide limits.

Trajectories are sampled at anchor years and interpolated linearly in
between; outside the anchors the nearest value holds.  Prices are stored in
ct/kWh as commonly tabulated, the carbon price in EUR/t, emission factors in
gCO2eq/kWh.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np


class ScenarioError(Exception):
    """Scenario document malformed or inconsistent."""


@dataclass(frozen=True)
class ScenarioFrame:
    years: tuple[int, ...]
    prices: dict[str, tuple[float, ...]]  # ct/kWh per carrier
    feed_in_tariff: tuple[float, ...]  # ct/kWh for exported electricity
    emission_factors: dict[str, tuple[float, ...]]  # gCO2eq/kWh per carrier
    co2_price: tuple[float, ...]  # EUR per tCO2eq
    renovation_rate_cap: float = 0.02  # share of stock per year
    conversion_rate_cap: float = 0.045
    max_parallel_retrofits: int = 6
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.years:
            raise ScenarioError("scenario needs at least one anchor year")
        if list(self.years) != sorted(set(self.years)):
            raise ScenarioError("anchor years must be strictly increasing")
        n = len(self.years)
        for name, series in list(self.prices.items()) + list(self.emission_factors.items()):
            if len(series) != n:
                raise ScenarioError(f"series {name!r} has {len(series)} values, expected {n}")
        for label, series in (("feed_in_tariff", self.feed_in_tariff),
                              ("co2_price", self.co2_price)):
            if len(series) != n:
                raise ScenarioError(f"{label} has {len(series)} values, expected {n}")
        if not 0.0 <= self.renovation_rate_cap <= 1.0:
            raise ScenarioError("renovation_rate_cap outside [0, 1]")
        if not 0.0 <= self.conversion_rate_cap <= 1.0:
            raise ScenarioError("conversion_rate_cap outside [0, 1]")
        if self.max_parallel_retrofits < 1:
            raise ScenarioError("max_parallel_retrofits must be >= 1")

    # -- interpolation ------------------------------------------------------

    def _interp(self, series: tuple[float, ...], year: float) -> float:
        return float(np.interp(year, self.years, series))

    def price_at(self, carrier: str, year: float) -> float:
        """Carrier price in ct/kWh at a year (clamped linear interpolation)."""
        try:
            series = self.prices[carrier]
        except KeyError:
            raise ScenarioError(f"no price series for carrier {carrier!r}") from None
        return self._interp(series, year)

    def emission_factor_at(self, carrier: str, year: float) -> float:
        """Carrier emission factor in gCO2eq/kWh at a year."""
        try:
            series = self.emission_factors[carrier]
        except KeyError:
            raise ScenarioError(f"no emission series for carrier {carrier!r}") from None
        return self._interp(series, year)

    def feed_in_at(self, year: float) -> float:
        return self._interp(self.feed_in_tariff, year)

    def co2_price_at(self, year: float) -> float:
        return self._interp(self.co2_price, year)

    def to_dict(self) -> dict:
        return {
            "meta": dict(self.meta),
            "years": list(self.years),
            "prices": {k: list(v) for k, v in sorted(self.prices.items())},
            "feed_in_tariff": list(self.feed_in_tariff),
            "emission_factors": {k: list(v) for k, v in sorted(self.emission_factors.items())},
            "co2_price": list(self.co2_price),
            "renovation_rate_cap": self.renovation_rate_cap,
            "conversion_rate_cap": self.conversion_rate_cap,
            "max_parallel_retrofits": self.max_parallel_retrofits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioFrame":
        try:
            return cls(
                years=tuple(int(y) for y in d["years"]),
                prices={str(k): tuple(float(x) for x in v) for k, v in d["prices"].items()},
                feed_in_tariff=tuple(float(x) for x in d["feed_in_tariff"]),
                emission_factors={str(k): tuple(float(x) for x in v)
                                  for k, v in d["emission_factors"].items()},
                co2_price=tuple(float(x) for x in d["co2_price"]),
                renovation_rate_cap=float(d.get("renovation_rate_cap", 0.02)),
                conversion_rate_cap=float(d.get("conversion_rate_cap", 0.045)),
                max_parallel_retrofits=int(d.get("max_parallel_retrofits", 6)),
                meta=dict(d.get("meta", {})),
            )
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from exc


def load_scenario(source) -> ScenarioFrame:
    """Read a scenario from a JSON path, file object, or string."""
    try:
        if isinstance(source, (str, os.PathLike)) and not str(source).lstrip().startswith("{"):
            with open(source, encoding="utf-8") as fh:
                doc = json.load(fh)
        elif isinstance(source, str):
            doc = json.loads(source)
        else:
            doc = json.load(source)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    return ScenarioFrame.from_dict(doc)


def save_scenario(frame: ScenarioFrame, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(frame.to_dict(), fh, sort_keys=True, indent=1)


def retrofit_budgets(frame: ScenarioFrame, n_buildings: int,
                     period_years: int) -> dict[str, int]:
    """Whole-measure budgets for one planning period.

    Rounding is down: a cap that yields less than one measure over the whole
    period allows none.
    """
    if n_buildings < 0 or period_years < 0:
        raise ValueError("counts must be non-negative")
    return {
        "renovation": math.floor(frame.renovation_rate_cap * n_buildings * period_years),
        "conversion": math.floor(frame.conversion_rate_cap * n_buildings * period_years),
    }


def cumulative_quota(rate_cap: float, n_buildings: int, years_elapsed: int) -> int:
    """Measures allowed within the first ``years_elapsed`` years of a period."""
    return math.floor(rate_cap * n_buildings * years_elapsed)


# ---------------------------------------------------------------------------
# Default scenario

_ANCHORS = (2023, 2025, 2030, 2035, 2040, 2045)


def default_scenario() -> ScenarioFrame:
    """Built-in price and emission outlook for 2023 through 2045."""
    return ScenarioFrame(
        years=_ANCHORS,
        prices={
            "electricity": (49.39, 40.66, 31.62, 25.40, 22.72, 23.59),
            "gas": (18.64, 13.94, 14.63, 15.41, 20.20, 27.68),
            "oil": (6.81, 9.35, 12.61, 15.42, 20.54, 24.44),
            "pellets": (5.51, 7.70, 10.97, 14.22, 16.44, 19.67),
            "woodchips": (4.20, 5.60, 8.10, 10.60, 12.40, 14.90),
            "heat_network": (13.50, 13.00, 14.20, 15.40, 16.70, 18.00),
        },
        feed_in_tariff=(8.0, 7.4, 6.6, 6.0, 5.4, 5.0),
        emission_factors={
            "electricity": (420.0, 368.0, 250.0, 160.0, 90.0, 37.5),
            "gas": (201.0, 201.0, 190.0, 140.0, 70.0, 10.0),
            "oil": (266.0, 266.0, 266.0, 266.0, 266.0, 266.0),
            "pellets": (25.0, 25.0, 25.0, 25.0, 25.0, 25.0),
            "woodchips": (20.0, 20.0, 20.0, 20.0, 20.0, 20.0),
            "heat_network": (180.0, 165.0, 130.0, 95.0, 60.0, 40.0),
        },
        co2_price=(80.0, 90.0, 130.0, 150.0, 190.0, 200.0),
        renovation_rate_cap=0.02,
        conversion_rate_cap=0.045,
        max_parallel_retrofits=6,
        meta={"id": "prices-2023-2045", "synthetic": True},
    )

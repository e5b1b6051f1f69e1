"""Technology and refurbishment catalog plus the cost algebra.

All monetary results are annual equivalents in EUR per year: one-time
payments (investment, dismantling, refurbishment) are spread with an annuity
factor so that operating costs and capital costs live on the same axis and
stage objectives stay comparable across differently long stages.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .twin import COMPONENTS, HEAT_VECTORS, Building, RefurbState

PRICED_CARRIERS = ("electricity", "gas", "oil", "pellets", "woodchips", "heat_network")
FREE_CARRIERS = ("solar", "ambient")
SEASONS = ("winter", "transition", "summer")

KIND_CONVERTER = "converter"
KIND_STORAGE = "storage"
KIND_CONNECTION = "connection"

# Share of a unit's embodied emissions booked at installation; the rest is
# booked when the unit is dismantled.
EMBODIED_INSTALL_SHARE = 0.8


class CatalogError(Exception):
    """The catalog document is malformed or breaks an invariant."""


@dataclass(frozen=True)
class TechnologySpec:
    """One installable plant technology.

    Sizes are kW of main output, except storage where size is kWh of
    capacity.  ``efficiency`` is main output per unit of carrier input and
    may be a per-season table (heat pumps).  For solar-driven techs the
    availability profile caps output and ``efficiency`` stays 1.
    """

    id: str
    name: str
    kind: str
    carrier: str | None
    output: str | None
    efficiency: float | dict[str, float] = 1.0
    byproduct: tuple[str, float] | None = None  # (vector, units per main output)
    capex_fix: float = 0.0  # EUR per installation event
    capex_var: float = 0.0  # EUR per kW (EUR per kWh for storage)
    opex_fixed: float = 0.0  # EUR per kW per year
    opex_var: float = 0.0  # EUR per kWh of main output
    lifetime: int = 20
    deconstruction: float = 0.0  # EUR per kW on removal
    embodied: float = 0.0  # kgCO2eq per kW, cradle to site plus disposal
    subsidy_rate: float = 0.0
    roof_area_per_kw: float = 0.0
    open_area_per_kw: float = 0.0
    min_size: float = 0.0
    max_size: float = math.inf
    requires_heat_network: bool = False
    charge_efficiency: float = 1.0
    discharge_efficiency: float = 1.0
    loss_per_hour: float = 0.0
    power_per_capacity: float = 1.0  # kW per kWh, storage only

    def efficiency_at(self, season: str) -> float:
        if isinstance(self.efficiency, dict):
            return self.efficiency[season]
        return self.efficiency

    def capex_total(self, size: float) -> float:
        return self.capex_fix + self.capex_var * size

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "name": self.name,
            "kind": self.kind,
            "carrier": self.carrier,
            "output": self.output,
            "efficiency": self.efficiency,
            "byproduct": list(self.byproduct) if self.byproduct else None,
            "capex_fix": self.capex_fix,
            "capex_var": self.capex_var,
            "opex_fixed": self.opex_fixed,
            "opex_var": self.opex_var,
            "lifetime": self.lifetime,
            "deconstruction": self.deconstruction,
            "embodied": self.embodied,
            "subsidy_rate": self.subsidy_rate,
            "roof_area_per_kw": self.roof_area_per_kw,
            "open_area_per_kw": self.open_area_per_kw,
            "min_size": self.min_size,
            "max_size": self.max_size if math.isfinite(self.max_size) else None,
            "requires_heat_network": self.requires_heat_network,
        }
        if self.kind == KIND_STORAGE:
            d.update({
                "charge_efficiency": self.charge_efficiency,
                "discharge_efficiency": self.discharge_efficiency,
                "loss_per_hour": self.loss_per_hour,
                "power_per_capacity": self.power_per_capacity,
            })
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TechnologySpec":
        eff = d.get("efficiency", 1.0)
        if isinstance(eff, dict):
            eff = {str(k): float(v) for k, v in eff.items()}
        else:
            eff = float(eff)
        byp = d.get("byproduct")
        max_size = d.get("max_size")
        return cls(
            id=str(d["id"]),
            name=str(d.get("name", d["id"])),
            kind=str(d["kind"]),
            carrier=d.get("carrier"),
            output=d.get("output"),
            efficiency=eff,
            byproduct=(str(byp[0]), float(byp[1])) if byp else None,
            capex_fix=float(d.get("capex_fix", 0.0)),
            capex_var=float(d.get("capex_var", 0.0)),
            opex_fixed=float(d.get("opex_fixed", 0.0)),
            opex_var=float(d.get("opex_var", 0.0)),
            lifetime=int(d.get("lifetime", 20)),
            deconstruction=float(d.get("deconstruction", 0.0)),
            embodied=float(d.get("embodied", 0.0)),
            subsidy_rate=float(d.get("subsidy_rate", 0.0)),
            roof_area_per_kw=float(d.get("roof_area_per_kw", 0.0)),
            open_area_per_kw=float(d.get("open_area_per_kw", 0.0)),
            min_size=float(d.get("min_size", 0.0)),
            max_size=math.inf if max_size is None else float(max_size),
            requires_heat_network=bool(d.get("requires_heat_network", False)),
            charge_efficiency=float(d.get("charge_efficiency", 1.0)),
            discharge_efficiency=float(d.get("discharge_efficiency", 1.0)),
            loss_per_hour=float(d.get("loss_per_hour", 0.0)),
            power_per_capacity=float(d.get("power_per_capacity", 1.0)),
        )


@dataclass(frozen=True)
class RefurbComponentSpec:
    """One envelope component that can be refurbished exactly once."""

    name: str
    cost_per_m2: float
    area_factor: float  # component area as a multiple of the roof footprint
    demand_factor: dict[str, float]  # per heat vector, multiplier once done
    lifetime: int
    embodied_per_m2: float  # kgCO2eq per m2

    def area(self, building: Building) -> float:
        return self.area_factor * building.roof_area

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "cost_per_m2": self.cost_per_m2,
            "area_factor": self.area_factor,
            "demand_factor": dict(self.demand_factor),
            "lifetime": self.lifetime,
            "embodied_per_m2": self.embodied_per_m2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RefurbComponentSpec":
        return cls(
            name=str(d["name"]),
            cost_per_m2=float(d["cost_per_m2"]),
            area_factor=float(d["area_factor"]),
            demand_factor={str(k): float(v) for k, v in d["demand_factor"].items()},
            lifetime=int(d["lifetime"]),
            embodied_per_m2=float(d.get("embodied_per_m2", 0.0)),
        )


@dataclass(frozen=True)
class Catalog:
    techs: dict[str, TechnologySpec]
    refurb: dict[str, RefurbComponentSpec]
    discount_rate: float = 0.03
    meta: dict = field(default_factory=dict)

    def tech(self, tech_id: str) -> TechnologySpec:
        try:
            return self.techs[tech_id]
        except KeyError:
            raise CatalogError(f"unknown technology {tech_id!r}") from None

    def techs_by_output(self, vector: str) -> list[TechnologySpec]:
        return [t for t in self.techs.values() if t.output == vector]

    def validate(self) -> None:
        for t in self.techs.values():
            if t.kind not in (KIND_CONVERTER, KIND_STORAGE, KIND_CONNECTION):
                raise CatalogError(f"{t.id}: unknown kind {t.kind!r}")
            if t.kind == KIND_CONVERTER:
                if t.carrier is None or t.output is None:
                    raise CatalogError(f"{t.id}: converter needs carrier and output")
                if t.carrier not in PRICED_CARRIERS + FREE_CARRIERS:
                    raise CatalogError(f"{t.id}: unknown carrier {t.carrier!r}")
            effs = t.efficiency.values() if isinstance(t.efficiency, dict) else [t.efficiency]
            if any(e <= 0 for e in effs):
                raise CatalogError(f"{t.id}: efficiency must be positive")
            if isinstance(t.efficiency, dict) and set(t.efficiency) != set(SEASONS):
                raise CatalogError(f"{t.id}: seasonal efficiency must cover {SEASONS}")
            if not 0.0 <= t.subsidy_rate <= 1.0:
                raise CatalogError(f"{t.id}: subsidy_rate outside [0, 1]")
            if t.lifetime <= 0:
                raise CatalogError(f"{t.id}: lifetime must be positive")
            if t.min_size < 0 or t.max_size < t.min_size:
                raise CatalogError(f"{t.id}: size bounds inverted")
            if min(t.capex_fix, t.capex_var, t.opex_fixed, t.deconstruction) < 0:
                raise CatalogError(f"{t.id}: negative cost entry")
        if set(self.refurb) != set(COMPONENTS):
            raise CatalogError(f"refurb catalog must define exactly {COMPONENTS}")
        for r in self.refurb.values():
            if r.cost_per_m2 < 0 or r.area_factor < 0 or r.lifetime <= 0:
                raise CatalogError(f"refurb {r.name}: bad numbers")
            for v, f in r.demand_factor.items():
                if v not in HEAT_VECTORS or not 0.0 < f <= 1.0:
                    raise CatalogError(f"refurb {r.name}: factor {v}={f} out of range")
        if not 0.0 <= self.discount_rate < 1.0:
            raise CatalogError("discount_rate outside [0, 1)")

    def to_dict(self) -> dict:
        return {
            "meta": dict(self.meta),
            "discount_rate": self.discount_rate,
            "technologies": [self.techs[k].to_dict() for k in sorted(self.techs)],
            "refurbishment": [self.refurb[k].to_dict() for k in sorted(self.refurb)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Catalog":
        techs = {t["id"]: TechnologySpec.from_dict(t) for t in d["technologies"]}
        refurb = {r["name"]: RefurbComponentSpec.from_dict(r) for r in d["refurbishment"]}
        cat = cls(
            techs=techs,
            refurb=refurb,
            discount_rate=float(d.get("discount_rate", 0.03)),
            meta=dict(d.get("meta", {})),
        )
        cat.validate()
        return cat


def load_catalog(source) -> Catalog:
    """Read a catalog from a JSON path, file object, or string."""
    try:
        if isinstance(source, (str, os.PathLike)) and not str(source).lstrip().startswith("{"):
            with open(source, encoding="utf-8") as fh:
                doc = json.load(fh)
        elif isinstance(source, str):
            doc = json.loads(source)
        else:
            doc = json.load(source)
        return Catalog.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CatalogError(f"malformed catalog: {exc}") from exc


def save_catalog(cat: Catalog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cat.to_dict(), fh, sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# Cost algebra


def annuity_factor(rate: float, years: float) -> float:
    """Annual payment per unit of present value over ``years`` at ``rate``."""
    if years <= 0:
        raise ValueError("annuity needs a positive horizon")
    if rate == 0.0:
        return 1.0 / years
    q = (1.0 + rate) ** years
    return rate * q / (q - 1.0)


def residual_value(capex_total: float, lifetime: float, remaining_years: float) -> float:
    """Straight-line book value of an asset with ``remaining_years`` left."""
    if lifetime <= 0:
        return 0.0
    frac = min(max(remaining_years, 0.0), lifetime) / lifetime
    return capex_total * frac


def opportunity_cost_of_dismantle(residual: float, deconstruction_cost: float) -> float:
    """Total penalty of removing a usable asset: lost value plus removal."""
    return residual + deconstruction_cost


@dataclass(frozen=True)
class CostBreakdown:
    """Objective components, each an annual equivalent in EUR per year.

    ``objective`` reproduces the solved objective: investment net of
    subsidies plus operation plus removal, minus the value still bound in
    kept plant.
    """

    capex: float = 0.0
    capex_subsidy: float = 0.0
    opex: float = 0.0
    deconstruction: float = 0.0
    residual_value: float = 0.0

    @property
    def objective(self) -> float:
        return (self.capex - self.capex_subsidy + self.opex
                + self.deconstruction - self.residual_value)

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(
            capex=self.capex + other.capex,
            capex_subsidy=self.capex_subsidy + other.capex_subsidy,
            opex=self.opex + other.opex,
            deconstruction=self.deconstruction + other.deconstruction,
            residual_value=self.residual_value + other.residual_value,
        )

    def scaled(self, factor: float) -> "CostBreakdown":
        return CostBreakdown(*(factor * getattr(self, f) for f in (
            "capex", "capex_subsidy", "opex", "deconstruction", "residual_value")))

    @classmethod
    def zero(cls) -> "CostBreakdown":
        return cls()

    def to_dict(self) -> dict:
        return {
            "capex": self.capex,
            "capex_subsidy": self.capex_subsidy,
            "opex": self.opex,
            "deconstruction": self.deconstruction,
            "residual_value": self.residual_value,
            "objective": self.objective,
        }


def objective_value(breakdown: CostBreakdown) -> float:
    return breakdown.objective


# ---------------------------------------------------------------------------
# Refurbishment variants

# Variant indices are bitmasks over COMPONENTS: bit 0 roof, 1 wall,
# 2 window, 3 cellar.  Variant 0 is the untouched envelope.


def variant_components(variant_index: int) -> tuple[str, ...]:
    if not 0 <= variant_index < 16:
        raise ValueError(f"variant index {variant_index} out of range")
    return tuple(name for bit, name in enumerate(COMPONENTS) if variant_index >> bit & 1)


def variant_heat_factor(cat: Catalog, variant_index: int, vector: str) -> float:
    """Demand multiplier of a variant relative to the untouched envelope."""
    factor = 1.0
    for name in variant_components(variant_index):
        factor *= cat.refurb[name].demand_factor.get(vector, 1.0)
    return factor


def variant_delta_factor(cat: Catalog, from_index: int, to_index: int, vector: str) -> float:
    """Demand multiplier of moving a building from one variant to a superset.

    Measured profiles describe the current state, so only the newly added
    components scale them.
    """
    if to_index & from_index != from_index:
        raise ValueError(f"variant {to_index} does not contain current state {from_index}")
    return (variant_heat_factor(cat, to_index, vector)
            / variant_heat_factor(cat, from_index, vector))


def variant_cost(cat: Catalog, building: Building, variant_index: int,
                 from_index: int | None = None) -> float:
    """One-time cost of the components the variant adds over the current state."""
    if from_index is None:
        from_index = building.refurb_state.variant_index
    added = variant_index & ~from_index
    if variant_index & from_index != from_index:
        raise ValueError(f"variant {variant_index} drops already refurbished components")
    return sum(cat.refurb[name].cost_per_m2 * cat.refurb[name].area(building)
               for name in variant_components(added))


def variant_embodied(cat: Catalog, building: Building, variant_index: int,
                     from_index: int | None = None) -> float:
    """Embodied kgCO2eq of the components the variant adds."""
    if from_index is None:
        from_index = building.refurb_state.variant_index
    added = variant_index & ~from_index
    return sum(cat.refurb[name].embodied_per_m2 * cat.refurb[name].area(building)
               for name in variant_components(added))


def effective_demand(building: Building, variant_index: int,
                     cat: Catalog) -> dict[str, np.ndarray]:
    """Demand profiles the building would show under a refurbishment variant.

    Heat vectors shrink by the factors of the newly added components;
    electricity and cooling are untouched.
    """
    out: dict[str, np.ndarray] = {}
    current = building.refurb_state.variant_index
    for vector, prof in building.demand.items():
        arr = prof.as_array()
        if vector in HEAT_VECTORS:
            arr = arr * variant_delta_factor(cat, current, variant_index, vector)
        out[vector] = arr
    return out


def apply_variant(state: RefurbState, variant_index: int) -> RefurbState:
    """Refurbishment state after executing a variant (monotone union)."""
    return RefurbState.from_index(state.variant_index | variant_index)


# ---------------------------------------------------------------------------
# Default catalog

_SYNTHETIC_NOTE = "synthetic reference data, calibrated for plausible relative economics"


def default_catalog() -> Catalog:
    """Built-in synthetic catalog used by fixtures, demos, and tests."""
    techs = [
        TechnologySpec(
            id="gas_boiler", name="Condensing gas boiler", kind=KIND_CONVERTER,
            carrier="gas", output="heat", efficiency=0.93,
            capex_fix=2500.0, capex_var=300.0, opex_fixed=6.0, opex_var=0.004,
            lifetime=25, deconstruction=30.0, embodied=60.0,
            min_size=4.0, max_size=500.0,
        ),
        TechnologySpec(
            id="oil_heating", name="Oil heating", kind=KIND_CONVERTER,
            carrier="oil", output="heat", efficiency=0.90,
            capex_fix=3000.0, capex_var=350.0, opex_fixed=7.0, opex_var=0.004,
            lifetime=25, deconstruction=35.0, embodied=70.0,
            min_size=4.0, max_size=500.0,
        ),
        TechnologySpec(
            id="pellet_heating", name="Wood pellet heating", kind=KIND_CONVERTER,
            carrier="pellets", output="heat", efficiency=0.88,
            capex_fix=9000.0, capex_var=450.0, opex_fixed=12.0, opex_var=0.006,
            lifetime=20, deconstruction=40.0, embodied=90.0, subsidy_rate=0.10,
            min_size=4.0, max_size=300.0,
        ),
        TechnologySpec(
            id="woodchip_heating", name="Wood chip heating", kind=KIND_CONVERTER,
            carrier="woodchips", output="heat", efficiency=0.85,
            capex_fix=16000.0, capex_var=400.0, opex_fixed=14.0, opex_var=0.006,
            lifetime=20, deconstruction=45.0, embodied=100.0, subsidy_rate=0.10,
            min_size=30.0, max_size=1000.0,
        ),
        TechnologySpec(
            id="direct_electric", name="Direct electric heating", kind=KIND_CONVERTER,
            carrier="electricity", output="heat", efficiency=1.0,
            capex_fix=500.0, capex_var=120.0, opex_fixed=1.0, opex_var=0.0,
            lifetime=30, deconstruction=10.0, embodied=15.0,
            min_size=1.0, max_size=300.0,
        ),
        TechnologySpec(
            id="air_source_heat_pump", name="Air source heat pump", kind=KIND_CONVERTER,
            carrier="electricity", output="heat",
            efficiency={"winter": 2.6, "transition": 3.2, "summer": 3.7},
            capex_fix=4000.0, capex_var=900.0, opex_fixed=12.0, opex_var=0.002,
            lifetime=25, deconstruction=40.0, embodied=120.0, subsidy_rate=0.25,
            min_size=3.0, max_size=200.0,
        ),
        TechnologySpec(
            id="ground_source_heat_pump", name="Ground source heat pump",
            kind=KIND_CONVERTER, carrier="electricity", output="heat",
            efficiency={"winter": 3.8, "transition": 4.0, "summer": 4.2},
            capex_fix=9000.0, capex_var=1400.0, opex_fixed=14.0, opex_var=0.002,
            lifetime=25, deconstruction=60.0, embodied=180.0, subsidy_rate=0.25,
            open_area_per_kw=8.0, min_size=5.0, max_size=150.0,
        ),
        TechnologySpec(
            id="solar_thermal", name="Solar thermal collectors", kind=KIND_CONVERTER,
            carrier="solar", output="heat", efficiency=1.0,
            capex_fix=2000.0, capex_var=600.0, opex_fixed=5.0, opex_var=0.0,
            lifetime=25, deconstruction=20.0, embodied=80.0, subsidy_rate=0.25,
            roof_area_per_kw=1.5, min_size=1.0, max_size=50.0,
        ),
        TechnologySpec(
            id="buffer_tank", name="Hot water buffer tank", kind=KIND_STORAGE,
            carrier=None, output="heat",
            capex_fix=800.0, capex_var=60.0, opex_fixed=0.5, opex_var=0.0,
            lifetime=25, deconstruction=5.0, embodied=10.0,
            min_size=2.0, max_size=2000.0,
            charge_efficiency=0.98, discharge_efficiency=0.98,
            loss_per_hour=0.004, power_per_capacity=0.5,
        ),
        TechnologySpec(
            id="fuel_cell", name="Fuel cell", kind=KIND_CONVERTER,
            carrier="gas", output="electricity", efficiency=0.38,
            byproduct=("heat", 0.9),
            capex_fix=15000.0, capex_var=3500.0, opex_fixed=40.0, opex_var=0.01,
            lifetime=15, deconstruction=80.0, embodied=250.0,
            min_size=1.0, max_size=20.0,
        ),
        TechnologySpec(
            id="micro_chp", name="Micro combined heat and power", kind=KIND_CONVERTER,
            carrier="gas", output="heat", efficiency=0.62,
            byproduct=("electricity", 0.45),
            capex_fix=12000.0, capex_var=1200.0, opex_fixed=25.0, opex_var=0.008,
            lifetime=18, deconstruction=60.0, embodied=200.0,
            min_size=5.0, max_size=100.0,
        ),
        TechnologySpec(
            id="heat_exchanger", name="Heat network transfer station",
            kind=KIND_CONVERTER, carrier="heat_network", output="heat", efficiency=0.98,
            capex_fix=3000.0, capex_var=120.0, opex_fixed=3.0, opex_var=0.0,
            lifetime=30, deconstruction=20.0, embodied=40.0,
            min_size=5.0, max_size=500.0, requires_heat_network=True,
        ),
        TechnologySpec(
            id="air_conditioner", name="Compression air conditioner",
            kind=KIND_CONVERTER, carrier="electricity", output="cooling", efficiency=3.0,
            capex_fix=1200.0, capex_var=350.0, opex_fixed=6.0, opex_var=0.002,
            lifetime=15, deconstruction=15.0, embodied=80.0,
            min_size=1.0, max_size=100.0,
        ),
        TechnologySpec(
            id="pv", name="Rooftop photovoltaics", kind=KIND_CONVERTER,
            carrier="solar", output="electricity", efficiency=1.0,
            capex_fix=1500.0, capex_var=1050.0, opex_fixed=12.0, opex_var=0.0,
            lifetime=25, deconstruction=25.0, embodied=500.0,
            roof_area_per_kw=5.0, min_size=1.0, max_size=100.0,
        ),
        TechnologySpec(
            id="battery", name="Home battery storage", kind=KIND_STORAGE,
            carrier=None, output="electricity",
            capex_fix=1000.0, capex_var=800.0, opex_fixed=2.0, opex_var=0.0,
            lifetime=15, deconstruction=10.0, embodied=100.0,
            min_size=2.0, max_size=100.0,
            charge_efficiency=0.95, discharge_efficiency=0.95,
            loss_per_hour=0.0002, power_per_capacity=1.0,
        ),
        TechnologySpec(
            id="grid_connection", name="Grid connection point", kind=KIND_CONNECTION,
            carrier=None, output="electricity",
            capex_fix=2000.0, capex_var=80.0, opex_fixed=1.0, opex_var=0.0,
            lifetime=40, deconstruction=20.0, embodied=30.0,
            min_size=4.0, max_size=1000.0,
        ),
    ]
    refurb = [
        RefurbComponentSpec(
            name="roof", cost_per_m2=100.0, area_factor=1.0,
            demand_factor={"space_heat": 0.85}, lifetime=40, embodied_per_m2=18.0,
        ),
        RefurbComponentSpec(
            name="wall", cost_per_m2=70.0, area_factor=2.5,
            demand_factor={"space_heat": 0.80}, lifetime=40, embodied_per_m2=12.0,
        ),
        RefurbComponentSpec(
            name="window", cost_per_m2=220.0, area_factor=0.4,
            demand_factor={"space_heat": 0.93}, lifetime=40, embodied_per_m2=25.0,
        ),
        RefurbComponentSpec(
            name="cellar", cost_per_m2=45.0, area_factor=1.0,
            demand_factor={"space_heat": 0.96}, lifetime=40, embodied_per_m2=8.0,
        ),
    ]
    cat = Catalog(
        techs={t.id: t for t in techs},
        refurb={r.name: r for r in refurb},
        discount_rate=0.03,
        meta={"id": "default", "synthetic": True, "note": _SYNTHETIC_NOTE},
    )
    cat.validate()
    return cat


def restrict_catalog(cat: Catalog, tech_ids: list[str]) -> Catalog:
    """Catalog reduced to a subset of technologies (tests, toy instances)."""
    return replace(cat, techs={tid: cat.tech(tid) for tid in tech_ids})

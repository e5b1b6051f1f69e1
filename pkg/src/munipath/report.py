"""Stock-level reporting on planned stages.

Turns per-building solutions into the aggregates a municipality actually
discusses: how many buildings run on what, how much energy crosses the
boundary, what it costs, and what it emits.  All exports are deterministic
byte for byte so results can be diffed between runs.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .catalog import Catalog, CostBreakdown
from .pathway import StageResult, TransformationPath
from .twin import Building, HEAT_VECTORS


@dataclass(frozen=True)
class StageReport:
    stage_year: int
    n_buildings: int
    n_solved: int
    refurb_frequency: dict[str, int]
    heating_frequency: dict[str, int]
    installed_power: dict[str, float]
    energy_balance: dict[str, float]
    cost_breakdown: CostBreakdown
    cost_by_domain: dict[str, float]
    emissions: dict[str, float]
    measures: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "stage_year": self.stage_year,
            "n_buildings": self.n_buildings,
            "n_solved": self.n_solved,
            "refurb_frequency": dict(sorted(self.refurb_frequency.items())),
            "heating_frequency": dict(sorted(self.heating_frequency.items())),
            "installed_power": dict(sorted(self.installed_power.items())),
            "energy_balance": dict(sorted(self.energy_balance.items())),
            "cost_breakdown": self.cost_breakdown.to_dict(),
            "cost_by_domain": dict(sorted(self.cost_by_domain.items())),
            "emissions": dict(sorted(self.emissions.items())),
            "measures": dict(sorted(self.measures.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StageReport":
        cb = {k: float(v) for k, v in data["cost_breakdown"].items() if k != "objective"}
        return cls(
            stage_year=int(data["stage_year"]),
            n_buildings=int(data["n_buildings"]),
            n_solved=int(data["n_solved"]),
            refurb_frequency={k: int(v) for k, v in data["refurb_frequency"].items()},
            heating_frequency={k: int(v) for k, v in data["heating_frequency"].items()},
            installed_power={k: float(v) for k, v in data["installed_power"].items()},
            energy_balance={k: float(v) for k, v in data["energy_balance"].items()},
            cost_breakdown=CostBreakdown(**cb),
            cost_by_domain={k: float(v) for k, v in data["cost_by_domain"].items()},
            emissions={k: float(v) for k, v in data["emissions"].items()},
            measures={k: int(v) for k, v in data["measures"].items()},
        )


def primary_heating(building: Building, cat: Catalog) -> str:
    """The technology carrying the building's heat supply.

    Largest heat-producing converter by size; ties resolve to the
    alphabetically first id so reports are stable.
    """
    best: tuple[float, str] | None = None
    for inst in building.installed:
        spec = cat.tech(inst.tech_id)
        if spec.output != "heat" or spec.kind != "converter":
            continue
        key = (-inst.size, inst.tech_id)
        if best is None or key < best:
            best = key
    return best[1] if best else "none"


def aggregate_stage(stage: StageResult, cat: Catalog) -> StageReport:
    """Roll one stage up to stock level.

    Stock composition comes from the committed twin; flows, costs, and
    emissions from the per-building solutions (unsolved buildings carry
    no flows).
    """
    twin = stage.twin_after
    refurb: dict[str, int] = {}
    heating: dict[str, int] = {}
    power: dict[str, float] = {}
    for b in twin.buildings:
        for comp in b.refurb_state.components():
            refurb[comp] = refurb.get(comp, 0) + 1
        tech = primary_heating(b, cat)
        heating[tech] = heating.get(tech, 0) + 1
        for inst in b.installed:
            power[inst.tech_id] = power.get(inst.tech_id, 0.0) + inst.size

    balance: dict[str, float] = {}
    total = CostBreakdown.zero()
    by_domain: dict[str, float] = {}
    emissions: dict[str, float] = {}
    pv_total = 0.0
    export_total = 0.0
    for bid in sorted(stage.solutions):
        sol = stage.solutions[bid]
        for carrier, kwh in sol.imports.items():
            balance[f"import_{carrier}"] = balance.get(f"import_{carrier}", 0.0) + kwh
        export_total += sol.export
        pv_total += sol.pv_generation
        for vector, kwh in sol.demand_after.items():
            balance[f"demand_{vector}"] = balance.get(f"demand_{vector}", 0.0) + kwh
        total = total + sol.breakdown
        for dom, part in sol.breakdown_by_domain.items():
            by_domain[dom] = by_domain.get(dom, 0.0) + part.objective
        for scope, kg in sol.emissions.items():
            emissions[scope] = emissions.get(scope, 0.0) + kg
    if emissions:
        # re-derive the total from the summed scopes so the published
        # numbers close exactly
        emissions["total"] = (emissions.get("scope1", 0.0)
                              + emissions.get("scope2", 0.0)
                              + emissions.get("scope3", 0.0))
    balance["export_electricity"] = export_total
    balance["pv_generation"] = pv_total
    balance["pv_self_consumption"] = (
        (pv_total - export_total) / pv_total if pv_total > 1e-9 else 0.0)

    measures: dict[str, int] = {}
    for mm in stage.measures:
        measures[mm.kind] = measures.get(mm.kind, 0) + 1
        if mm.mandatory:
            measures["mandatory"] = measures.get("mandatory", 0) + 1

    return StageReport(
        stage_year=stage.target_year,
        n_buildings=len(twin.buildings),
        n_solved=len(stage.solutions),
        refurb_frequency=refurb,
        heating_frequency=heating,
        installed_power=power,
        energy_balance=balance,
        cost_breakdown=total,
        cost_by_domain=by_domain,
        emissions=emissions,
        measures=measures,
    )


def pathway_deltas(path: TransformationPath, cat: Catalog) -> list[dict]:
    """Stage-over-stage movement of cost and emissions."""
    reports = [aggregate_stage(st, cat) for st in path.stages]
    out: list[dict] = []
    prev = None
    for rep in reports:
        row = {
            "stage_year": rep.stage_year,
            "annual_cost": rep.cost_breakdown.objective,
            "annual_emissions": rep.emissions.get("total", 0.0),
        }
        if prev is not None:
            row["cost_delta"] = row["annual_cost"] - prev["annual_cost"]
            row["emissions_delta"] = row["annual_emissions"] - prev["annual_emissions"]
        out.append(row)
        prev = row
    return out


def export_csv(reports: list[StageReport], sink=None) -> str:
    """Long-format table: stage_year, metric, key, value.

    Row order is fixed (stage, then metric, then key) and floats use
    their shortest round-trip form, so equal inputs give equal bytes.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage_year", "metric", "key", "value"])
    for rep in sorted(reports, key=lambda r: r.stage_year):
        d = rep.to_dict()
        writer.writerow([rep.stage_year, "buildings", "total", rep.n_buildings])
        writer.writerow([rep.stage_year, "buildings", "solved", rep.n_solved])
        for metric in ("refurb_frequency", "heating_frequency", "installed_power",
                       "energy_balance", "cost_breakdown", "cost_by_domain",
                       "emissions", "measures"):
            for key in sorted(d[metric]):
                writer.writerow([rep.stage_year, metric, key, d[metric][key]])
    text = buf.getvalue()
    if sink is not None:
        _write_text(sink, text)
    return text


def export_geojson(stage: StageResult, cat: Catalog, sink=None) -> str:
    """RFC 7946 FeatureCollection of the stage's building stock.

    One Point per building with its committed state and, where solved,
    the stage's cost and emission outcome.
    """
    features = []
    grid = stage.twin_after.grid
    for b in sorted(stage.twin_after.buildings, key=lambda b: b.id):
        heat_demand = sum(
            b.annual_demand(v, grid) for v in HEAT_VECTORS if v in b.demand)
        props = {
            "id": b.id,
            "building_type": b.building_type,
            "construction_year": b.construction_year,
            "refurbished": sorted(b.refurb_state.components()),
            "primary_heating": primary_heating(b, cat),
            "installed": [[i.tech_id, i.size, i.install_year]
                          for i in sorted(b.installed,
                                          key=lambda i: (i.tech_id, i.install_year))],
            "heat_demand_kwh": round(heat_demand, 3),
        }
        sol = stage.solutions.get(b.id)
        if sol is not None:
            props["annual_cost_eur"] = round(sol.breakdown.objective, 2)
            props["annual_emissions_kg"] = round(sol.emissions["total"], 2)
        if b.id in stage.infeasible:
            props["infeasible"] = stage.infeasible[b.id]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point",
                         "coordinates": [b.location[0], b.location[1]]},
            "properties": props,
        })
    doc = {
        "type": "FeatureCollection",
        "features": features,
        "stage_year": stage.target_year,
    }
    text = json.dumps(doc, sort_keys=True, indent=1)
    if sink is not None:
        _write_text(sink, text)
    return text


def _write_text(sink, text: str) -> None:
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w", encoding="utf-8") as fh:
            fh.write(text)


def path_document(path_obj: TransformationPath, cat: Catalog) -> dict:
    """The self-contained result document: plan plus per-stage report and
    map data, so downstream exports never need to re-solve anything."""
    doc = path_obj.to_dict()
    for st, st_dict in zip(path_obj.stages, doc["stages"]):
        st_dict["report"] = aggregate_stage(st, cat).to_dict()
        st_dict["geojson"] = json.loads(export_geojson(st, cat))
    return doc


def reports_from_document(doc: dict) -> list[StageReport]:
    return [StageReport.from_dict(sd["report"]) for sd in doc["stages"]]


def geojson_from_document(doc: dict, stage_year: int) -> str:
    for sd in doc["stages"]:
        if sd["target_year"] == stage_year:
            return json.dumps(sd["geojson"], sort_keys=True, indent=1)
    raise KeyError(stage_year)

"""
Aggregated reports, CSV and GeoJSON exports
===========================================

Turns a finished pathway into stock-level numbers: technology census,
energy balances, cost and emission accounting, and per-building maps.
"""

import json
import tempfile
from pathlib import Path

from munipath import (
    default_catalog,
    default_scenario,
    make_fixture_twin,
    plan_pathway,
)
from munipath.report import (
    aggregate_stage,
    export_csv,
    export_geojson,
    path_document,
    pathway_deltas,
)

cat = default_catalog()
scen = default_scenario()
twin = make_fixture_twin(6, seed=5)
path = plan_pathway(twin, cat, scen, [2023, 2030, 2040],
                    params={"mip_gap": 1e-4})

# one report per stage: counts, installed power, flows, costs, emissions
reports = [aggregate_stage(st, cat) for st in path.stages]
for rep in reports:
    imports = sum(v for k, v in rep.energy_balance.items()
                  if k.startswith("import_"))
    print(f"=== {rep.stage_year} ===")
    print("  heating census:", dict(sorted(rep.heating_frequency.items())))
    print(f"  energy: imports {imports:,.0f} kWh/a, "
          f"pv {rep.energy_balance['pv_generation']:,.0f}, "
          f"export {rep.energy_balance['export_electricity']:,.0f}")
    print(f"  cost {rep.cost_breakdown.objective:,.0f} EUR/a, "
          f"emissions {rep.emissions['total'] / 1000:,.1f} t/a")

# stage-over-stage deltas show the direction of travel
for row in pathway_deltas(path, cat)[1:]:
    print(f"{row['stage_year']}: emissions {row['emissions_delta']:+,.0f} kg/a, "
          f"cost {row['cost_delta']:+,.0f} EUR/a")

# the long-form CSV holds every reported number, one metric per row
csv_text = export_csv(reports)
print(f"\nCSV: {len(csv_text.splitlines())} rows, first three:")
for line in csv_text.splitlines()[:3]:
    print("  " + line)

# GeoJSON maps the final stock; properties carry the per-building story
geo = json.loads(export_geojson(path.stages[-1], cat))
feat = geo["features"][0]
print(f"\nGeoJSON: {len(geo['features'])} features; "
      f"{feat['properties']['id']} -> "
      f"{feat['properties']['primary_heating']}, "
      f"{feat['properties']['annual_cost_eur']:,.0f} EUR/a")

# the self-contained document bundles the path with all exports
out = Path(tempfile.mkdtemp(prefix="munipath_demo_"))
doc = path_document(path, cat)
(out / "path.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
(out / "report.csv").write_text(csv_text)
for st in path.stages:
    (out / f"stock_{st.target_year}.geojson").write_text(export_geojson(st, cat))
print(f"\nwrote {sorted(p.name for p in out.iterdir())} to {out}")

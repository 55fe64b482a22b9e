"""N-1 contingency ranking on the authored overload fixture.

Losing L3 pushes the whole transfer onto L1, so it should head the list at
every penetration level.

Run:  python3 demos/n1_ranking.py
"""

from gridplan import load_fixture
from gridplan.security import rank_contingencies

case = load_fixture("overload3")
report = rank_contingencies(case, penetration_levels=[0.0, 0.5, 1.0])

for level in report.levels:
    print(f"\npenetration {level.penetration:.1f}  secure={level.secure}")
    for rank, r in enumerate(level.results, 1):
        s = r.score
        print(f"  {rank}. {r.contingency.id:<12} total {s.total:>10.3f}  "
              f"(V {s.voltage_term:.3f}, thermal {s.thermal_term:.3f}, margin {s.margin_term:.3f})  {s.status}")

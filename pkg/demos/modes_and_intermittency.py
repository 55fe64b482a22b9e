"""Electromechanical modes of the 9-bus fixture and a short intermittency study.

Run:  python3 demos/modes_and_intermittency.py
"""

from gridplan import load_fixture
from gridplan.small_signal import intermittency_study, linearize, modes

case = load_fixture("ninebus")
ms = modes(linearize(case))
print(f"zero mode(s): {len(ms.zero_modes)}")
for mode in ms.oscillatory:
    print(f"  {mode.frequency:.3f} Hz  zeta {mode.damping_ratio:.4f}  {mode.band.value}")

# wind output drops or rises by 30% of rating at three operating points
report = intermittency_study(case, "W1", event_sizes=[0.3], operating_points=[0.2, 0.5, 0.8])
print(f"\n{'level':>5} {'dir':>5} {'f_min':>8} {'f_max':>8} {'v_min':>6} {'zeta_min':>8}  flagged")
for r in report.records:
    if not r.feasible:
        print(f"{r.penetration:>5.1f} {r.direction:>5}  skipped: {r.reason}")
        continue
    print(f"{r.penetration:>5.1f} {r.direction:>5} {r.f_min:8.4f} {r.f_max:8.4f} {r.v_min:6.3f} {r.min_damping:8.4f}  {r.flagged}")

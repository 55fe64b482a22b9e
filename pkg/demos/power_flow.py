"""Newton-Raphson and DC power flow on the 9-bus fixture, plus a loadability margin.

Run:  python3 demos/power_flow.py
"""

import numpy as np

from gridplan import load_fixture
from gridplan.steady_state import DC_LINEAR, check_limits, loadability_margin, solve_power_flow

case = load_fixture("ninebus")

ac = solve_power_flow(case)
dc = solve_power_flow(case, DC_LINEAR)
print(f"AC converged in {ac.iterations} iterations, max mismatch {ac.max_mismatch:.2e} pu")

print("\nbus   |V| (pu)   angle AC (deg)   angle DC (deg)")
for i, bus in enumerate(case.buses):
    print(f"{bus.id:>3}   {ac.vm[i]:.4f}    {np.degrees(ac.va[i]):>10.3f}       {np.degrees(dc.va[i]):>10.3f}")

rep = check_limits(case, ac)
print(f"\nvoltage violations: {len(rep.voltage_violations)}   thermal violations: {len(rep.thermal_violations)}   worst loading {rep.worst_loading:.2f}")

# uniform load growth until Newton stops converging
m = loadability_margin(case)
print(f"loadability margin: {m} (lambda* = {m.lambda_star:.3f})")

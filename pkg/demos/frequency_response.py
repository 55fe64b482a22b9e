"""Loss of generation on the 9-bus fixture: inertial, primary and secondary response.

Three runs of the same 100 MW loss: no controls, governors only, then
governors with AGC. The inertial ROCOF is compared with the aggregate
swing-equation estimate.

Run:  python3 demos/frequency_response.py
"""

from gridplan import load_fixture
from gridplan.dynamics import (ControlOptions, DisturbanceEvent, EventKind, frequency_metrics,
                               rocof_reference, simulate)

case = load_fixture("ninebus")
trip = DisturbanceEvent(1.0, EventKind.POWER_STEP, "G2", -100.0)
machines = [(m.h, m.s_rated) for m in case.machines]
print(f"aggregate estimate of initial ROCOF: {rocof_reference(machines, 60.0, -100.0):.4f} Hz/s")

runs = {
    "inertia only": ControlOptions(),
    "governors": ControlOptions(governors=True),
    "governors + AGC": ControlOptions(governors=True, agc=True),
}
for label, controls in runs.items():
    horizon = 300.0 if controls.agc else 30.0
    trace = simulate(case, None, [trip], horizon, 0.01, controls)
    m = frequency_metrics(trace)
    settle = "still falling" if m.settling_frequency is None else f"{m.settling_frequency:.4f} Hz"
    print(f"{label:<16} ROCOF {m.initial_rocof:+.4f} Hz/s  nadir {m.nadir:.4f} Hz at {m.nadir_time:.2f} s  settles {settle}")

"""The extra quantum under amplification.

A red-pump pulse maps <b^dag b> onto the cavity with gain G-; a blue-pump
pulse maps <b^dag b> + 1 with gain G+. Dividing each cavity occupancy by its
displacement gain and subtracting leaves one quantum, whatever the
mechanical displacement. A linear detector would not see it.
"""
import math

import numpy as np

from optoqubit.gaussdyn import GaussianState, PumpSchedule, monte_carlo_propagate, propagate_moments
from optoqubit.params import default_device
from optoqubit.protocol import (ExperimentPlan, GainCalibration, calibrate_gains, detector_comparison,
                                extract_vacuum)

params, baths = default_device()
plan = ExperimentPlan(g=2 * math.pi * 198e3, theta=math.pi, alpha_sq_grid=tuple(np.arange(0, 26, 5.0)))

gains = calibrate_gains(plan, params, baths)
print(f"G- = {gains.G_minus:.3f} (lossless 1),  G+ = {gains.G_plus:.3f} (lossless {math.sinh(math.pi / 2) ** 2:.3f})")

fast = extract_vacuum(plan, gains, params, baths)
ideal = extract_vacuum(plan, GainCalibration.lossless(plan.theta), params, baths, mode="lossless")
print(f"initial mechanical occupancy after pre-cooling: {fast.n_m_initial:.3f}")
print(f"apparent cavity heating: {fast.n_int_apparent:.3f}")
print(" |alpha_m|^2   <n>+/G+   <n>-/G-   difference   lossless")
for row in zip(fast.alpha_sq, fast.referred_plus, fast.referred_minus, fast.difference, ideal.difference):
    print(" {:8.1f} {:10.3f} {:9.3f} {:11.3f} {:10.6f}".format(*row))

# Wigner sampling: the +1 only appears when vacuum noise is sampled
s0 = GaussianState.from_thermal(0.0, fast.n_m_initial)
sched = PumpSchedule.single(math.pi, plan.g, "squeezer", n_p=plan.n_p)
ref = propagate_moments(s0, sched, baths, params).final
for vacuum in (True, False):
    mc = monte_carlo_propagate(s0, sched, baths, params, n_samples=10_000, seed=5, vacuum_noise=vacuum)
    print(f"blue pump, vacuum noise {vacuum!s:5s}: <a^dag a> = {mc.estimates['occupancy_c']:.3f} "
          f"+- {mc.stderr['occupancy_c']:.3f} (moments {ref.occupancy_c:.3f})")

print("commutators (c, m) -> asymmetry seen by number / linear detector")
for dc, dm in ((0, 0), (0, 1), (1, 0), (1, 1)):
    a = detector_comparison(math.pi, n_b=0.25, delta_c=dc, delta_m=dm)
    print(f"  ({dc}, {dm}) -> {a.number:.0f} / {a.linear:.0f}")

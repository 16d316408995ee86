"""Vacuum Rabi oscillations and photon-number tomography.

A qubit swapped into resonance with the cavity oscillates at 2J sqrt(n+1) for
each Fock component. The single-photon trace calibrates the readout; the
ground-state trace then reads out an unknown cavity distribution.
"""
import math
import warnings

import numpy as np

from optoqubit.jcsim import RabiTrace, ReadoutModel, vacuum_rabi_trace
from optoqubit.params import default_device
from optoqubit.tomo import (BasisTraces, PhotonDistribution, compare_families, default_control,
                            infer_distribution)

params, _ = default_device()
tau = np.linspace(0, 200e-9, 201)

# single photon: qubit prepared in |e> with 75 % fidelity, cavity empty
rabi = params.replace(T1_qubit=160e-9, T1_cavity=110e-9)
readout = ReadoutModel(contrast=0.51, prep_efficiency=0.75)
trace = vacuum_rabi_trace([1.0], default_control(), rabi, tau, qubit="e", readout=readout, n_max=4)
print(f"vacuum Rabi period       {math.pi / params.J * 1e9:.1f} ns")
print(f"reported visibility      {np.ptp(trace.p_e):.3f}")

# detector protocol: qubit in |g>, cavity in a weak thermal state
readout = ReadoutModel(contrast=0.51)
tau = np.linspace(0, 200e-9, 101)
basis = BasisTraces(params, tau, 12, readout=readout)
rng = np.random.default_rng(1)
truth = PhotonDistribution.thermal(0.02)
clean = basis.predict(truth.populations(12))
fits = []
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    for _ in range(100):
        noisy = RabiTrace(tau, clean + 0.01 * rng.standard_normal(tau.size), readout, sigma=0.01)
        fits.append(infer_distribution(noisy, "thermal", params, basis=basis))
est = np.array([f.total_occupancy for f in fits])
print(f"n = 0.02 over 100 traces {est.mean():.4f} +- {est.std() / 10:.4f} "
      f"(single-trace stderr {np.median([f.total_stderr for f in fits]):.4f})")

cmp = compare_families(RabiTrace(tau, clean, readout, sigma=0.01), params, basis=basis)
print(f"thermal vs coherent      distinguishable={cmp.distinguishable} ({cmp.reason})")

# at higher occupancy the shapes separate
basis = BasisTraces(params, tau, 50, readout=readout)
for dist in (PhotonDistribution.thermal(2.5), PhotonDistribution.coherent(2.5)):
    t = RabiTrace(tau, basis.predict(dist.populations(50)), readout, sigma=0.01)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cmp = compare_families(t, params, basis=basis)
    print(f"{dist.family:9s} 2.5 -> preferred {cmp.preferred} (delta chi2 {cmp.delta_chi2:.0f})")

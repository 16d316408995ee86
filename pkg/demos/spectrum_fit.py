"""Joint fit of cavity reflection spectra under a red-detuned pump.

Three spectra with slightly different pump frequencies share one model. The
fit recovers the cavity linewidths, the mechanical damping and the
pump-enhanced coupling; at strong coupling the response splits into two
normal modes separated by 2g.
"""
import math

import numpy as np

from optoqubit.params import default_device
from optoqubit.specfit import ReflectionModel, Spectrum, fit_reflection, normal_mode_splitting

TWO_PI = 2 * math.pi
params, _ = default_device()
truth = ReflectionModel.from_params(params, g=TWO_PI * 120e3)
freq = truth.omega_c + TWO_PI * np.linspace(-1.5e6, 1.5e6, 2001)
rng = np.random.default_rng(0)
spectra = [Spectrum.synthetic(truth, freq, truth.red_pump() + TWO_PI * d, noise=1e-3, rng=rng)
           for d in (-100e3, 0.0, 100e3)]

start = truth.replace(kappa_int=1.2 * truth.kappa_int, kappa_ext=0.8 * truth.kappa_ext, g=0.7 * truth.g,
                      Gamma_m=2 * truth.Gamma_m)
fit = fit_reflection(spectra, start)
print(f"converged after {fit.lm.n_iter} iterations ({fit.lm.message})")
for name in fit.names:
    got, err, want = getattr(fit.model, name), fit.stderr[name], getattr(truth, name)
    print(f"{name:10s} {got / TWO_PI:16.6f} +- {err / TWO_PI:9.3g} Hz   (truth {want / TWO_PI:.6f})")

strong = truth.replace(g=TWO_PI * 242e3)
print(f"normal-mode splitting / 2g at g/2pi = 242 kHz: {normal_mode_splitting(strong) / (2 * strong.g):.4f}")

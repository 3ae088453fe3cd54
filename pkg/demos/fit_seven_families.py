"""
Fitting the seven envelope families to one region
=================================================

Draw a synthetic cortex-like region, quantise it to 8 bits the way a
B-mode image would, and fit every family.  The Rayleigh family is the
Nakagami family at m = 1, so on pre-Rayleigh data (m < 1) the Nakagami
fit should beat it clearly.
"""

import numpy as np

from renal_speckle import Nakagami, fit_all, sample
from renal_speckle.region_analysis import empirical_histogram, goodness_of_fit_sse

# 20 000 pixels of Nakagami speckle, rounded and clamped like real pixels
truth = Nakagami(m=0.8, omega=2500.0)
pixels = np.clip(np.rint(sample(truth, 20_000, seed=1)), 0, 255)
values = pixels[pixels > 0]
hist = empirical_histogram(values)

print(f"generator: {truth}")
print(f"{'family':<10} {'log-lik':>12} {'SSE':>10}  parameters")
for fit in fit_all(values):
    if not fit.ok:
        print(f"{fit.family:<10} failed: {fit.reason}")
        continue
    params = ", ".join(f"{k}={v:.4g}" for k, v in fit.params.as_dict().items())
    sse = goodness_of_fit_sse(hist, fit.params)
    print(f"{fit.family:<10} {fit.log_likelihood:12.1f} {sse:10.2e}  {params}  {' '.join(fit.flags)}")

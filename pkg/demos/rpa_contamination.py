"""Spotting an unreliable probe.

A probeset of ten probes is measured on twenty arrays plus a reference.
One probe is ten times noisier than the rest.  RPA estimates a variance
per probe while it estimates the shared differential signal, so the noisy
probe shows up as the one with the largest variance and gets little weight
in the summary.
"""

import numpy as np

from genedep.datagen import gen_probeset_data, probeset_params
from genedep.rpa import differential_matrix, peca_summarize, rpa_fit

d_true, tau2, affinity, bad = probeset_params(seed=7, n_arrays=20, n_probes=10)
expr, truth = gen_probeset_data(7, 20, 10, d_true, tau2, affinity)

# log-ratios against the reference array cancel the probe affinities
m = differential_matrix(expr, reference=truth.payload["reference"])
fit = rpa_fit(m)

print("planted noisy probe:", m.probe_ids[bad[0]])
print("largest estimated variance:", m.probe_ids[int(np.argmax(fit.tau2))])
for pid, t in zip(m.probe_ids, fit.tau2):
    print(f"  {pid}  tau2 = {t:6.2f}")

# the reference array's own noise shifts every log-ratio of a probe by the
# same amount, so compare the estimates after removing their means
def centred_rms(est):
    return np.sqrt(np.mean(((est - est.mean()) - (d_true - d_true.mean())) ** 2))


print(f"centred RMS error: rpa {centred_rms(fit.d):.3f}, peca {centred_rms(peca_summarize(m)):.3f}")

# a single probeset is noisy; average over fifty of them
errs = []
for seed in range(50):
    d_true, tau2, affinity, _ = probeset_params(seed, 20, 10)
    e, t = gen_probeset_data(seed, 20, 10, d_true, tau2, affinity)
    mm = differential_matrix(e, reference=t.payload["reference"])
    errs.append((centred_rms(rpa_fit(mm).d), centred_rms(peca_summarize(mm))))
print("mean over 50 probesets: rpa {:.3f}, peca {:.3f}".format(*np.mean(errs, axis=0)))
print("log posterior trace is non-decreasing:", bool(np.all(np.diff(fit.trace) >= -1e-9)))

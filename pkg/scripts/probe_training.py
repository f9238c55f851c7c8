"""Development probe: desk-scale training quality vs the criterion bars."""

import sys
import time

import numpy as np

from chestsim import channel as chan, estimators as est, nn, ofdm

AUGMENTED = sys.argv[1] == "aug" if len(sys.argv) > 1 else False
ITERS = int(sys.argv[2]) if len(sys.argv) > 2 else 800

spec = ofdm.GridSpec()
pattern = ofdm.build_pilot_pattern_80211p(spec)

cfg = nn.TrainingConfig(
    epochs=1, iterations_per_epoch=ITERS, batch_size=24,
    hidden_size=16, seed=11, augmented=AUGMENTED, lr_schedule="cosine",
)
t0 = time.time()
model = nn.train(cfg, spec=spec, progress=True)
print(f"trained {'aug' if AUGMENTED else 'base'} in {time.time()-t0:.0f}s", flush=True)
nn.save_model(model, f"scripts/probe_{'aug' if AUGMENTED else 'base'}_{ITERS}.rnn")

# evaluate at key scenarios
rng = np.random.default_rng(99)
nd = spec.n_cells - pattern.n_pilots
for v_kmh, snr in ((150, 15.0), (105, 15.0), (195, 15.0), (50, 5.0), (300, 30.0), (300, 15.0)):
    prof = chan.ChannelProfile(velocity=chan.kmh_to_mps(v_kmh))
    nv = ofdm.snr_to_noise_var(snr)
    mses, ls_mses = [], []
    for i in range(150):
        r = chan.realize(prof, spec, seed=(5, i))
        bits = rng.integers(0, 2, nd * 2)
        x = ofdm.assemble_frame(ofdm.map_bits(bits, "qpsk"), pattern, spec)
        y = ofdm.apply_channel(x, r.freq_response, nv, rng)
        h_hat = nn.estimate(model, y, pattern, spec)
        mses.append(est.mse(h_hat, r.freq_response))
        hp = est.ls_pilot_estimate(y[pattern.mask], pattern.pilot_values)
        ls_mses.append(est.mse(est.ls_interpolate(hp, pattern), r.freq_response))
    print(f"v={v_kmh:3d} snr={snr:4.1f}: rnn {np.mean(mses):.5f}  ls {np.mean(ls_mses):.5f}", flush=True)

"""
How wide should the depth Gaussian be?
======================================

Sweep sigma over powers of two on cluttered scenes with depth priors that
are off by about two voxels.  Very narrow kernels miss voxels when the
depth is wrong, very wide ones bleed features behind occluders.  Takes
about half a minute.
"""
import numpy as np

from voxfuse.pipeline import ABLATION_SIGMAS, ablation_sequence, sigma_sweep

rows = []
for seed in range(12):
    seq, rig = ablation_sequence(seed)
    sweep = sigma_sweep(seq.frames, rig, ABLATION_SIGMAS, depth_noise=0.4, seed=seed)
    rows.append([sweep[s] for s in ABLATION_SIGMAS])
acc = 100 * np.nanmean(rows, axis=0)
spread = 100 * np.nanstd(rows, axis=0)

print("sigma  accuracy  (std over 12 scenes)")
for s, a, e in zip(ABLATION_SIGMAS, acc, spread):
    print(f"{s:>5}  {a:7.2f}%  ({e:.2f})  " + "#" * int(round((a - acc.min()) * 4)))
best = ABLATION_SIGMAS[int(np.argmax(acc))]
print(f"\nbest sigma: {best} voxels; sigma=256 is {acc.max() - acc[-1]:.2f} points below it")

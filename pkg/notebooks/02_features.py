# 02_features.py
# Kinematic channels, the 47/100 global-feature catalogues and the FS matrix.

# %%
import numpy as np

from sigforge.features import build_fs_matrix, catalogue, derive_channels, extract_features, zscore_normalize
from sigforge.signals import SynthConfig, generate_synthetic_dataset

ds = generate_synthetic_dataset(SynthConfig(num_writers=2, genuine_per_writer=10, skilled_per_writer=2, seed=1))
rec = ds.writers["w001"]

# %% channels derived from one sample
ch = derive_channels(rec.genuine[0])
print("points", ch.x.size, "| speed mean %.1f units/s" % ch.speed.mean(), "| max curvature %.4f" % ch.curvature.max())

# %% the catalogues and their manifest
c47, c100 = catalogue(47), catalogue(100)
print(c47.size, c100.size, c100.names[:6], "...", c100.names[-3:])
print(c100.manifest().splitlines()[-1])

# %% a writer's FS matrix: features as rows, samples as columns
fs = build_fs_matrix([extract_features(s, c100) for s in rec.genuine], "w001")
print("FS matrix", fs.values.shape)
z = zscore_normalize(fs)
print("row means after z-scoring ~0:", np.allclose(z.values.mean(axis=1), 0))
stable = np.argsort(z.normalization.std / (np.abs(z.normalization.mean) + 1e-9))[:5]
print("most stable features for this writer:", [c100.names[i] for i in stable])

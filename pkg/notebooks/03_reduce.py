# 03_reduce.py
# Writer-dependent reduction: k-means over feature rows, keep the max-MAD member per cluster.

# %%
import numpy as np

from sigforge.features import build_fs_matrix, catalogue, extract_features
from sigforge.reduce import fit_writer_reduction, kmeans, mad, mad_scores
from sigforge.signals import SynthConfig, generate_synthetic_dataset

# %% k-means on a toy set
pts = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], dtype=float)
res = kmeans(pts, 2, seed=0)
print("partition", sorted(sorted(b) for b in res.partition()), "inertia", res.inertia)
print("MAD examples:", mad([1, 2, 3, 4]), mad([0, 10]))

# %% 100 -> 80 and 100 -> 50 for one synthetic writer
ds = generate_synthetic_dataset(SynthConfig(num_writers=1, genuine_per_writer=20, skilled_per_writer=1, seed=4))
cat = catalogue(100)
fs = build_fs_matrix([extract_features(s, cat) for s in ds.writers["w001"].genuine], "w001")
for k in (80, 50):
    red = fit_writer_reduction(fs, k, seed=0)
    print(f"k={k}: kept {red.index_set.k} features, inertia {red.assignment.inertia:.2f}, "
          f"{red.assignment.iterations} iterations")

# %% every representative carries its cluster's largest MAD
red = fit_writer_reduction(fs, 50, seed=0)
normed = (fs.values - fs.values.mean(axis=1, keepdims=True))
std = fs.values.std(axis=1, keepdims=True)
normed = np.where(std < 1e-12, 0.0, normed / np.where(std < 1e-12, 1.0, std))
scores = mad_scores(normed)
labels = red.assignment.labels
ok = all(scores[i] == scores[labels == labels[i]].max() for i in red.index_set.indices)
print("max-MAD rule holds:", ok)
print(red.index_set.to_text().splitlines()[0])

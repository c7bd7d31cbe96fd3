# 01_signals.py
# Synthetic signatures, the canonical text format and the SVC-2004 reader.

# %%
import numpy as np

from sigforge.signals import (
    Label,
    SynthConfig,
    generate_synthetic_dataset,
    parse_canonical,
    parse_svc,
    write_canonical,
    write_svc,
)

# %% a small seeded dataset: 3 writers, 6 genuine + 4 skilled each
ds = generate_synthetic_dataset(SynthConfig(num_writers=3, genuine_per_writer=6, skilled_per_writer=4,
                                            points_per_signature=64, seed=7))
for wid, rec in ds.writers.items():
    print(wid, len(rec.genuine), "genuine,", len(rec.skilled_forgeries), "skilled")

# %% one sample in the canonical format
sample = ds.writers["w001"].genuine[0]
text = write_canonical(sample)
print(text.decode().splitlines()[0])
print("\n".join(text.decode().splitlines()[1:4]))
assert parse_canonical(text) == sample

# %% skilled forgeries stay close to the genuine trajectory, other writers do not
def xy(s):
    a = s.arrays()
    return np.stack([a["x"], a["y"]], axis=1).astype(float)

g0 = xy(ds.writers["w001"].genuine[0])
for name, other in [("genuine", ds.writers["w001"].genuine[1]),
                    ("skilled", ds.writers["w001"].skilled_forgeries[0]),
                    ("other writer", ds.writers["w002"].genuine[0])]:
    print(f"{name:13s} mean point distance {np.mean(np.linalg.norm(xy(other) - g0, axis=1)):8.1f}")

# %% SVC-2004 rows: x y t button azimuth altitude pressure; clock glitches are rebased
raw = write_svc(sample).decode().splitlines()
raw[3], raw[4] = raw[4], raw[3]  # swap two rows so time runs backwards once
back = parse_svc("\n".join(raw), "w001", "glitch", Label.GENUINE)
ts = [p.t for p in back.points]
print("times strictly increasing after rebasing:", all(b > a for a, b in zip(ts, ts[1:])))

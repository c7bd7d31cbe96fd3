# 05_protocol.py
# Few-shot protocol on a small synthetic set: splits, EER, AER and the report files.

# %%
import tempfile
from pathlib import Path

from sigforge.metrics import compute_curves, compute_eer
from sigforge.protocol import ProtocolConfig, format_summary, run_protocol, split_trial, write_report
from sigforge.signals import SynthConfig, generate_synthetic_dataset

# %% EER on a hand example
print("EER", compute_eer(compute_curves([0.8, 0.4], [0.6, 0.2])))

# %% one split: g own genuine + g random forgeries for training
ds = generate_synthetic_dataset(SynthConfig(num_writers=4, genuine_per_writer=12, skilled_per_writer=8,
                                            points_per_signature=64, seed=5))
s = split_trial(ds, "w001", 5, 0, seed=0)
print(len(s.train_genuine), "train genuine,", len(s.train_random_forgery), "train random,",
      len(s.test_genuine), "test genuine,", len(s.test_skilled), "test skilled,", len(s.test_random), "test random")

# %% a quick run (few epochs; this is a demo, not the acceptance configuration)
cfg = ProtocolConfig(genuine_train_counts=(1, 5, 10), trials=1, k_reduced=20, epochs=30, seed=0)
rep = run_protocol(ds, cfg)
for g in cfg.genuine_train_counts:
    print(f"g={g:2d} skilled EER {rep.mean_eer(g, 'skilled'):.3f} random EER {rep.mean_eer(g, 'random'):.3f} "
          f"AER {rep.aggregate(g, 'aer').mean:.3f}")
print(format_summary(rep).splitlines()[-2:])

with tempfile.TemporaryDirectory() as tmp:
    print([p.name for p in write_report(rep, Path(tmp))])

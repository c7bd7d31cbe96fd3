# 06_cli.py
# Driving the pipeline through the `sigforge` command line.

# %%
import subprocess
import sys
import tempfile
from pathlib import Path


def sigforge(*args, cwd):
    proc = subprocess.run([sys.executable, "-m", "sigforge.cli", *args], cwd=cwd, capture_output=True, text=True)
    print("$ sigforge", " ".join(args), "->", proc.returncode)
    return proc


with tempfile.TemporaryDirectory() as tmp:
    cfg = Path(tmp, "run.cfg")
    cfg.write_text("seed = 7\nk_reduced = 10\nepochs = 5\ntrials = 1\ngenuine_train_counts = 1,5\n")
    sigforge("synth", "--output_dir", "ds", "--writers", "3", "--genuine", "8", "--skilled", "4", "--seed", "7",
             cwd=tmp)
    sigforge("extract", "--config", "run.cfg", "--output_dir", "feat", "--dataset_path", "ds", cwd=tmp)
    sigforge("reduce", "--config", "run.cfg", "--output_dir", "red", "--dataset_path", "ds", cwd=tmp)
    sigforge("train", "--config", "run.cfg", "--output_dir", "models", "--dataset_path", "ds", "--g", "5", cwd=tmp)
    sigforge("evaluate", "--config", "run.cfg", "--output_dir", "eval", "--dataset_path", "ds", cwd=tmp)
    print(Path(tmp, "eval", "summary.tsv").read_text().splitlines()[-1])
    print(sorted(p.name for p in Path(tmp, "models").iterdir())[:3])
    print("unknown subcommand exit code:", sigforge("bogus", cwd=tmp).returncode)

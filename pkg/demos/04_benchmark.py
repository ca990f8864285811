"""Benchmark plain vs. guided sampling and sweep the guidance weight.

Uses the command line for the heavy lifting; the same steps are available
from Python through guidedflow.evalbench.
"""
import json
import subprocess
import tempfile
from pathlib import Path

out = Path(tempfile.mkdtemp())
cfg = out / "config.json"
cfg.write_text(json.dumps({"maze": "medium", "demo_count": 300, "epochs": 150,
                           "episodes": 50, "repeats": 3}))


def run(*args):
    subprocess.run(["guidedflow", *args, "--config", str(cfg)], check=True)


run("gen-demos", "--out", str(out / "demos.pfdm"))
run("train", "--demos", str(out / "demos.pfdm"), "--out", str(out / "model.pfck"))
run("build-field", "--demos", str(out / "demos.pfdm"), "--out", str(out / "field.pfpf"))

art = ["--checkpoint", str(out / "model.pfck"), "--field", str(out / "field.pfpf")]
run("eval", *art, "--policy", "fmp", "--out", str(out / "fmp.json"))
run("eval", *art, "--policy", "pf2mp", "--lambda", "0.8", "--out", str(out / "pf2mp.json"))
run("ablate", *art, "--lambdas", "0.01,0.4,0.8,5", "--out", str(out / "ablation.json"))

report = json.loads((out / "ablation.json").read_text())
for lam, r in zip(report["lambdas"], report["reports"]):
    print(lam, r["success_rate"]["mean"], r["collision_rate"]["mean"])
print("artifacts in", out)

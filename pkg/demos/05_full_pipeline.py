# End-to-end pipeline on a synthetic cohort: generate -> select ->
# evaluate -> consolidated report.
#
# Mirrors the CLI flow (`omicsreg synth/select/evaluate/report`) through
# the library API. Uses reduced repeats and a small grid to stay quick;
# drop the overrides for the full 10x5 protocol.

import tempfile
from pathlib import Path

from omicsreg import PipelineConfig, Scenario
from omicsreg.pipeline import run_evaluate, run_report, run_select, run_synth
from omicsreg.synthetic import SyntheticSpec

workdir = Path(tempfile.mkdtemp(prefix="omicsreg_pipeline_"))
features = workdir / "features"
results = workdir / "results"

spec = SyntheticSpec(n_samples=69, n_features_per_block=30, n_informative=5, noise_sd=0.1, seed=42)
run_synth(spec, features)
print("cohort written to", features)

config = PipelineConfig(
    seed=42,
    n_repeats=2,  # full protocol: 10
    grids={"linear": {"C": [1.0, 10.0, 100.0], "epsilon": [0.01, 0.1]}},
)

selection = run_select(config, features, Scenario.ALL, "X_cnt", results)
print("selection ranking written to", selection)

for scenario in (Scenario.R_DELTA, Scenario.ALL):
    written = run_evaluate(
        config, features, scenario, "X_cnt", "linear", results, n_features_list=[5, 10, 15]
    )
    print(f"evaluated {scenario.key}: sweep at {written['sweep']}")

report = run_report(results)
print("\nconsolidated summary:\n")
print((results / "summary.md").read_text())

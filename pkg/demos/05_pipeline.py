"""
End to end
==========

Stratified 4-fold run: train the segmenter per fold, pull bottleneck features,
select with FSR or FSL on the training cases only, then classify.  Scaled
down here to finish in a few minutes; the CLI equivalent is

    echolatent pipeline run --config config.json --out results/
"""
import sys
import tempfile

from echolatent.pipeline import ExperimentConfig, emit_report, run_experiment

cfg = ExperimentConfig.from_dict({
    "n_cases": 24,
    "phantom": {"frames": 8, "height": 32, "width": 32},
    "train": {"epochs": 4, "batch_size": 2},
    "variants": [["NONE", "RFC"], ["FSR", "RFC"], ["FSL", "RFC"], ["FSL", "SVMC"]],
})
out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp()
report = run_experiment(cfg, out_dir=out)
emit_report(report, out)
print(open(f"{out}/report.md").read())
print("artifacts in", out)

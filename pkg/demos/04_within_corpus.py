"""
Within-corpus cross-validation
==============================

Fixed seeded splits, a held-out dev set per fold for choosing the best
epoch, and metrics on the accented class averaged over folds and repetitions.
Narrow conv layers and 3 folds keep this to well under a minute.
"""

import tempfile

from pitchaccent.harness import CorpusBundle, ExperimentConfig, format_summary_grid, make_cv_splits, run_within
from pitchaccent.synthetic import SyntheticSpec, generate_synthetic_corpus

syn = generate_synthetic_corpus(SyntheticSpec(n_words=900, seed=4, name="clear"), tempfile.mkdtemp())
bundle = CorpusBundle.from_manifest(syn.manifest_path)

splits = make_cv_splits(len(bundle.corpus), k=3, seed=0)
for s in splits:
    print(f"fold {s.fold_id}: train {len(s.train)}  dev {len(s.dev)}  test {len(s.test)}")

cfg = ExperimentConfig(target="clear", mode="acoustic", conv_channels=32, folds=3, repetitions=1, seed=0)
report = run_within(cfg, {"clear": bundle}, splits=splits)
print(report.summary_line())
for r in report.rows:
    print(f"  fold {r.fold}: acc {r.metrics.accuracy:.1f}  best epoch {r.best_epoch}")

print(format_summary_grid({("clear", "acoustic", "clear"): report}))

"""Cross-validation, cross-corpus and ALL-setting experiment protocols."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .corpus import Corpus, Label, compute_s_max, corpus_matrices, extract_tracks, load_manifest
from .embeddings import DEFAULT_STOPWORDS, EmbeddingTable, corpus_lexical_inputs, stopword_mask
from .model import AcousticConfig, LexicalConfig, LexicoAcousticModel, build_model, canonical_mode

log = logging.getLogger(__name__)

PROTOCOLS = ("within", "cross", "all")
RESULT_COLUMNS = ("protocol", "source", "target", "mode", "fold", "rep", "accuracy", "precision",
                  "recall", "f1", "stopword_acc", "tp", "fp", "fn", "tn")


class TrainingDiverged(RuntimeError):
    pass


# -- data ---------------------------------------------------------------------

@dataclass
class CorpusBundle:
    """A corpus with its per-utterance feature tracks."""

    corpus: Corpus
    tracks: dict

    @property
    def name(self) -> str:
        return self.corpus.name

    @classmethod
    def from_manifest(cls, path, name=None) -> "CorpusBundle":
        corpus = load_manifest(path, name)
        return cls(corpus, extract_tracks(corpus))


@dataclass
class WordData:
    """Model-ready arrays for a set of words; ``ids`` index the source corpus."""

    matrices: np.ndarray | None
    lexical: np.ndarray | None
    labels: np.ndarray
    stopwords: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "WordData":
        idx = np.asarray(idx, dtype=np.int64)
        take = lambda a: None if a is None else a[idx]
        return WordData(take(self.matrices), take(self.lexical), self.labels[idx], self.stopwords[idx],
                        self.ids[idx])

    @staticmethod
    def concat(parts) -> "WordData":
        cat = lambda name: (None if getattr(parts[0], name) is None
                            else np.concatenate([getattr(p, name) for p in parts]))
        return WordData(cat("matrices"), cat("lexical"), cat("labels"), cat("stopwords"), cat("ids"))


def prepare_words(bundle: CorpusBundle, s_max: int | None, table: EmbeddingTable | None = None,
                  n_words: int = 1, stopwords=DEFAULT_STOPWORDS, id_offset: int = 0) -> WordData:
    corpus = bundle.corpus
    mats = corpus_matrices(corpus, bundle.tracks, s_max) if s_max is not None else None
    lex = corpus_lexical_inputs(corpus, table, n_words) if table is not None else None
    return WordData(mats, lex, corpus.labels(), stopword_mask(corpus, stopwords),
                    np.arange(len(corpus), dtype=np.int64) + id_offset)


# -- splits -------------------------------------------------------------------

@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    train: np.ndarray
    dev: np.ndarray
    test: np.ndarray

    def check(self, n_words: int | None = None) -> None:
        sets = [set(self.train.tolist()), set(self.dev.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise AssertionError(f"fold {self.fold_id}: train/dev/test overlap")
        if n_words is not None and len(sets[0] | sets[1] | sets[2]) != n_words:
            raise AssertionError(f"fold {self.fold_id}: split does not cover the corpus")


def dev_count(pool_size: int, dev_size: int = 1000) -> int:
    # never let the dev set swallow more than half of the training pool
    return min(dev_size, pool_size // 2)


def make_cv_splits(corpus, k: int = 10, seed: int = 0, dev_size: int = 1000) -> list:
    """Seeded k-fold partition of word ids with a held-out dev set per fold."""
    n = corpus if isinstance(corpus, int) else len(corpus)
    if n <= 2 * k:
        raise ValueError(f"corpus of {n} words too small for {k}-fold splits")
    order = np.random.default_rng(seed).permutation(n)
    splits = []
    for f, test in enumerate(np.array_split(order, k)):
        in_test = np.zeros(n, dtype=bool)
        in_test[test] = True
        pool = order[~in_test[order]]
        nd = dev_count(len(pool), dev_size)
        splits.append(FoldSplit(f, np.sort(pool[nd:]), np.sort(pool[:nd]), np.sort(test)))
    return splits


def save_splits(path, splits) -> None:
    payload = [{"fold": s.fold_id, "train": s.train.tolist(), "dev": s.dev.tolist(),
                "test": s.test.tolist()} for s in splits]
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_splits(path) -> list:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [FoldSplit(p["fold"], np.array(p["train"], dtype=np.int64), np.array(p["dev"], dtype=np.int64),
                      np.array(p["test"], dtype=np.int64)) for p in payload]


# -- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class FoldMetrics:
    """Percentages on the Accented class plus the confusion counts behind them."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    stopword_accuracy: float | None
    tp: int
    fp: int
    fn: int
    tn: int


def _pct(num, den) -> float:
    return 100.0 * num / den if den else 0.0


def harmonic_mean(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def compute_metrics(predictions, gold, stopword_mask=None) -> FoldMetrics:
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ValueError(f"{len(pred)} predictions for {len(gold)} gold labels")
    acc = int(Label.ACCENTED)
    tp = int(np.sum((pred == acc) & (gold == acc)))
    fp = int(np.sum((pred == acc) & (gold != acc)))
    fn = int(np.sum((pred != acc) & (gold == acc)))
    tn = int(len(gold) - tp - fp - fn)
    precision, recall = _pct(tp, tp + fp), _pct(tp, tp + fn)
    stop_acc = None
    if stopword_mask is not None:
        mask = np.asarray(stopword_mask, dtype=bool)
        if mask.shape != gold.shape:
            raise ValueError("stopword mask length mismatch")
        if mask.any():
            stop_acc = _pct(int(np.sum(pred[mask] == gold[mask])), int(mask.sum()))
    return FoldMetrics(_pct(tp + tn, len(gold)), precision, recall, harmonic_mean(precision, recall),
                       stop_acc, tp, fp, fn, tn)


@dataclass(frozen=True)
class FoldResult:
    protocol: str
    source: str
    target: str
    mode: str
    fold: int
    rep: int
    metrics: FoldMetrics
    best_epoch: int = -1

    def row(self) -> dict:
        m = self.metrics
        return {"protocol": self.protocol, "source": self.source, "target": self.target, "mode": self.mode,
                "fold": self.fold, "rep": self.rep, "accuracy": m.accuracy, "precision": m.precision,
                "recall": m.recall, "f1": m.f1,
                "stopword_acc": "" if m.stopword_accuracy is None else m.stopword_accuracy,
                "tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn}


@dataclass
class MetricsReport:
    """Means over folds x repetitions. ``f1`` is the harmonic mean of the
    reported precision and recall; ``mean_fold_f1`` averages per-fold F1."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    stopword_accuracy: float | None
    mean_fold_f1: float
    rows: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, rows) -> "MetricsReport":
        if not rows:
            raise ValueError("no fold results to aggregate")
        ms = [r.metrics for r in rows]
        mean = lambda xs: float(np.mean(xs))
        stops = [m.stopword_accuracy for m in ms if m.stopword_accuracy is not None]
        p, r = mean([m.precision for m in ms]), mean([m.recall for m in ms])
        return cls(mean([m.accuracy for m in ms]), p, r, harmonic_mean(p, r), mean(stops) if stops else None,
                   mean([m.f1 for m in ms]), list(rows))

    def summary_line(self) -> str:
        stop = "n/a" if self.stopword_accuracy is None else f"{self.stopword_accuracy:.1f}"
        return (f"acc {self.accuracy:.1f}  P {self.precision:.1f}  R {self.recall:.1f}  "
                f"F1 {self.f1:.1f}  stopword acc {stop}")


def write_results(path, rows, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if new:
            writer.writeheader()
        for r in rows:
            writer.writerow(r.row())


def read_results(path) -> list:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            stop = rec["stopword_acc"]
            m = FoldMetrics(float(rec["accuracy"]), float(rec["precision"]), float(rec["recall"]),
                            float(rec["f1"]), float(stop) if stop else None,
                            int(rec["tp"]), int(rec["fp"]), int(rec["fn"]), int(rec["tn"]))
            rows.append(FoldResult(rec["protocol"], rec["source"], rec["target"], rec["mode"],
                                   int(rec["fold"]), int(rec["rep"]), m))
    return rows


def format_summary_grid(reports: dict) -> str:
    """Train-by-test accuracy grid; ``reports`` maps (source, mode, target) to a report."""
    targets = sorted({t for _, _, t in reports})
    sources = sorted({s for s, _, _ in reports})
    modes = [m for m in ("acoustic", "acoustic+embs", "embs_only") if any(k[1] == m for k in reports)]
    width = max([len("Train \\ Test")] + [len(m) + 2 for m in modes] + [len(s) for s in sources])
    lines = ["Train \\ Test".ljust(width) + "".join(f"{t:>10}" for t in targets)]
    for s in sources:
        lines.append(s)
        for m in modes:
            cells = []
            for t in targets:
                rep = reports.get((s, m, t))
                cells.append(f"{rep.accuracy:>10.1f}" if rep else f"{'-':>10}")
            lines.append(("  " + m).ljust(width) + "".join(cells))
    return "\n".join(lines) + "\n"


# -- training -----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    protocol: str = "within"
    target: str = ""
    sources: tuple = ()
    mode: str = "acoustic"
    n_words: int = 1
    bottleneck_n: int = 10
    epochs: int = 20
    repetitions: int = 5
    folds: int = 10
    dev_size: int = 1000
    batch_size: int = 32
    lr: float = 1e-3
    l2_acoustic: float = 1e-4
    l2_lexical: float = 1e-4
    dropout_acoustic: float = 0.2
    dropout_lexical: float = 0.8
    conv_channels: int = 100
    depthwise_conv2: bool = False
    seed: int = 0
    split_seed: int | None = None
    float32: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        self.mode = canonical_mode(self.mode)
        self.sources = tuple(self.sources)

    @property
    def splits_seed(self) -> int:
        return self.seed if self.split_seed is None else self.split_seed

    @property
    def uses_acoustic(self) -> bool:
        return self.mode != "embs_only"

    @property
    def uses_lexical(self) -> bool:
        return self.mode != "acoustic"


@dataclass
class TrainResult:
    params: dict
    best_epoch: int
    dev_accuracy: list
    train_loss: list


def _job_rng(config: ExperimentConfig, rep: int, fold: int) -> np.random.Generator:
    # repetition seed = base seed + repetition index; fold keeps jobs independent
    return np.random.default_rng(np.random.SeedSequence([config.seed + rep, fold]))


def make_model(config: ExperimentConfig, s_max: int | None, embed_dim: int | None,
               rng: np.random.Generator) -> LexicoAcousticModel:
    acoustic = lexical = None
    if config.uses_acoustic:
        acoustic = AcousticConfig(s_max=s_max, conv1_channels=config.conv_channels,
                                  conv2_channels=config.conv_channels, dropout_p=config.dropout_acoustic,
                                  l2_lambda=config.l2_acoustic, depthwise_conv2=config.depthwise_conv2)
    if config.uses_lexical:
        lexical = LexicalConfig(embed_dim=embed_dim, n_words=config.n_words, bottleneck_n=config.bottleneck_n,
                                input_dropout_p=config.dropout_lexical, l2_lambda=config.l2_lexical)
    dtype = np.float32 if config.float32 else np.float64
    return build_model(acoustic, lexical, config.mode, rng, dtype)


def _inputs(model: LexicoAcousticModel, data: WordData):
    return (data.matrices if model.uses_acoustic else None,
            data.lexical if model.uses_lexical else None)


def evaluate(model: LexicoAcousticModel, data: WordData) -> np.ndarray:
    return model.predict(*_inputs(model, data))


def train_fold(model: LexicoAcousticModel, train: WordData, dev: WordData, epochs: int = 20,
               batch_size: int = 32, rng=None, adam: nn.AdamState | None = None) -> TrainResult:
    """Adam over shuffled mini-batches, keeping the epoch with the best dev accuracy.

    Ties keep the earliest epoch. Parameters of ``model`` are left at the
    best checkpoint on return.
    """
    if len(train) == 0 or len(dev) == 0:
        raise ValueError("train and dev sets must be non-empty")
    rng = np.random.default_rng(0) if rng is None else rng
    adam = nn.AdamState() if adam is None else adam
    mats, lex = _inputs(model, train)
    best, best_acc, best_epoch = None, -1.0, -1
    history, losses = [], []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            loss, grads = model.loss_and_grads(None if mats is None else mats[idx],
                                               None if lex is None else lex[idx],
                                               train.labels[idx], train=True, rng=rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            nn.adam_step(model.params, grads, adam)
            total += loss * len(idx)
        for name, p in model.params.items():
            if not np.all(np.isfinite(p)):
                raise TrainingDiverged(f"non-finite values in {name} after epoch {epoch}")
        acc = float(np.mean(evaluate(model, dev) == dev.labels))
        history.append(acc)
        losses.append(total / len(train))
        log.debug("epoch %d loss %.4f dev acc %.4f", epoch, losses[-1], acc)
        if acc > best_acc:
            best, best_acc, best_epoch = model.copy_params(), acc, epoch
    model.params = best
    return TrainResult(best, best_epoch, history, losses)


@dataclass
class _Job:
    config: ExperimentConfig
    rep: int
    fold: int
    train: WordData
    dev: WordData
    tests: list  # [(fold_id, WordData)]
    s_max: int | None
    embed_dim: int | None
    protocol: str
    source: str
    target: str


def _run_job(job: _Job) -> list:
    cfg = job.config
    test_ids = np.concatenate([t.ids for _, t in job.tests])
    if np.intersect1d(test_ids, job.train.ids).size or np.intersect1d(test_ids, job.dev.ids).size:
        raise AssertionError(f"{job.protocol} fold {job.fold} rep {job.rep}: test words leak into training")
    rng = _job_rng(cfg, job.rep, job.fold)
    model = make_model(cfg, job.s_max, job.embed_dim, rng)
    result = train_fold(model, job.train, job.dev, cfg.epochs, cfg.batch_size, rng, nn.AdamState(lr=cfg.lr))
    rows = []
    for fold_id, test in job.tests:
        m = compute_metrics(evaluate(model, test), test.labels, test.stopwords)
        rows.append(FoldResult(job.protocol, job.source, job.target, cfg.mode, fold_id, job.rep, m,
                               result.best_epoch))
    return rows


def _execute(jobs: list, n_workers: int) -> list:
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    rows = [r for rs in results for r in rs]
    rows.sort(key=lambda r: (r.rep, r.fold))
    return rows


def _lexical_dim(config, table):
    if not config.uses_lexical:
        return None
    if table is None:
        raise ValueError(f"mode {config.mode} needs an embedding table")
    return table.dim


def _prepare(config, bundle, s_max, table, id_offset=0):
    return prepare_words(bundle, s_max if config.uses_acoustic else None,
                         table if config.uses_lexical else None, config.n_words, id_offset=id_offset)


def run_within(config: ExperimentConfig, corpora: dict, table: EmbeddingTable | None = None,
               splits=None) -> MetricsReport:
    """k folds x repetitions on one corpus, each fold selecting on its dev set."""
    bundle = corpora[config.target]
    n = len(bundle.corpus)
    splits = splits if splits is not None else make_cv_splits(n, config.folds, config.splits_seed, config.dev_size)
    for s in splits:
        s.check(n)
    s_max = compute_s_max([bundle.corpus])
    data = _prepare(config, bundle, s_max, table)
    embed_dim = _lexical_dim(config, table)
    jobs = [_Job(config, rep, s.fold_id, data.subset(s.train), data.subset(s.dev),
                 [(s.fold_id, data.subset(s.test))], s_max, embed_dim, "within", bundle.name, bundle.name)
            for rep in range(config.repetitions) for s in splits]
    return MetricsReport.from_rows(_execute(jobs, config.jobs))


def run_cross(config: ExperimentConfig, corpora: dict, table: EmbeddingTable | None = None,
              splits=None) -> MetricsReport:
    """Train on a whole source corpus, test on the target's k fold test sets."""
    if len(config.sources) != 1:
        raise ValueError("cross-corpus runs take exactly one source corpus")
    source_name = config.sources[0]
    if source_name == config.target or corpora[source_name] is corpora[config.target]:
        raise ValueError("cross-corpus source and target must differ")
    source, target = corpora[source_name], corpora[config.target]
    n_t = len(target.corpus)
    splits = splits if splits is not None else make_cv_splits(n_t, config.folds, config.splits_seed,
                                                               config.dev_size)
    s_max = compute_s_max([source.corpus, target.corpus])
    src = _prepare(config, source, s_max, table)
    tgt = _prepare(config, target, s_max, table, id_offset=len(source.corpus))
    embed_dim = _lexical_dim(config, table)
    jobs = []
    for rep in range(config.repetitions):
        order = _job_rng(config, rep, config.folds).permutation(len(src))
        nd = dev_count(len(order), config.dev_size)
        jobs.append(_Job(config, rep, config.folds, src.subset(np.sort(order[nd:])), src.subset(np.sort(order[:nd])),
                         [(s.fold_id, tgt.subset(s.test)) for s in splits], s_max, embed_dim,
                         "cross", source.name, target.name))
    return MetricsReport.from_rows(_execute(jobs, config.jobs))


def run_all_setting(config: ExperimentConfig, corpora: dict, table: EmbeddingTable | None = None,
                    splits=None) -> MetricsReport:
    """Other corpora in full plus the target's fold training data, per target fold.

    The dev set is held out from the combined training pool. With no other
    corpus this reduces to the within-corpus protocol.
    """
    others = [name for name in (config.sources or corpora) if name != config.target]
    if not others:
        report = run_within(replace(config, protocol="within"), corpora, table, splits)
        report.rows = [replace(r, protocol="all") for r in report.rows]
        return report
    target = corpora[config.target]
    n_t = len(target.corpus)
    splits = splits if splits is not None else make_cv_splits(n_t, config.folds, config.splits_seed,
                                                              config.dev_size)
    s_max = compute_s_max([target.corpus] + [corpora[o].corpus for o in others])
    tgt = _prepare(config, target, s_max, table)
    offset, extra = n_t, []
    for name in others:
        extra.append(_prepare(config, corpora[name], s_max, table, id_offset=offset))
        offset += len(corpora[name].corpus)
    other_data = WordData.concat(extra)
    embed_dim = _lexical_dim(config, table)
    label = "+".join(others)
    jobs = []
    for rep in range(config.repetitions):
        for s in splits:
            pool = WordData.concat([tgt.subset(np.concatenate([s.train, s.dev])), other_data])
            order = _job_rng(config, rep, s.fold_id).permutation(len(pool))
            nd = dev_count(len(order), config.dev_size)
            jobs.append(_Job(config, rep, s.fold_id, pool.subset(np.sort(order[nd:])),
                             pool.subset(np.sort(order[:nd])), [(s.fold_id, tgt.subset(s.test))],
                             s_max, embed_dim, "all", label, target.name))
    return MetricsReport.from_rows(_execute(jobs, config.jobs))


def run_experiment(config: ExperimentConfig, corpora: dict, table=None, splits=None) -> MetricsReport:
    runner = {"within": run_within, "cross": run_cross, "all": run_all_setting}[config.protocol]
    return runner(config, corpora, table, splits)


def config_record(config: ExperimentConfig) -> dict:
    return asdict(config)

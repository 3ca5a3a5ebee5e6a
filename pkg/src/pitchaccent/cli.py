"""Command-line driver: feature extraction, corpus reports, training and protocols.

Every flag may also be given as ``key = value`` in a ``--config`` file (keys
use underscores or dashes); flags override file values.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dsp, nn
from .corpus import ManifestError, compute_s_max, corpus_stats, load_manifest
from .embeddings import EmbeddingFormatError, load_embedding_text, oov_report, write_embedding_text
from .harness import (
    CorpusBundle, ExperimentConfig, FoldResult, MetricsReport, TrainingDiverged, compute_metrics, config_record,
    format_summary_grid, make_cv_splits, make_model, prepare_words, run_experiment, save_splits, train_fold,
    write_results,
)
from .model import config_hash, gradient_check
from .synthetic import SyntheticSpec, generate_synthetic_corpus, synthetic_embedding_table

log = logging.getLogger("pitchaccent")

GRADCHECK_TOLERANCE = 1e-4
COMMANDS = ("extract", "stats", "oov", "train", "within", "cross", "all", "synth", "gradcheck")

# fixed choices the code makes where the method leaves them open; logged on every run
DESIGN_DEFAULTS = (
    "init: Glorot uniform weights, zero biases",
    "activations: ReLU after conv1, conv2 and the lexical bottleneck",
    "conv2: kernels span all input channels unless depthwise_conv2 is set",
    "optimizer: Adam beta1=0.9 beta2=0.999 eps=1e-8",
    "selection: best dev accuracy per fold, earliest epoch on ties",
    "prediction: argmax over (None, Accented), ties predict None",
    "dev set: min(dev_size, half the training pool) words",
    "OOV words: all-ones vector; n-gram slots past the utterance: zeros",
)

# flag name -> (type, default, help); ExperimentConfig fields reuse these names
OPTIONS = {
    "embeddings": (str, None, "embedding text file"),
    "embedding_kind": (str, "glove", "glove or w2v"),
    "embedding_dim": (int, 300, "embedding dimensionality"),
    "mode": (str, "acoustic", "acoustic, acoustic+embs or embs-only"),
    "ngram": (int, 1, "words per lexical input (1 or 3)"),
    "bottleneck": (int, 10, "lexical bottleneck width"),
    "seed": (int, 0, "base random seed"),
    "split_seed": (int, None, "seed for the fixed CV splits (defaults to --seed)"),
    "out": (str, "runs", "run directory"),
    "jobs": (int, 1, "parallel training jobs"),
    "epochs": (int, 20, "training epochs"),
    "reps": (int, 5, "repetitions"),
    "folds": (int, 10, "cross-validation folds"),
    "fold": (int, 0, "fold for the train command"),
    "dev_size": (int, 1000, "dev words held out per fold"),
    "batch_size": (int, 32, "mini-batch size"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "l2_acoustic": (float, 1e-4, "L2 coefficient, acoustic branch"),
    "l2_lexical": (float, 1e-4, "L2 coefficient, lexical branch"),
    "dropout_acoustic": (float, 0.2, "dropout on the pooled acoustic vector"),
    "dropout_lexical": (float, 0.8, "dropout on the embedding input"),
    "conv_channels": (int, 100, "kernels per conv layer"),
    "depthwise_conv2": (bool, False, "depthwise second conv layer"),
    "float32": (bool, False, "train in 32-bit floats"),
    # synth
    "words": (int, 2000, "synthetic corpus size in words"),
    "strength": (float, 1.0, "probability that acoustics follow the label"),
    "lexical": (float, 0.5, "accent probability of accent-prone word types"),
    "invert": (bool, False, "swap accent-prone and accent-averse word types"),
    "name": (str, "synth", "synthetic corpus name"),
}

COMMAND_OPTIONS = {
    "extract": ("out",),
    "stats": ("out",),
    "oov": ("embeddings", "embedding_kind", "embedding_dim", "out"),
    "synth": ("seed", "out", "words", "strength", "lexical", "invert", "name", "embedding_dim"),
    "gradcheck": ("seed",),
}
EXPERIMENT_OPTIONS = tuple(k for k in OPTIONS if k not in ("words", "strength", "lexical", "invert", "name", "fold"))
for _cmd in ("within", "cross", "all"):
    COMMAND_OPTIONS[_cmd] = EXPERIMENT_OPTIONS
COMMAND_OPTIONS["train"] = EXPERIMENT_OPTIONS + ("fold",)


class UsageError(Exception):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pitchaccent", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, help=_HELP[cmd])
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("--config", help="key = value file; flags override it")
        if cmd not in ("synth", "gradcheck"):
            p.add_argument("--manifest", action="append", default=None,
                           help="word manifest (repeatable; the last one is the target)")
        for key in COMMAND_OPTIONS[cmd]:
            kind, default, text = OPTIONS[key]
            flag = "--" + key.replace("_", "-")
            if kind is bool:
                p.add_argument(flag, action="store_const", const=True, default=None, help=text)
            else:
                p.add_argument(flag, type=kind, default=None, help=f"{text} (default {default})")
    return parser


_HELP = {
    "extract": "audio to frame feature tracks",
    "stats": "word and accent counts per corpus",
    "oov": "out-of-vocabulary report for an embedding table",
    "train": "train and test a single fold",
    "within": "within-corpus cross-validation",
    "cross": "train on one corpus, test on another",
    "all": "train on all corpora plus the target's fold",
    "synth": "write a synthetic corpus and embedding table",
    "gradcheck": "finite-difference check of the model gradients",
}


def read_config_file(path) -> dict:
    values = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {n}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(args) -> dict:
    """Defaults, then config-file values, then flags."""
    allowed = COMMAND_OPTIONS[args.command]
    resolved = {k: OPTIONS[k][1] for k in allowed}
    if args.config:
        for key, raw in read_config_file(args.config).items():
            if key == "manifest":
                if args.manifest is None:
                    args.manifest = [m.strip() for m in raw.split(",") if m.strip()]
                continue
            if key not in allowed:
                raise UsageError(f"{args.config}: unknown key {key!r} for {args.command}")
            kind = OPTIONS[key][0]
            try:
                resolved[key] = _bool(raw) if kind is bool else kind(raw)
            except ValueError as exc:
                raise UsageError(f"{args.config}: {key}: {exc}") from None
    for key in allowed:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _need_manifests(args, at_least=1) -> list:
    paths = args.manifest or []
    if len(paths) < at_least:
        raise UsageError(f"{args.command} needs at least {at_least} --manifest")
    return paths


def _file_hash(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(str(Path(p).name).encode())
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()[:16]


def _load_bundles(paths) -> dict:
    bundles = {}
    for p in paths:
        b = CorpusBundle.from_manifest(p)
        if b.name in bundles:
            raise UsageError(f"two manifests share the corpus name {b.name!r}")
        bundles[b.name] = b
        log.info("loaded %s: %s", b.name, corpus_stats(b.corpus).describe())
    return bundles


def _load_table(opts):
    if not opts.get("embeddings"):
        return None
    return load_embedding_text(opts["embeddings"], opts["embedding_dim"], opts["embedding_kind"])


def _experiment_config(protocol, opts, names) -> ExperimentConfig:
    if opts["ngram"] not in (1, 3):
        raise UsageError("--ngram must be 1 or 3")
    return ExperimentConfig(
        protocol=protocol, target=names[-1], sources=tuple(names[:-1]), mode=opts["mode"], n_words=opts["ngram"],
        bottleneck_n=opts["bottleneck"], epochs=opts["epochs"], repetitions=opts["reps"], folds=opts["folds"],
        dev_size=opts["dev_size"], batch_size=opts["batch_size"], lr=opts["lr"], l2_acoustic=opts["l2_acoustic"],
        l2_lexical=opts["l2_lexical"], dropout_acoustic=opts["dropout_acoustic"],
        dropout_lexical=opts["dropout_lexical"], conv_channels=opts["conv_channels"],
        depthwise_conv2=opts["depthwise_conv2"], seed=opts["seed"], split_seed=opts["split_seed"],
        float32=opts["float32"], jobs=opts["jobs"])


def _write_run_record(out: Path, command, opts, config, manifests) -> str:
    inputs = list(manifests)
    for m in manifests:
        corpus = load_manifest(m)
        inputs += sorted({u.audio_path for u in corpus.utterances})
    if opts.get("embeddings"):
        inputs.append(opts["embeddings"])
    record = {"command": command, **config_record(config), "manifests": [str(m) for m in manifests],
              "embeddings": opts.get("embeddings"), "embedding_kind": opts.get("embedding_kind"),
              "embedding_dim": opts.get("embedding_dim")}
    if command == "train":
        record["fold"] = opts["fold"]
    record = {k: list(v) if isinstance(v, tuple) else v for k, v in record.items()}
    digest = config_hash(record)
    lines = [f"# config_hash = {digest}", f"# input_hash = {_file_hash(inputs)}", f"# seed = {config.seed}"]
    lines += [f"{k} = {json.dumps(v)}" for k, v in record.items()]
    (out / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return digest


def _log_defaults(opts):
    for line in DESIGN_DEFAULTS:
        log.info("default %s", line)
    log.info("resolved options: %s", ", ".join(f"{k}={v}" for k, v in sorted(opts.items())))


# -- commands -------------------------------------------------------------------

def cmd_extract(args, opts) -> int:
    out = Path(opts["out"]) / "tracks"
    out.mkdir(parents=True, exist_ok=True)
    for path in _need_manifests(args):
        corpus = load_manifest(path)
        for utt in corpus.utterances:
            track = dsp.extract_lld_track(dsp.load_wav(utt.audio_path))
            dsp.write_track_csv(out / f"{utt.id}.csv", track)
        print(f"{corpus.name}: {len(corpus.utterances)} tracks written to {out}")
    return 0


def cmd_stats(args, opts) -> int:
    lines = []
    for path in _need_manifests(args):
        corpus = load_manifest(path, check_audio=False)
        lines.append(f"{corpus.name}: {corpus_stats(corpus).describe()}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out is not None:
        Path(opts["out"]).mkdir(parents=True, exist_ok=True)
        (Path(opts["out"]) / "stats.txt").write_text(text, encoding="utf-8")
    return 0


def cmd_oov(args, opts) -> int:
    table = _load_table(opts)
    if table is None:
        raise UsageError("oov needs --embeddings")
    chunks = []
    for path in _need_manifests(args):
        corpus = load_manifest(path, check_audio=False)
        chunks.append(f"[{corpus.name}]\n" + oov_report(corpus, table).to_text(opts["embedding_kind"]))
    text = "\n".join(chunks)
    sys.stdout.write(text)
    if args.out is not None:
        Path(opts["out"]).mkdir(parents=True, exist_ok=True)
        (Path(opts["out"]) / "oov.txt").write_text(text, encoding="utf-8")
    return 0


def cmd_protocol(args, opts) -> int:
    protocol = args.command
    manifests = _need_manifests(args, 2 if protocol == "cross" else 1)
    if protocol == "cross" and len(manifests) != 2:
        raise UsageError("cross takes exactly two --manifest (source, then target)")
    if protocol == "within":
        manifests = manifests[-1:]
    _log_defaults(opts)
    bundles = _load_bundles(manifests)
    config = _experiment_config(protocol, opts, list(bundles))
    table = _load_table(opts)
    if config.uses_lexical and table is None:
        raise UsageError(f"mode {config.mode} needs --embeddings")
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    digest = _write_run_record(out, protocol, opts, config, manifests)
    target = bundles[config.target]
    splits = make_cv_splits(len(target.corpus), config.folds, config.splits_seed, config.dev_size)
    save_splits(out / "splits.json", splits)
    report = run_experiment(config, bundles, table, splits)
    write_results(out / "results.csv", report.rows)
    _write_summary(out, config, report, digest)
    return 0


def _write_summary(out: Path, config: ExperimentConfig, report: MetricsReport, digest: str) -> None:
    source = config.target if config.protocol == "within" else "+".join(config.sources)
    grid = format_summary_grid({(source, config.mode, config.target): report})
    text = (f"config_hash {digest}  seed {config.seed}\n{config.protocol} {source} -> {config.target} "
            f"[{config.mode}]\n{report.summary_line()}\n\n{grid}")
    (out / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_train(args, opts) -> int:
    manifests = _need_manifests(args)
    _log_defaults(opts)
    bundles = _load_bundles(manifests[-1:])
    name = next(iter(bundles))
    config = _experiment_config("within", opts, [name])
    table = _load_table(opts)
    bundle = bundles[name]
    splits = make_cv_splits(len(bundle.corpus), config.folds, config.splits_seed, config.dev_size)
    if not 0 <= opts["fold"] < len(splits):
        raise UsageError(f"--fold must be in [0, {len(splits) - 1}]")
    split = splits[opts["fold"]]
    s_max = compute_s_max([bundle.corpus]) if config.uses_acoustic else None
    if config.uses_lexical and table is None:
        raise UsageError(f"mode {config.mode} needs --embeddings")
    data = prepare_words(bundle, s_max, table if config.uses_lexical else None, config.n_words)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    digest = _write_run_record(out, "train", opts, config, manifests[-1:])
    save_splits(out / "splits.json", splits)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, split.fold_id]))
    model = make_model(config, s_max, table.dim if table is not None and config.uses_lexical else None, rng)
    result = train_fold(model, data.subset(split.train), data.subset(split.dev), config.epochs,
                        config.batch_size, rng, nn.AdamState(lr=config.lr))
    test = data.subset(split.test)
    metrics = compute_metrics(model.predict(test.matrices if model.uses_acoustic else None,
                                            test.lexical if model.uses_lexical else None),
                              test.labels, test.stopwords)
    row = FoldResult("within", name, name, config.mode, split.fold_id, 0, metrics, result.best_epoch)
    write_results(out / "results.csv", [row])
    nn.save_checkpoint(out / "model.npz", model.params, config.seed, digest,
                       {"mode": config.mode, "s_max": s_max, "best_epoch": result.best_epoch})
    _write_summary(out, config, MetricsReport.from_rows([row]), digest)
    return 0


def cmd_synth(args, opts) -> int:
    out = Path(opts["out"])
    spec = SyntheticSpec(n_words=opts["words"], lexical_correlation=opts["lexical"],
                         acoustic_strength=opts["strength"], invert_lexical=opts["invert"], seed=opts["seed"],
                         name=opts["name"])
    syn = generate_synthetic_corpus(spec, out)
    table = synthetic_embedding_table(spec.vocab, opts["embedding_dim"])
    emb_path = out / f"{spec.name}_embeddings.txt"
    write_embedding_text(emb_path, table)
    stats = corpus_stats(syn.corpus)
    print(f"{syn.manifest_path}: {stats.describe()}")
    print(f"{emb_path}: {len(table)} vectors of dimension {table.dim}")
    return 0


def cmd_gradcheck(args, opts) -> int:
    err = gradient_check(opts["seed"])
    ok = err < GRADCHECK_TOLERANCE
    print(f"max relative error: {err:.3e} ({'ok' if ok else 'FAILED'}, tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


_DISPATCH = {"extract": cmd_extract, "stats": cmd_stats, "oov": cmd_oov, "train": cmd_train,
             "within": cmd_protocol, "cross": cmd_protocol, "all": cmd_protocol, "synth": cmd_synth,
             "gradcheck": cmd_gradcheck}

_RUNTIME_ERRORS = (ManifestError, EmbeddingFormatError, dsp.WavFormatError, TrainingDiverged, ValueError, OSError,
                   KeyError)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        opts = resolve(args)
        return _DISPATCH[args.command](args, opts)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

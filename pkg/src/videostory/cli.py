"""Command-line interface.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
(``#`` starts a comment).  Keys are flag names without the leading dashes;
underscores and dashes are interchangeable.  Flags given on the command line
override the config file.

Exit status: 0 on success, 1 on usage errors, 2 on data or model errors.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import baselines, corpus as corpus_mod, embedding, evaluation, fusion, harness, oracle, zeroshot
from .errors import ShapeMismatch, VideoStoryError

FLAG_HELP = {
    "seed": "random seed; every random choice derives from it",
    "threads": "worker threads for per-event work (results do not depend on it)",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().rstrip()}\n{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# parser


def _add_corpus(p, features_required=True):
    p.add_argument("--vocab", help="vocabulary file (<term>\\t<count> per line)")
    p.add_argument("--terms", help="term-matrix file (<video_id>\\t<indices> per line)")
    p.add_argument("--features", nargs="+", help="VSF1 feature files, one per modality, in modality order")


def _add_hyperparams(p):
    p.add_argument("--k", type=int, default=2048, help="embedding dimensionality")
    p.add_argument("--lambda-a", type=float, default=1e-3, help="regularizer on the term projection")
    p.add_argument("--lambda-s", type=float, default=1e-3, help="regularizer on the embedding")
    p.add_argument("--lambda-w", type=float, default=1e-3, help="regularizer on the feature projections")
    p.add_argument("--eta", type=float, default=0.01, help="SGD step size")
    p.add_argument("--epochs", type=int, default=10, help="passes over the training videos")
    p.add_argument("--schedule", choices=embedding.SCHEDULES, default="constant",
                   help="constant step, or inverse decay eta / (1 + decay * t)")
    p.add_argument("--decay", type=float, default=0.0, help="decay rate for the inverse schedule")
    p.add_argument("--gammas", nargs="+", type=float, help="per-modality weights for multimodal training")


def _add_common(p, seed=False, threads=False):
    p.add_argument("--config", help="key = value config file; flags override it")
    if seed:
        p.add_argument("--seed", type=int, default=0, help=FLAG_HELP["seed"])
    if threads:
        p.add_argument("--threads", type=int, default=1, help=FLAG_HELP["threads"])


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="videostory", description="Learn and evaluate VideoStory embeddings.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    subs = {}

    p = subs["build-vocab"] = sub.add_parser("build-vocab", help="build a vocabulary from descriptions")
    _add_common(p)
    p.add_argument("--descriptions", help="descriptions file (<video_id>\\t<text> per line)")
    p.add_argument("--min-occurrences", type=int, default=2, help="drop terms found in fewer videos")
    p.add_argument("--out", help="output vocabulary file")

    p = subs["encode"] = sub.add_parser("encode", help="encode descriptions as binary term vectors")
    _add_common(p)
    p.add_argument("--descriptions", help="descriptions file")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--out", help="output term-matrix file")

    p = subs["split"] = sub.add_parser("split", help="seeded train/validation split of a corpus")
    _add_common(p, seed=True)
    _add_corpus(p)
    p.add_argument("--train-fraction", type=float, default=0.75, help="share of videos used for training")
    p.add_argument("--out-dir", help="writes train/ and test/ subdirectories")

    p = subs["train"] = sub.add_parser("train", help="train an embedding or a baseline")
    _add_common(p, seed=True, threads=True)
    _add_corpus(p)
    _add_hyperparams(p)
    p.add_argument("--variant", choices=["vs", "fused", "zero", "desc-embed", "term-attr", "term-attr-f"],
                   default="vs", help="what to train")
    p.add_argument("--modality-index", type=int, default=0, help="feature modality for single-modality variants")
    p.add_argument("--alpha", type=float, default=zeroshot.DEFAULT_ALPHA,
                   help="importance of event-definition terms (zero variant)")
    p.add_argument("--events", nargs="+", help="event definition files (zero variant)")
    p.add_argument("--m-sel", type=int, help="number of term attributes (default: k)")
    p.add_argument("--reg", type=float, default=1.0, help="ridge regularizer of term-attribute scorers")
    p.add_argument("--out", help="model file; a directory of <event_id>.vsm files for the zero variant")

    p = subs["embed"] = sub.add_parser("embed", help="embed videos with a trained model")
    _add_common(p)
    p.add_argument("--model", help="VSM1 model file")
    p.add_argument("--features", nargs="+", help="feature files, one per model modality")
    p.add_argument("--out", help="output VSF1 file with the (concatenated) embeddings")

    p = subs["predict-terms"] = sub.add_parser("predict-terms", help="predict the top terms of videos")
    _add_common(p)
    p.add_argument("--model", help="VSM1 model file")
    p.add_argument("--vocab", help="vocabulary the model was trained with")
    p.add_argument("--features", nargs="+", help="feature files, one per model modality")
    p.add_argument("--top", type=int, default=10, help="terms reported per video")
    p.add_argument("--out", help="output TSV (default: standard output)")

    p = subs["rank"] = sub.add_parser("rank", help="rank videos for textual event definitions")
    _add_common(p, threads=True)
    p.add_argument("--model", help="VSM1 model file, or a directory holding <event_id>.vsm")
    p.add_argument("--vocab", help="vocabulary the model was trained with")
    p.add_argument("--events", nargs="+", help="event definition files")
    p.add_argument("--features", nargs="+", help="feature files of the videos to rank")
    p.add_argument("--out-dir", help="writes one <event_id>.tsv ranking per event")

    p = subs["eval"] = sub.add_parser("eval", help="score rankings or run the few-example harness")
    _add_common(p, seed=True, threads=True)
    p.add_argument("--rankings", nargs="+", help="ranking TSV files named <event_id>.tsv (zero-example mode)")
    p.add_argument("--labels", help="labels file for --rankings")
    p.add_argument("--strategy", choices=harness.STRATEGIES, help="modality fusion strategy (few-example mode)")
    p.add_argument("--representation", choices=harness.REPRESENTATIONS, default="videostory",
                   help="representation the event classifiers are trained on")
    _add_corpus(p)
    _add_hyperparams(p)
    p.add_argument("--event-features", nargs="+", help="features of the event videos, one file per modality")
    p.add_argument("--train-labels", help="labels of the few training examples per event")
    p.add_argument("--test-labels", help="labels of the test videos per event")
    p.add_argument("--m-sel", type=int, help="number of term attributes (default: k)")
    p.add_argument("--term-reg", type=float, default=1.0, help="ridge regularizer of term-attribute scorers")
    p.add_argument("--reg", type=float, default=1.0, help="kernel classifier regularizer")
    p.add_argument("--rbf-gamma", type=float, default=1.0, help="RBF kernel width parameter")
    p.add_argument("--out", help="metrics report TSV (default: standard output)")

    p = subs["synth"] = sub.add_parser("synth", help="generate a synthetic corpus with planted events")
    _add_common(p, seed=True)
    defaults = oracle.SynthSpec()
    p.add_argument("--n", type=int, default=defaults.N, help="number of videos")
    p.add_argument("--m", type=int, default=defaults.M, help="number of generated terms")
    p.add_argument("--d", type=int, nargs="+", default=[20], help="feature dimensionality per modality")
    p.add_argument("--j", type=int, default=defaults.J, help="number of modalities")
    p.add_argument("--k-true", type=int, default=defaults.k_true, help="latent dimensionality")
    p.add_argument("--noise-sigma", type=float, default=defaults.noise_sigma, help="latent noise not explained by features")
    p.add_argument("--term-threshold", type=float, default=defaults.term_threshold, help="activation needed for a term")
    p.add_argument("--n-events", type=int, default=defaults.n_events, help="planted events")
    p.add_argument("--positives-per-event", type=int, default=defaults.positives_per_event, help="videos per event")
    p.add_argument("--terms-per-event", type=int, default=defaults.terms_per_event, help="rare terms per event")
    p.add_argument("--event-scale", type=float, default=defaults.event_scale, help="distance of event clusters")
    p.add_argument("--event-spread", type=float, default=defaults.event_spread, help="spread of event clusters")
    p.add_argument("--event-term-norm", type=float, default=defaults.event_term_norm, help="weight of event terms")
    p.add_argument("--distractor-scale", type=float, default=defaults.distractor_scale, help="irrelevant feature noise")
    p.add_argument("--background-event-sigma", type=float, default=defaults.background_event_sigma,
                   help="spread of background videos along event directions")
    p.add_argument("--out-dir", help="output directory")

    p = subs["inspect"] = sub.add_parser("inspect", help="term correlations A A^T of the most frequent terms")
    _add_common(p)
    p.add_argument("--model", help="VSM1 model file")
    p.add_argument("--vocab", help="vocabulary the model was trained with")
    p.add_argument("--terms", type=int, default=20, help="number of most frequent terms")
    p.add_argument("--out", help="output TSV (default: standard output)")

    return parser, subs


REQUIRED = {
    "build-vocab": ["descriptions", "out"],
    "encode": ["descriptions", "vocab", "out"],
    "split": ["vocab", "terms", "features", "out_dir"],
    "train": ["vocab", "terms", "features", "out"],
    "embed": ["model", "features", "out"],
    "predict-terms": ["model", "vocab", "features"],
    "rank": ["model", "vocab", "events", "features", "out_dir"],
    "synth": ["out_dir"],
    "inspect": ["model", "vocab"],
}


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("_", "-")] = value.strip()
    return out


def _config_argv(sub: argparse.ArgumentParser, config: dict[str, str]) -> list[str]:
    actions = {a.option_strings[0][2:]: a for a in sub._actions if a.option_strings and a.option_strings[0].startswith("--")}
    argv = []
    for key, value in config.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if action.nargs in ("+", "*"):
            argv += [f"--{key}", *value.replace(",", " ").split()]
        else:
            argv += [f"--{key}", value]
    return argv


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser, subs = build_parser()
    if argv and argv[0] in subs:
        sub = subs[argv[0]]
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv[1:])
        if known.config:
            try:
                config = read_config(known.config)
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from exc
            argv = [argv[0], *_config_argv(sub, config), *argv[1:]]
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().rstrip() + "\nvideostory: error: a command is required")
    required = list(REQUIRED.get(args.command, []))
    if args.command == "eval":
        if args.rankings:
            required = ["labels"]
        else:
            required = ["strategy", "vocab", "terms", "features", "event_features", "train_labels", "test_labels"]
    if args.command == "train" and args.variant == "zero":
        required.append("events")
    missing = [r for r in required if getattr(args, r, None) in (None, [])]
    if missing:
        flags = ", ".join("--" + m.replace("_", "-") for m in missing)
        raise UsageError(f"{subs[args.command].format_usage().rstrip()}\nvideostory {args.command}: "
                         f"error: missing required option(s): {flags}")
    return args


# ---------------------------------------------------------------------------
# commands


def _hyperparams(args) -> embedding.Hyperparams:
    return embedding.Hyperparams(
        k=args.k, lambda_a=args.lambda_a, lambda_s=args.lambda_s, lambda_w=args.lambda_w,
        eta=args.eta, epochs=args.epochs, seed=args.seed, schedule=args.schedule, decay=args.decay,
    )


def _load_corpus(args) -> corpus_mod.Corpus:
    return corpus_mod.load_corpus(args.vocab, args.terms, args.features)


def _write_text(path, text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _fmt(x) -> str:
    return format(float(x), ".9g")


def _load_vocab_for(model, vocab_path):
    vocab = corpus_mod.read_vocabulary(vocab_path)
    if vocab.fingerprint() != model.vocab_fingerprint:
        raise ShapeMismatch("the vocabulary does not match the one the model was trained with")
    return vocab


def _load_features(paths, model=None):
    feats = [corpus_mod.read_features(p) for p in paths]
    if model is not None and len(feats) != model.J:
        raise ShapeMismatch(f"model has {model.J} modalities but {len(feats)} feature files were given")
    ids = feats[0].video_ids
    return [fm.reorder(ids) for fm in feats]


def cmd_build_vocab(args):
    descriptions = corpus_mod.read_descriptions(args.descriptions)
    vocab = corpus_mod.build_vocabulary(descriptions, args.min_occurrences)
    corpus_mod.write_vocabulary(args.out, vocab)


def cmd_encode(args):
    descriptions = corpus_mod.read_descriptions(args.descriptions)
    vocab = corpus_mod.read_vocabulary(args.vocab)
    corpus_mod.write_term_matrix(args.out, corpus_mod.encode_term_matrix(descriptions, vocab))


def cmd_split(args):
    train, test = corpus_mod.split_corpus(_load_corpus(args), args.train_fraction, args.seed)
    corpus_mod.save_corpus(train, Path(args.out_dir) / "train")
    corpus_mod.save_corpus(test, Path(args.out_dir) / "test")


def _train_zero_models(corpus, hp, events, gammas, alpha, threads):
    def one(ev):
        return zeroshot.train_zero(corpus, hp, ev, gammas=gammas, alpha=alpha)[0]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(one, events))


def cmd_train(args):
    corpus = _load_corpus(args)
    hp = _hyperparams(args)
    variant = args.variant
    if variant == "vs":
        embedding.save_model(args.out, embedding.sgd_train(corpus, hp, args.modality_index))
    elif variant == "fused":
        embedding.save_model(args.out, fusion.sgd_train_fused(corpus, hp, args.gammas))
    elif variant == "desc-embed":
        embedding.save_model(args.out, baselines.train_description_embedding(corpus, hp, args.modality_index))
    elif variant in ("term-attr", "term-attr-f"):
        m_sel = args.m_sel or hp.k
        if variant == "term-attr":
            model = baselines.train_term_attributes(corpus, m_sel, args.reg, args.seed, args.modality_index)
        else:
            model = baselines.train_term_attributes_f(corpus, m_sel, args.reg, args.modality_index)
        baselines.save_attributes(args.out, model)
    else:
        events = [zeroshot.read_event(p) for p in args.events]
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        models = _train_zero_models(corpus, hp, events, args.gammas, args.alpha, args.threads)
        for ev, model in zip(events, models):
            embedding.save_model(out / f"{ev.event_id}.vsm", model)


def cmd_embed(args):
    model = embedding.load_model(args.model)
    feats = _load_features(args.features, model)
    S = np.hstack([fm.values.astype(np.float64) @ W for fm, W in zip(feats, model.projections)])
    corpus_mod.write_features(args.out, corpus_mod.FeatureMatrix("videostory", S, feats[0].video_ids))


def cmd_predict_terms(args):
    model = embedding.load_model(args.model)
    vocab = _load_vocab_for(model, args.vocab)
    feats = _load_features(args.features, model)
    Y_hat = zeroshot.predicted_term_matrix(model, [fm.columns() for fm in feats])
    lines = []
    for i, vid in enumerate(feats[0].video_ids):
        for r, j in enumerate(embedding.top_terms(Y_hat[:, i], args.top), 1):
            lines.append(f"{vid}\t{r}\t{vocab.terms[j]}\t{_fmt(Y_hat[j, i])}\n")
    _write_text(args.out, "".join(lines))


def cmd_rank(args):
    events = [zeroshot.read_event(p) for p in args.events]
    model_path = Path(args.model)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shared = None if model_path.is_dir() else embedding.load_model(model_path)

    def one(ev):
        model = shared or embedding.load_model(model_path / f"{ev.event_id}.vsm")
        vocab = _load_vocab_for(model, args.vocab)
        query = zeroshot.build_event_query(ev, vocab)
        return zeroshot.cosine_rank(model, query, _load_features(args.features, model))

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        rankings = list(pool.map(one, events))
    for ranking in rankings:
        zeroshot.write_ranking(out / f"{ranking.event_id}.tsv", ranking)


def cmd_eval(args):
    if args.rankings:
        labels = {ls.event_id: ls for ls in evaluation.read_labels(args.labels)}
        results = []
        for path in args.rankings:
            ranking = zeroshot.read_ranking(path)
            if ranking.event_id not in labels:
                raise ShapeMismatch(f"no labels for event {ranking.event_id!r}")
            results.append(evaluation.evaluate_ranking(ranking.video_ids, labels[ranking.event_id]))
    else:
        report = harness.few_example_harness(
            _load_corpus(args),
            _load_features(args.event_features),
            evaluation.read_labels(args.train_labels),
            evaluation.read_labels(args.test_labels),
            representation=args.representation,
            strategy=args.strategy,
            hyperparams=_hyperparams(args),
            gammas=args.gammas,
            m_sel=args.m_sel,
            term_reg=args.term_reg,
            reg=args.reg,
            rbf_gamma=args.rbf_gamma,
            threads=args.threads,
        )
        results = list(report.results)
    _write_text(args.out, evaluation.format_report(results))


def cmd_synth(args):
    dims = args.d[0] if len(args.d) == 1 else tuple(args.d)
    spec = oracle.SynthSpec(
        N=args.n, M=args.m, D=dims, J=args.j, k_true=args.k_true, noise_sigma=args.noise_sigma,
        term_threshold=args.term_threshold, n_events=args.n_events,
        positives_per_event=args.positives_per_event, seed=args.seed, terms_per_event=args.terms_per_event,
        event_scale=args.event_scale, event_spread=args.event_spread, event_term_norm=args.event_term_norm,
        distractor_scale=args.distractor_scale, background_event_sigma=args.background_event_sigma,
    )
    oracle.save_synth(args.out_dir, spec)


def term_correlations(model: embedding.EmbeddingModel, n: int) -> np.ndarray:
    A = model.A[:n]
    G = A @ A.T
    return 0.5 * (G + G.T)


def cmd_inspect(args):
    model = embedding.load_model(args.model)
    vocab = _load_vocab_for(model, args.vocab)
    n = min(args.terms, len(vocab))
    G = term_correlations(model, n)
    terms = vocab.terms[:n]
    lines = ["term\t" + "\t".join(terms) + "\n"]
    for t, row in zip(terms, G):
        lines.append(t + "\t" + "\t".join(_fmt(v) for v in row) + "\n")
    _write_text(args.out, "".join(lines))


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "encode": cmd_encode,
    "split": cmd_split,
    "train": cmd_train,
    "embed": cmd_embed,
    "predict-terms": cmd_predict_terms,
    "rank": cmd_rank,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "inspect": cmd_inspect,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except VideoStoryError as exc:
        print(f"videostory {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"videostory {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())

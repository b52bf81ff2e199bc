"""Command-line pipeline: preprocess, stats, vocabulary, two-stage
training, keyword extraction, prediction and evaluation.

Exit codes: 0 success, 1 usage, 2 data error, 3 training abort.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nncore as nn
from .codegraph import (CodeGraph, MethodRecord, build_graph,
                        build_graph_from_record, deserialize_graph,
                        read_method_records, serialize_graph,
                        shared_token_count, shared_token_stats)
from .errors import DataError, NamegenError, ParseError, TrainingError
from .extractor import (ExtractorModel, KeywordSet, TfidfStats, baseline_random,
                        baseline_textrank, baseline_tfidf, batch_pos_weight,
                        extractor_loss, keyword_quality, reference_keywords,
                        select_keywords)
from .generator import (GeneratorConfig, GeneratorModel, TrainExample,
                        TrainSettings, train_generator)
from .ggnn import GgnnConfig
from .metrics import evaluate_corpus
from .vocab import Vocab, build_vocab


@dataclass
class RunConfig:
    hidden_dim: int = 256
    timesteps: int = 4
    tie_timesteps: bool = False
    lr: float = 5e-4
    decay_factor: float = 0.95
    decay_interval: int = 3000
    batch_size: int = 32
    seed: int = 0
    min_freq: int = 5
    use_key_gate: bool = True
    use_graph_gate: bool = True
    use_dual_attention: bool = True
    keyword_strategy: str = "extractor"
    keyword_k: int = 4
    keyword_threshold: float = 0.5
    max_decode_len: int = 8
    beam_width: int = 1
    extractor_epochs: int = 10
    generator_epochs: int = 30
    patience: int = 5
    eval_every: int = 1
    extractor_loss_variant: str = "full"  # or "positive-only"
    pos_weighting: bool = True

    @staticmethod
    def from_file(path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise DataError(f"unknown config fields: {sorted(unknown)}")
        return RunConfig(**raw)

    def ggnn_config(self) -> GgnnConfig:
        return GgnnConfig(hidden_dim=self.hidden_dim, timesteps=self.timesteps,
                          tie_timesteps=self.tie_timesteps)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            hidden_dim=self.hidden_dim, timesteps=self.timesteps,
            tie_timesteps=self.tie_timesteps, use_key_gate=self.use_key_gate,
            use_graph_gate=self.use_graph_gate,
            use_dual_attention=self.use_dual_attention,
            max_decode_len=self.max_decode_len, beam_width=self.beam_width)

    def train_settings(self, epochs: int) -> TrainSettings:
        return TrainSettings(
            lr=self.lr, decay_factor=self.decay_factor,
            decay_interval=self.decay_interval, batch_size=self.batch_size,
            max_epochs=epochs, patience=self.patience,
            eval_every=self.eval_every, seed=self.seed)


# ---------------------------------------------------------------------------
# stage helpers (also the library API used by tests)


def preprocess_records(records: list[MethodRecord]) -> list[CodeGraph]:
    graphs = []
    for rec in records:
        graphs.append(build_graph(rec))
    return graphs


def read_graphs(path) -> list[CodeGraph]:
    graphs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                graphs.append(deserialize_graph(line, lineno))
    if not graphs:
        raise DataError(f"no graphs in {path}")
    return graphs


def new_extractor(config: RunConfig, vocab: Vocab) -> tuple[nn.ParamStore, ExtractorModel]:
    store = nn.ParamStore(np.random.default_rng(config.seed))
    model = ExtractorModel(store, len(vocab), config.ggnn_config())
    return store, model


def new_generator(config: RunConfig, vocab: Vocab) -> tuple[nn.ParamStore, GeneratorModel]:
    store = nn.ParamStore(np.random.default_rng(config.seed + 1))
    model = GeneratorModel(store, len(vocab), config.generator_config())
    return store, model


def extractor_node_f1(model: ExtractorModel, graphs: list[CodeGraph], vocab: Vocab,
                      threshold: float = 0.5) -> float:
    tp = fp = fn = 0
    with nn.no_grad():
        for g in graphs:
            _, probs = model.predict_keyword_probs(g, vocab)
            pred = probs.data.reshape(-1) > threshold
            for p, y in zip(pred, g.keyword_labels):
                if p and y:
                    tp += 1
                elif p and not y:
                    fp += 1
                elif y and not p:
                    fn += 1
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 1.0


def train_extractor(
    config: RunConfig,
    train_graphs: list[CodeGraph],
    valid_graphs: list[CodeGraph],
    vocab: Vocab,
    log=None,
) -> tuple[nn.ParamStore, ExtractorModel, dict]:
    if not train_graphs:
        raise TrainingError("empty training corpus")
    store, model = new_extractor(config, vocab)
    rng = np.random.default_rng(config.seed)
    history = {"train_loss": [], "valid_f1": []}
    best_f1, best_snapshot, since_best = -1.0, None, 0
    for epoch in range(config.extractor_epochs):
        order = rng.permutation(len(train_graphs))
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            batch = [train_graphs[i] for i in order[lo : lo + config.batch_size]]
            store.zero_grad()
            pw = (batch_pos_weight([g.keyword_labels for g in batch])
                  if config.pos_weighting else None)
            total = None
            for g in batch:
                _, probs = model.predict_keyword_probs(g, vocab)
                loss = extractor_loss(probs, g.keyword_labels, pos_weight=pw,
                                      variant=config.extractor_loss_variant)
                total = loss if total is None else total + loss
            total = total * (1.0 / len(batch))
            if not np.isfinite(total.item()):
                raise TrainingError(f"non-finite extractor loss at step {store.step}")
            total.backward()
            store.clip_gradients(5.0)
            store.adam_step(lr=config.lr, decay_factor=config.decay_factor,
                            decay_interval=config.decay_interval)
            epoch_loss += total.item()
            n_batches += 1
        history["train_loss"].append(epoch_loss / n_batches)
        if valid_graphs:
            f1 = extractor_node_f1(model, valid_graphs, vocab, config.keyword_threshold)
            history["valid_f1"].append(f1)
            if log:
                log(f"extractor epoch {epoch}: loss {epoch_loss / n_batches:.4f} valid F1 {f1:.4f}")
            if f1 > best_f1:
                best_f1, since_best = f1, 0
                best_snapshot = {k: t.data.copy() for k, t in store.params.items()}
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
        elif log:
            log(f"extractor epoch {epoch}: loss {epoch_loss / n_batches:.4f}")
    if best_snapshot is not None:
        for k, t in store.params.items():
            t.data = best_snapshot[k]
    history["best_valid_f1"] = best_f1
    return store, model, history


def extractor_keywords(model: ExtractorModel, graph: CodeGraph, vocab: Vocab,
                       threshold: float = 0.5, k: int = 4) -> KeywordSet:
    with nn.no_grad():
        _, probs = model.predict_keyword_probs(graph, vocab)
    return select_keywords(probs.data, graph, threshold=threshold, fallback_k=k)


def keywords_for(
    strategy: str,
    record: MethodRecord,
    graph: CodeGraph,
    vocab: Vocab | None = None,
    model: ExtractorModel | None = None,
    tfidf_stats: TfidfStats | None = None,
    k: int = 4,
    seed: int = 0,
    threshold: float = 0.5,
) -> KeywordSet:
    if strategy == "extractor":
        if model is None or vocab is None:
            raise DataError("extractor strategy needs a trained model and vocab")
        return extractor_keywords(model, graph, vocab, threshold=threshold, k=k)
    if strategy == "random":
        # per-record offset keeps draws independent across the corpus
        return baseline_random(record, k=k, seed=seed + _stable_offset(record.method_id))
    if strategy == "textrank":
        return baseline_textrank(record, k=k)
    if strategy == "tfidf":
        if tfidf_stats is None:
            raise DataError("tfidf strategy needs corpus statistics")
        return baseline_tfidf(tfidf_stats, record, k=k)
    if strategy == "reference":
        return reference_keywords(record)
    raise DataError(f"unknown keyword strategy {strategy!r}")


def _stable_offset(method_id: str) -> int:
    return sum(ord(c) * (i + 1) for i, c in enumerate(method_id)) % 100003


def make_train_examples(
    records: list[MethodRecord],
    graphs: list[CodeGraph],
    vocab: Vocab,
    config: RunConfig,
    model: ExtractorModel | None = None,
    tfidf_stats: TfidfStats | None = None,
) -> list[TrainExample]:
    examples = []
    for rec, g in zip(records, graphs):
        ks = keywords_for(config.keyword_strategy, rec, g, vocab=vocab, model=model,
                          tfidf_stats=tfidf_stats, k=config.keyword_k,
                          seed=config.seed, threshold=config.keyword_threshold)
        kw_ids = [vocab.id_of(w) for w in ks.keywords]
        examples.append(TrainExample(graph=g, keyword_ids=kw_ids,
                                     target=rec.name_subtokens,
                                     method_id=rec.method_id))
    return examples


def run_pipeline(config: RunConfig, records: list[MethodRecord], workdir: str,
                 log=print) -> str:
    """preprocess -> vocab -> train extractor -> keywords -> train generator
    -> predict -> evaluate. Returns the report path."""
    os.makedirs(workdir, exist_ok=True)
    splits = {s: [r for r in records if r.split == s] for s in ("train", "valid", "test")}
    if not splits["train"] or not splits["test"]:
        raise DataError("corpus needs non-empty train and test splits")
    graphs = {s: preprocess_records(rs) for s, rs in splits.items()}
    for s in splits:
        with open(os.path.join(workdir, f"graphs.{s}.jsonl"), "w", encoding="utf-8") as fh:
            for g in graphs[s]:
                fh.write(serialize_graph(g) + "\n")
    vocab = build_vocab(graphs["train"], min_freq=config.min_freq)
    vocab.save(os.path.join(workdir, "vocab.json"))

    ext_model = None
    tfidf_stats = None
    if config.keyword_strategy == "extractor":
        ext_store, ext_model, _ = train_extractor(
            config, graphs["train"], graphs["valid"], vocab, log=log)
        ext_store.save(os.path.join(workdir, "extractor.npz"),
                       {"kind": "extractor", **asdict(config)})
    elif config.keyword_strategy == "tfidf":
        tfidf_stats = TfidfStats.from_corpus(splits["train"])

    examples = {
        s: make_train_examples(splits[s], graphs[s], vocab, config,
                               model=ext_model, tfidf_stats=tfidf_stats)
        for s in splits
    }
    gen_store, gen_model = new_generator(config, vocab)
    train_generator(gen_model, gen_store, examples["train"], examples["valid"],
                    vocab, config.train_settings(config.generator_epochs), log=log)
    gen_store.save(os.path.join(workdir, "generator.npz"),
                   {"kind": "generator", **asdict(config)})

    pred_path = os.path.join(workdir, "predictions.jsonl")
    with open(pred_path, "w", encoding="utf-8") as fh:
        for ex in examples["test"]:
            toks, pgens = gen_model.decode(ex.graph, ex.keyword_ids, vocab)
            fh.write(json.dumps({
                "id": ex.method_id, "predicted": toks,
                "keywords": [vocab.surface_of(i) for i in ex.keyword_ids],
                "p_gen": [round(p, 6) for p in pgens],
            }, sort_keys=True) + "\n")

    preds = {ex.method_id: None for ex in examples["test"]}
    with open(pred_path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            preds[rec["id"]] = rec["predicted"]
    refs = {r.method_id: r.name_subtokens for r in splits["test"]}
    shared = {r.method_id: shared_token_count(r) for r in splits["test"]}
    report = evaluate_corpus(preds, refs, shared)
    report_path = os.path.join(workdir, "report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.format())
    log(report.format())
    return report_path


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file mirroring RunConfig")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            p.add_argument(flag, type=lambda v: v.lower() in ("1", "true", "yes"),
                           default=None, metavar="BOOL")
        else:
            p.add_argument(flag, type=type(f.default), default=None)


def _resolve_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    for f in fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(config, f.name, val)
    return config


def build_parser() -> _Parser:
    parser = _Parser(prog="namegen")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="method records -> graph records")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--pre-parsed", action="store_true",
                   help="input records carry explicit nodes/edges")

    p = sub.add_parser("stats", help="shared-token corpus statistics")
    p.add_argument("--in", dest="infile", required=True)

    p = sub.add_parser("build-vocab")
    p.add_argument("--in", dest="infile", required=True, help="graph records")
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--min-freq", type=int, default=5)

    p = sub.add_parser("train-extractor")
    p.add_argument("--data", required=True, help="training graph records")
    p.add_argument("--valid", help="validation graph records")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    _add_config_args(p)

    p = sub.add_parser("extract-keywords")
    p.add_argument("--strategy", required=True,
                   choices=["extractor", "random", "textrank", "tfidf", "reference"])
    p.add_argument("--in", dest="infile", required=True, help="method records")
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--model", help="extractor checkpoint (strategy=extractor)")
    p.add_argument("--vocab")
    p.add_argument("--corpus", help="training method records (strategy=tfidf)")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quality", action="store_true",
                   help="also report keyword ROUGE against reference names")

    p = sub.add_parser("train-generator")
    p.add_argument("--data", required=True,
                   help="directory with train.jsonl / valid.jsonl method records")
    p.add_argument("--extractor", help="extractor checkpoint for keywords")
    p.add_argument("--vocab", help="default: <data>/vocab.json")
    p.add_argument("--out", dest="outfile", required=True)
    _add_config_args(p)

    p = sub.add_parser("predict")
    p.add_argument("--model", required=True, help="generator checkpoint")
    p.add_argument("--in", dest="infile", required=True, help="method records")
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--extractor", help="extractor checkpoint override")
    p.add_argument("--corpus", help="training method records (strategy=tfidf)")

    p = sub.add_parser("evaluate")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True, help="method records with reference names")
    p.add_argument("--report", required=True)

    p = sub.add_parser("run-all")
    p.add_argument("--data", required=True, help="method records with split tags")
    p.add_argument("--workdir", required=True)
    _add_config_args(p)

    p = sub.add_parser("make-toy-corpus")
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=11)
    return parser


def _restore_extractor(path, vocab: Vocab) -> tuple[ExtractorModel, RunConfig]:
    saved = nn.ParamStore.read_config(path)
    saved.pop("kind", None)
    config = RunConfig(**saved)
    store, model = new_extractor(config, vocab)
    store.load(path)
    return model, config


def _restore_generator(path, vocab: Vocab) -> tuple[GeneratorModel, RunConfig]:
    saved = nn.ParamStore.read_config(path)
    saved.pop("kind", None)
    config = RunConfig(**saved)
    store, model = new_generator(config, vocab)
    store.load(path)
    return model, config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (DataError, ParseError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except TrainingError as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return 3
    except NamegenError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "preprocess":
        if args.pre_parsed:
            graphs = []
            with open(args.infile, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if line.strip():
                        try:
                            graphs.append(build_graph_from_record(json.loads(line)))
                        except json.JSONDecodeError as e:
                            raise DataError(f"line {lineno}: {e}") from e
        else:
            graphs = preprocess_records(read_method_records(args.infile))
        with open(args.outfile, "w", encoding="utf-8") as fh:
            for g in graphs:
                fh.write(serialize_graph(g) + "\n")
        print(f"wrote {len(graphs)} graphs to {args.outfile}")
        return 0

    if cmd == "stats":
        records = read_method_records(args.infile)
        ratio, buckets = shared_token_stats(records)
        print(f"name-subtoken coverage by body: {ratio:.4f}")
        print("methods by shared-token count:")
        for k in ("0", "1", "2", "3", ">=4"):
            print(f"  {k}: {buckets[k]}")
        return 0

    if cmd == "build-vocab":
        graphs = read_graphs(args.infile)
        vocab = build_vocab(graphs, min_freq=args.min_freq)
        vocab.save(args.outfile)
        print(f"vocabulary size {len(vocab)} written to {args.outfile}")
        return 0

    if cmd == "train-extractor":
        config = _resolve_config(args)
        vocab = Vocab.load(args.vocab)
        train_graphs = read_graphs(args.data)
        valid_graphs = read_graphs(args.valid) if args.valid else []
        store, _, history = train_extractor(config, train_graphs, valid_graphs,
                                            vocab, log=print)
        store.save(args.outfile, {"kind": "extractor", **asdict(config)})
        print(f"extractor checkpoint written to {args.outfile}")
        return 0

    if cmd == "extract-keywords":
        records = read_method_records(args.infile)
        model = vocab = tfidf_stats = None
        if args.strategy == "extractor":
            if not args.model or not args.vocab:
                raise DataError("--model and --vocab required for strategy=extractor")
            vocab = Vocab.load(args.vocab)
            model, _ = _restore_extractor(args.model, vocab)
        elif args.strategy == "tfidf":
            corpus = read_method_records(args.corpus) if args.corpus else records
            tfidf_stats = TfidfStats.from_corpus(corpus)
        quality = []
        with open(args.outfile, "w", encoding="utf-8") as fh:
            for rec in records:
                graph = build_graph(rec) if args.strategy == "extractor" else None
                ks = keywords_for(args.strategy, rec, graph, vocab=vocab,
                                  model=model, tfidf_stats=tfidf_stats,
                                  k=args.k, seed=args.seed)
                fh.write(json.dumps({
                    "id": rec.method_id, "keywords": ks.keywords,
                    "scores": [round(s, 6) for s in ks.scores],
                    "provenance": ks.provenance or args.strategy,
                }, sort_keys=True) + "\n")
                if args.quality:
                    quality.append(keyword_quality(ks, rec.name_subtokens))
        if args.quality and quality:
            for label, idx in (("ROUGE-1", 0), ("ROUGE-2", 1), ("ROUGE-L", 2)):
                f1 = sum(q[idx].f1 for q in quality) / len(quality)
                print(f"keyword quality {label} F1: {f1:.4f}")
        return 0

    if cmd == "train-generator":
        config = _resolve_config(args)
        train_path = os.path.join(args.data, "train.jsonl")
        valid_path = os.path.join(args.data, "valid.jsonl")
        train_recs = read_method_records(train_path)
        valid_recs = (read_method_records(valid_path)
                      if os.path.exists(valid_path) else [])
        vocab_path = args.vocab or os.path.join(args.data, "vocab.json")
        if os.path.exists(vocab_path):
            vocab = Vocab.load(vocab_path)
        else:
            vocab = build_vocab(preprocess_records(train_recs), min_freq=config.min_freq)
        ext_model = None
        tfidf_stats = None
        if config.keyword_strategy == "extractor":
            if not args.extractor:
                raise DataError("--extractor required for keyword_strategy=extractor")
            ext_model, _ = _restore_extractor(args.extractor, vocab)
        elif config.keyword_strategy == "tfidf":
            tfidf_stats = TfidfStats.from_corpus(train_recs)
        tr = make_train_examples(train_recs, preprocess_records(train_recs),
                                 vocab, config, ext_model, tfidf_stats)
        va = make_train_examples(valid_recs, preprocess_records(valid_recs),
                                 vocab, config, ext_model, tfidf_stats)
        store, model = new_generator(config, vocab)
        train_generator(model, store, tr, va, vocab,
                        config.train_settings(config.generator_epochs), log=print)
        store.save(args.outfile, {"kind": "generator", **asdict(config)})
        print(f"generator checkpoint written to {args.outfile}")
        return 0

    if cmd == "predict":
        vocab = Vocab.load(args.vocab)
        model, config = _restore_generator(args.model, vocab)
        records = read_method_records(args.infile)
        ext_model = None
        tfidf_stats = None
        if config.keyword_strategy == "extractor":
            if not args.extractor:
                raise DataError("--extractor checkpoint required for predictions")
            ext_model, _ = _restore_extractor(args.extractor, vocab)
        elif config.keyword_strategy == "tfidf":
            corpus = read_method_records(args.corpus) if args.corpus else records
            tfidf_stats = TfidfStats.from_corpus(corpus)
        with open(args.outfile, "w", encoding="utf-8") as fh:
            for rec in records:
                graph = build_graph(rec)
                ks = keywords_for(config.keyword_strategy, rec, graph, vocab=vocab,
                                  model=ext_model, tfidf_stats=tfidf_stats,
                                  k=config.keyword_k, seed=config.seed,
                                  threshold=config.keyword_threshold)
                kw_ids = [vocab.id_of(w) for w in ks.keywords]
                toks, pgens = model.decode(graph, kw_ids, vocab)
                fh.write(json.dumps({
                    "id": rec.method_id, "predicted": toks,
                    "keywords": ks.keywords,
                    "p_gen": [round(p, 6) for p in pgens],
                }, sort_keys=True) + "\n")
        print(f"predictions written to {args.outfile}")
        return 0

    if cmd == "evaluate":
        records = read_method_records(args.ref)
        refs = {r.method_id: r.name_subtokens for r in records}
        shared = {r.method_id: shared_token_count(r) for r in records}
        preds = {}
        with open(args.pred, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    preds[rec["id"]] = [str(t) for t in rec["predicted"]]
                except (json.JSONDecodeError, KeyError) as e:
                    raise DataError(f"line {lineno}: bad prediction record: {e}") from e
        report = evaluate_corpus(preds, refs, shared)
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.format())
        print(report.format())
        return 0

    if cmd == "run-all":
        config = _resolve_config(args)
        records = read_method_records(args.data)
        run_pipeline(config, records, args.workdir)
        return 0

    if cmd == "make-toy-corpus":
        from .toycorpus import generate_toy_corpus, write_records
        write_records(args.outfile, generate_toy_corpus(args.n, args.seed))
        print(f"toy corpus ({args.n} methods) written to {args.outfile}")
        return 0

    raise DataError(f"unknown command {cmd!r}")


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``medner <command> ...``.

Run configuration lives in an INI file read by :mod:`configparser`.  Grammar:

* ``[run]``: ``family`` (bilstm_crf, encoder_linear, encoder_bilstm,
  dual_encoder_linear, dual_encoder_bilstm), ``seed``, ``output_dir``.
* ``[data]``: ``format`` (pubtator, i2b2, conll), ``scheme`` (i2b2,
  medmentions_full, medmentions_st21pv, custom), ``train``, ``dev``, ``test``
  paths and optional ``train_ids`` / ``dev_ids`` / ``test_ids`` files listing
  one document id per line.  A split with ids but no path reuses ``train``.
* ``[optimizer]``: any :class:`~medner.numerics.optim.OptimizerConfig` field.
  Unset keys take the family's defaults.
* ``[model]``: any :class:`~medner.models.taggers.ModelConfig` field.
* ``[cv]``: ``folds``, ``batch_sizes``, ``peak_lrs``, ``epochs`` as comma
  lists; ``epochs`` also accepts a range such as ``1-10``.

Relative paths resolve against the config file's directory.  Exit codes are
0 on success, 1 on runtime failure and 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from medner.corpus import (CorpusFormatError, Document, LabeledSequence, LabelScheme, corpus_stats, read_conll,
                           read_i2b2_dir, read_pubtator, resolve_labels, to_sentences, write_conll)
from medner.evaluation import compare_conll, evaluate_conll
from medner.models.taggers import FAMILIES, ModelConfig
from medner.numerics.optim import OptimizerConfig
from medner.tokenization import sentence_spans, word_tokenize
from medner.training import GridPoint, TrainConfig, kfold_cv, load_tagger, score_tagger, train

log = logging.getLogger("medner")

FORMATS = ("pubtator", "i2b2", "conll")
SCHEMES = ("i2b2", "medmentions_full", "medmentions_st21pv", "custom")
SPLITS = ("train", "dev", "test")


class ConfigError(ValueError):
    """Invalid command line or configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    train: TrainConfig
    data_format: str
    scheme: str
    paths: dict
    ids: dict
    output_dir: Path
    grid: list[GridPoint]

    def canonical(self) -> dict:
        return {"train": self.train.as_dict(), "format": self.data_format, "scheme": self.scheme,
                "paths": {k: str(v) for k, v in self.paths.items()},
                "ids": {k: str(v) for k, v in self.ids.items()},
                "grid": [p.key() for p in self.grid]}

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def run_dir(self, command: str) -> Path:
        return self.output_dir / f"{command}-{self.train.family}-{self.digest()}-seed{self.train.seed}"


def _coerce(section: str, key: str, raw: str, target):
    raw = raw.strip()
    try:
        if target is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        if raw.lower() in ("", "none") and target is not str:
            return None
        return target(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {target.__name__}") from None


def _field_types(cls) -> dict:
    out = {}
    for f in fields(cls):
        t = str(f.type)
        out[f.name] = bool if "bool" in t else int if t.startswith("int") else float if t.startswith("float") else str
    return out


def _section(cp, name: str, cls) -> dict:
    if not cp.has_section(name):
        return {}
    types = _field_types(cls)
    out = {}
    for key, raw in cp.items(name):
        if key not in types:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _coerce(name, key, raw, types[key])
    return out


def _list(section: str, key: str, raw: str, target) -> list:
    items = []
    for part in raw.split(","):
        part = part.strip()
        if target is int and "-" in part:
            lo, hi = (_coerce(section, key, x, int) for x in part.split("-", 1))
            items.extend(range(lo, hi + 1))
        elif part:
            items.append(_coerce(section, key, part, target))
    return items


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    run = cp["run"] if cp.has_section("run") else {}
    family = run.get("family", "bilstm_crf").strip()
    if family not in FAMILIES:
        raise ConfigError(f"[run] family must be one of {FAMILIES}, got {family!r}")
    seed = _coerce("run", "seed", run.get("seed", "0"), int)
    output_dir = base / run.get("output_dir", "runs").strip()

    data = cp["data"] if cp.has_section("data") else {}
    data_format = data.get("format", "pubtator").strip()
    if data_format not in FORMATS:
        raise ConfigError(f"[data] format must be one of {FORMATS}, got {data_format!r}")
    scheme = data.get("scheme", "custom").strip()
    if scheme not in SCHEMES:
        raise ConfigError(f"[data] scheme must be one of {SCHEMES}, got {scheme!r}")
    paths, ids = {}, {}
    for split in SPLITS:
        if data.get(split, "").strip():
            paths[split] = base / data[split].strip()
        if data.get(f"{split}_ids", "").strip():
            ids[split] = base / data[f"{split}_ids"].strip()
            paths.setdefault(split, paths.get("train"))
    if "train" not in paths or paths["train"] is None:
        raise ConfigError("[data] train path is required")
    for p in list(paths.values()) + list(ids.values()):
        if not p.exists():
            raise ConfigError(f"referenced path {p} does not exist")

    defaults = TrainConfig.for_family(family)
    try:
        opt = OptimizerConfig(**(asdict(defaults.optimizer) | _section(cp, "optimizer", OptimizerConfig)))
        model = ModelConfig(**_section(cp, "model", ModelConfig))
        cv = cp["cv"] if cp.has_section("cv") else {}
        folds = _coerce("cv", "folds", cv.get("folds", "10"), int)
        tc = TrainConfig(family, opt, model, folds, seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    grid = [GridPoint(b, lr, e)
            for b in _list("cv", "batch_sizes", cv.get("batch_sizes", "16, 32"), int)
            for lr in _list("cv", "peak_lrs", cv.get("peak_lrs", "2e-5, 3e-5, 5e-5, 1e-4"), float)
            for e in _list("cv", "epochs", cv.get("epochs", "1-10"), int)]
    return RunConfig(tc, data_format, scheme, paths, ids, output_dir, grid)


# ---------------------------------------------------------------------------
# data loading

def _read_ids(path) -> set[str]:
    return {line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()}


def read_documents(fmt: str, path, ids_path=None) -> list[Document]:
    if fmt == "pubtator":
        docs = read_pubtator(path)
    elif fmt == "i2b2":
        docs = read_i2b2_dir(path)
    else:
        raise ConfigError(f"format {fmt!r} does not carry documents")
    if ids_path is not None:
        keep = _read_ids(ids_path)
        docs = [d for d in docs if d.doc_id in keep]
    return docs


def _documents_as_sentences(docs, scheme) -> list[list[LabeledSequence]]:
    return [to_sentences(resolve_labels(d, scheme)) for d in docs]


def load_splits(cfg: RunConfig) -> tuple[dict[str, list[list[LabeledSequence]]], list[str]]:
    """Per split, the sentences of each document, plus the tag inventory."""
    if cfg.data_format == "conll":
        splits = {s: [[seq] for seq in read_conll(p)] for s, p in cfg.paths.items()}
        labels = sorted({t[2:] for docs in splits.values() for d in docs for s in d for t in s.tags if t != "O"})
        return splits, ["O"] + [f"{p}-{lab}" for lab in labels for p in ("B", "I")]
    docs = {s: read_documents(cfg.data_format, p, cfg.ids.get(s)) for s, p in cfg.paths.items()}
    scheme = LabelScheme.named(cfg.scheme, [d for ds in docs.values() for d in ds])
    return {s: _documents_as_sentences(ds, scheme) for s, ds in docs.items()}, scheme.tags


def _flat(docs) -> list[LabeledSequence]:
    return [s for d in docs for s in d]


def _with_predictions(seqs, predicted) -> list[LabeledSequence]:
    return [LabeledSequence(s.tokens, p, s.doc_id) for s, p in zip(seqs, predicted)]


# ---------------------------------------------------------------------------
# commands

def cmd_convert(args) -> int:
    docs = read_documents(args.format, args.input, args.ids)
    scheme = LabelScheme.named(args.scheme, docs)
    seqs = _flat(_documents_as_sentences(docs, scheme))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_conll(seqs, out)
    stats = corpus_stats(docs, scheme).as_dict()
    stats_path = Path(args.stats) if args.stats else out.with_suffix(".stats.json")
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_stats(args) -> int:
    docs = read_documents(args.format, args.input, args.ids)
    scheme = LabelScheme.named(args.scheme, docs)
    print(json.dumps(corpus_stats(docs, scheme).as_dict(), indent=2, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    splits, tags = load_splits(cfg)
    run_dir = cfg.run_dir("train")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.canonical(), indent=2, sort_keys=True) + "\n")
    train_seqs = _flat(splits["train"])
    dev_seqs = _flat(splits["dev"]) if "dev" in splits else None
    result = train(train_seqs, cfg.train, dev_seqs, tags, run_dir)

    final = {"event": "final", "final_loss": result.final_loss, "steps": result.steps,
             "checkpoint": result.checkpoint.name if result.checkpoint else None}
    for split in SPLITS:
        if split not in splits:
            continue
        seqs = _flat(splits[split])
        score = score_tagger(result.tagger, seqs)
        final.update({f"{split}_p": score.precision, f"{split}_r": score.recall, f"{split}_f1": score.f1})
        write_conll(_with_predictions(seqs, result.tagger.predict([s.tokens for s in seqs])),
                    run_dir / f"{split}.pred.conll")
    # float repr keeps the 64-bit loss exact in the log
    with open(run_dir / "train_log.jsonl", "a", encoding="utf-8") as f:
        f.write(json.dumps(final) + "\n")
    print(run_dir)
    print(json.dumps(final))
    return 0


def cmd_cv(args) -> int:
    cfg = load_config(args.config)
    if cfg.data_format == "conll":
        log.warning("CoNLL input has no document boundaries; each sentence is treated as a document")
    splits, tags = load_splits(cfg)
    result = kfold_cv(splits["train"], cfg.grid, cfg.train, k=cfg.train.folds, tags=tags)
    run_dir = cfg.run_dir("cv")
    run_dir.mkdir(parents=True, exist_ok=True)
    report = json.dumps(result.as_dict(), indent=2, sort_keys=True) + "\n"
    (run_dir / "cv.json").write_text(report, encoding="utf-8")
    print(run_dir)
    print(json.dumps(result.as_dict()["chosen"]))
    return 0


def cmd_eval(args) -> int:
    report = evaluate_conll(args.gold, args.pred)
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    print(report.to_json() if args.json else report.to_table(), end="" if not args.json else "\n")
    return 0


def cmd_compare(args) -> int:
    result = compare_conll(args.gold, args.pred_a, args.pred_b)
    text = json.dumps(result.as_dict(), indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    counts = result.as_dict()["counts"]
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _raw_sentences(text: str) -> list[list[str]]:
    toks = word_tokenize(text).tokens
    return [[t.text for t in toks[lo:hi]] for lo, hi in sentence_spans(toks, text)]


def cmd_predict(args) -> int:
    tagger, _ = load_tagger(args.checkpoint)
    source = Path(args.input)
    if args.conll:
        token_lists = [s.tokens for s in read_conll(source)]
    else:
        token_lists = _raw_sentences(source.read_text(encoding="utf-8"))
    seqs = [LabeledSequence(t, p) for t, p in zip(token_lists, tagger.predict(token_lists))]
    if args.output:
        write_conll(seqs, args.output)
    else:
        write_conll(seqs, sys.stdout)
    return 0


# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="medner", description="Biomedical and clinical named entity recognition.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def corpus_args(p):
        p.add_argument("--format", choices=("pubtator", "i2b2"), default="pubtator")
        p.add_argument("--scheme", choices=SCHEMES, default="custom")
        p.add_argument("--ids", help="file listing the document ids to keep, one per line")
        p.add_argument("input", help="PubTator file or i2b2 directory (txt/ and concept/)")

    p = sub.add_parser("convert", help="corpus to CoNLL IOB plus statistics")
    corpus_args(p)
    p.add_argument("output", help="CoNLL file to write")
    p.add_argument("--stats", help="statistics JSON (default: OUTPUT with .stats.json suffix)")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("stats", help="print corpus statistics")
    corpus_args(p)
    p.set_defaults(func=cmd_stats)

    for name, func, text in (("train", cmd_train, "train a tagger from a config file"),
                             ("cv", cmd_cv, "k-fold grid search from a config file")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="strict entity-level scores and error breakdown")
    p.add_argument("gold")
    p.add_argument("pred")
    p.add_argument("--output-dir")
    p.add_argument("--json", action="store_true", help="print the JSON report instead of the table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="which gold entities each of two systems recovers")
    p.add_argument("gold")
    p.add_argument("pred_a")
    p.add_argument("pred_b")
    p.add_argument("--output")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("predict", help="tag raw text (or CoNLL tokens) with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--conll", action="store_true", help="input is CoNLL; only the token column is used")
    p.add_argument("--output")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"medner: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"medner: config error: {exc}", file=sys.stderr)
        return 2
    except (CorpusFormatError, OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"medner: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

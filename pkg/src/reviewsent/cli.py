"""Command-line entry point: ``reviewsent <subcommand> [flags]``.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error.

Defaults can come from an INI file (``--config``): keys in ``[global]`` and in
the section named after the subcommand fill in flags that were not given on
the command line.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import corpus, langid
from .corpus import SplitSpec
from .evaluation import (
    RunResult,
    collapse,
    divergence_notes,
    load_published_confusion,
    metrics,
    ratings_confusion,
    read_prediction_log,
    render_report,
    write_prediction_log,
)
from .llm_client import AlignmentError, AuthError, RemoteConfig, classify_remote, compare_runs
from .model import ModelConfig, load_weights, save_weights
from .tokenizer import (
    CoverageError,
    UnigramVocab,
    WordPieceVocab,
    byte_encode,
    unigram_encode,
    wordpiece_encode,
    wordpiece_train,
)
from .train import TrainConfig, predict_records, train_loop, write_history

log = logging.getLogger("reviewsent")

COMMANDS = ("clean", "langid", "split", "tokenize", "train", "predict", "evaluate",
            "compare-remote", "report")
# corpus, metrics, alignment and weight-file errors are all ValueErrors
VALIDATION_ERRORS = (ValueError, CoverageError, FileNotFoundError, configparser.Error)


class UsageError(Exception):
    pass


class ValidationError(ValueError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def stage_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _fractions(text: str) -> tuple[Fraction, ...]:
    try:
        return tuple(Fraction(x.strip()) for x in text.split(","))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from None


def _target(text: str) -> dict[int, Fraction]:
    out = {}
    try:
        for item in text.split(","):
            k, v = item.split(":")
            out[int(k)] = Fraction(v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad target {text!r}; expected rating:share,...") from None
    return out


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with [global] and per-stage sections")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--verbose", "-v", action="store_true")

    ap = Parser(prog="reviewsent", description="star-rating review sentiment pipeline",
                parents=[common])
    sub = ap.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("clean", parents=[common], help="anonymize and clean a raw export")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--max-words", type=int, default=450)
    p.add_argument("--log", type=Path, help="write the removal log as JSON")

    p = sub.add_parser("langid", parents=[common], help="keep target-language reviews")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--separated", type=Path, required=True)
    p.add_argument("--keep", default="lt")
    p.add_argument("--profiles", type=Path, nargs="*", help="profile JSON files (default: bundled)")
    p.add_argument("--save-profiles", type=Path, help="directory to write the profiles used")
    p.add_argument("--log", type=Path)

    p = sub.add_parser("split", parents=[common], help="dedup, down-sample and split")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--eval", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--fractions", type=_fractions, default="0.68,0.20,0.12")
    p.add_argument("--target", type=_target, help="rating:share list, e.g. 5:0.247,4:0.215,...")
    p.add_argument("--no-stratify", action="store_true")

    p = sub.add_parser("tokenize", parents=[common], help="train a vocabulary and/or encode texts")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, help="JSONL of token sequences")
    p.add_argument("--scheme", choices=("wordpiece", "byte", "unigram"), default="wordpiece")
    p.add_argument("--vocab", type=Path, help="existing vocabulary file")
    p.add_argument("--vocab-size", type=int, default=500, help="train a WordPiece vocab of this size")
    p.add_argument("--save-vocab", type=Path)

    p = sub.add_parser("train", parents=[common], help="fine-tune a toy model")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--eval", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--mode", choices=("encoder_classifier", "encoder_decoder"), default="encoder_classifier")
    p.add_argument("--preset", choices=("toy", "reference"), default="toy")
    p.add_argument("--vocab", type=Path, help="WordPiece vocab; trained on --train when absent")
    p.add_argument("--vocab-size", type=int, default=300)
    p.add_argument("--max-positions", type=int, default=64)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--patience", type=int, default=2)
    p.add_argument("--regime", choices=("full", "head_only"), default="full")
    p.add_argument("--weight-dtype", choices=("f32", "f64"), default="f64")

    p = sub.add_parser("predict", parents=[common], help="write a prediction log")
    p.add_argument("--model-dir", type=Path, required=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", parents=[common], help="metrics for a prediction log")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, help="records or {id,true} log; default: 'true' in --pred")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--collapse", action="store_true", help="also write the 3-class report")
    p.add_argument("--name", default="model")

    p = sub.add_parser("compare-remote", parents=[common], help="label with a remote model and compare")
    p.add_argument("--in", dest="input", type=Path, required=True, help="records with true ratings")
    p.add_argument("--local-pred", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--endpoint", default=RemoteConfig.endpoint)
    p.add_argument("--model", default=RemoteConfig.model)
    p.add_argument("--cache", type=Path)
    p.add_argument("--rpm", type=int, default=RemoteConfig.requests_per_minute)
    p.add_argument("--max-retries", type=int, default=RemoteConfig.max_retries)
    p.add_argument("--timeout", type=float, default=RemoteConfig.timeout)
    p.add_argument("--prompt", type=Path, help="prompt template file with one {review} slot")

    p = sub.add_parser("report", parents=[common], help="combine metrics into one document")
    p.add_argument("--inputs", type=Path, nargs="*", default=[], help="report JSON files from evaluate")
    p.add_argument("--published", action="store_true",
                   help="include the bundled published confusion counts and divergence notes")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=("markdown", "json"), default="markdown")
    return ap


def _config_defaults(sub: Parser, path: Path, command: str) -> dict:
    if not path.is_file():
        raise ValidationError(f"config file {path} not found")
    ini = configparser.ConfigParser()
    ini.read(path, encoding="utf-8")
    dests = {a.dest: a for a in sub._actions}
    defaults = {}
    for section in ("global", command):
        if not ini.has_section(section):
            continue
        for key, value in ini.items(section):
            dest = "input" if key == "in" else key.replace("-", "_")
            action = dests.get(dest)
            if action is None:
                if section == "global":
                    continue  # global keys are shared; a stage uses the ones it knows
                raise ValidationError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                if action.nargs == 0:
                    defaults[dest] = value.strip().lower() in ("1", "true", "yes", "on")
                elif action.nargs in ("*", "+"):
                    defaults[dest] = [action.type(v) if action.type else v for v in value.split()]
                else:
                    defaults[dest] = action.type(value) if action.type else value
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise ValidationError(f"{path}: bad value for {key!r} in [{section}]: {e}") from None
    return defaults


def apply_config(parser: Parser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv``; config-file values become defaults so flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in HANDLERS), None)
    if known.config is not None and command is not None:
        sub = parser._subparsers._group_actions[0].choices[command]
        defaults = _config_defaults(sub, known.config, command)
        for action in sub._actions:
            if action.dest in defaults:
                action.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# Path validation


INPUT_FLAGS = ("input", "train", "eval", "pred", "truth", "local_pred", "vocab", "model_dir",
               "prompt", "config")
OUTPUT_FLAGS = ("out", "separated", "log", "out_dir", "save_vocab", "save_profiles")


def validate_paths(args: argparse.Namespace) -> None:
    problems = []
    is_split = args.command == "split"
    for name in INPUT_FLAGS:
        if is_split and name in ("train", "eval"):
            continue
        path = getattr(args, name, None)
        if path is not None and not Path(path).exists():
            flag = "in" if name == "input" else name.replace("_", "-")
            problems.append(f"--{flag} {path} does not exist")
    for p in getattr(args, "profiles", None) or []:
        if not p.exists():
            problems.append(f"profile {p} does not exist")
    for p in getattr(args, "inputs", None) or []:
        if not p.exists():
            problems.append(f"report input {p} does not exist")
    outputs = [getattr(args, n, None) for n in OUTPUT_FLAGS]
    if is_split:
        outputs += [args.train, args.eval, args.test]
    for path in outputs:
        if path is not None and not Path(path).parent.exists():
            problems.append(f"output directory {Path(path).parent} does not exist")
    if args.command == "compare-remote":
        cfg = RemoteConfig(endpoint=args.endpoint, model=args.model)
        if cfg.token is None and not cfg.is_local:
            problems.append(f"no auth token in ${cfg.token_env} for remote endpoint {cfg.endpoint}")
    if problems:
        raise ValidationError("; ".join(problems))


# ---------------------------------------------------------------------------
# Subcommands


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def cmd_clean(args) -> str:
    rs = corpus.anonymize(corpus.ingest(args.input, args.format))
    kept, clog = corpus.clean(rs, args.max_words)
    corpus.write_jsonl(kept, args.out)
    if args.log:
        _write_json(clog.to_json(), args.log)
    counts = {k: v for k, v in clog.counts().items() if v}
    removed = ", ".join(f"{k}={v}" for k, v in counts.items()) or "none"
    return f"clean: kept {clog.kept_count} of {len(rs)}; removed {len(clog.removed)} ({removed})"


def cmd_langid(args) -> str:
    rs = corpus.read_jsonl(args.input)
    profiles = langid.load_profiles(args.profiles) if args.profiles else langid.default_profiles()
    if args.save_profiles:
        args.save_profiles.mkdir(exist_ok=True)
        for p in profiles:
            p.save(args.save_profiles / f"{p.lang}.json")
    kept, separated, clog = langid.filter_language(rs, args.keep, profiles)
    corpus.write_jsonl(kept, args.out)
    corpus.write_jsonl(separated, args.separated)
    if args.log:
        _write_json(clog.to_json(), args.log)
    return f"langid: kept {len(kept)} {args.keep}, separated {len(separated)}"


def cmd_split(args) -> str:
    rs = corpus.read_jsonl(args.input)
    rs = corpus.dedup_downsample(rs, args.target, stage_seed(args.seed, "downsample"))
    spec = SplitSpec(args.fractions, stage_seed(args.seed, "split"), not args.no_stratify)
    parts = corpus.split(rs, spec)
    for part, path in zip(parts, (args.train, args.eval, args.test)):
        corpus.write_jsonl(part, path)
    return "split: " + "/".join(str(len(p)) for p in parts) + f" from {len(rs)} records"


def _load_tokenizer(scheme: str, vocab_path: Path | None):
    if scheme == "byte":
        return (lambda t: byte_encode(t, add_eos=True)), None
    if vocab_path is None:
        raise ValidationError(f"--vocab is required for the {scheme} scheme")
    if scheme == "unigram":
        vocab = UnigramVocab.load(vocab_path)
        return (lambda t: unigram_encode(t, vocab)), vocab
    vocab = WordPieceVocab.load(vocab_path)
    return (lambda t: wordpiece_encode(t, vocab, True)), vocab


def cmd_tokenize(args) -> str:
    rs = corpus.read_jsonl(args.input)
    if args.scheme == "wordpiece" and args.vocab is None:
        vocab = wordpiece_train([r.text for r in rs], args.vocab_size)
        if args.save_vocab:
            vocab.save(args.save_vocab)
        tokenize = lambda t: wordpiece_encode(t, vocab, True)  # noqa: E731
        size = len(vocab)
    else:
        tokenize, vocab = _load_tokenizer(args.scheme, args.vocab)
        size = 259 if vocab is None else len(vocab)
    n_tokens = 0
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for r in rs:
                seq = tokenize(r.text)
                n_tokens += len(seq)
                fh.write(json.dumps({"id": r.id, **seq.to_json()}, ensure_ascii=False) + "\n")
    return f"tokenize: {args.scheme} vocab of {size}; {len(rs)} texts, {n_tokens} tokens"


def cmd_train(args) -> str:
    train_rs = corpus.read_jsonl(args.train)
    eval_rs = corpus.read_jsonl(args.eval)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.mode == "encoder_decoder":
        scheme, vocab_file, vocab_size = "byte", None, 259
        tokenize = lambda t: byte_encode(t, add_eos=True)  # noqa: E731
    else:
        scheme = "wordpiece"
        vocab = (WordPieceVocab.load(args.vocab) if args.vocab
                 else wordpiece_train([r.text for r in train_rs], args.vocab_size))
        vocab_file = "vocab.txt"
        vocab.save(args.out_dir / vocab_file)
        vocab_size = len(vocab)
        tokenize = lambda t: wordpiece_encode(t, vocab, True)  # noqa: E731
    cfg = ModelConfig.preset(args.preset, vocab_size, mode=args.mode, max_positions=args.max_positions)
    tcfg = TrainConfig(max_epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       patience=args.patience, regime=args.regime, seed=stage_seed(args.seed, "train"))
    result = train_loop(train_rs, eval_rs, tokenize, cfg, tcfg)
    save_weights(result.weights, args.out_dir / "weights.stsf", dtype=args.weight_dtype)
    write_history(result.history, args.out_dir / "train_log.jsonl")
    _write_json({"config": cfg.to_json(), "tokenizer": {"scheme": scheme, "vocab": vocab_file},
                 "train": {**tcfg.__dict__}, "best_epoch": result.best_epoch,
                 "stop_reason": result.stop_reason}, args.out_dir / "model.json")
    best = result.history[result.best_epoch - 1]
    return (f"train: {len(result.history)} epochs ({result.stop_reason}), best epoch {result.best_epoch} "
            f"val_loss={best.val_loss:.4f} val_acc={best.val_accuracy:.4f}")


def cmd_predict(args) -> str:
    meta_path = args.model_dir / "model.json"
    if not meta_path.exists():
        raise ValidationError(f"{meta_path} not found")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    cfg = ModelConfig.from_json(meta["config"])
    tok = meta["tokenizer"]
    vocab_path = args.model_dir / tok["vocab"] if tok.get("vocab") else None
    tokenize, _ = _load_tokenizer(tok["scheme"], vocab_path)
    w = load_weights(args.model_dir / "weights.stsf", cfg)
    w = {k: v.astype(np.float64) for k, v in w.items()}
    rs = corpus.read_jsonl(args.input)
    rows = predict_records(rs, tokenize, w, cfg)
    write_prediction_log(rows, args.out)
    correct = sum(r["pred"] == r["true"] for r in rows)
    return f"predict: {len(rows)} predictions, {correct} correct"


def _truths(args, rows) -> dict[str, int]:
    if args.truth is None:
        return {r["id"]: int(r["true"]) for r in rows}
    first = Path(args.truth).read_text(encoding="utf-8").split("\n", 1)[0]
    if '"rating"' in first:
        return {r.id: r.rating for r in corpus.read_jsonl(args.truth)}
    return {r["id"]: int(r["true"]) for r in read_prediction_log(args.truth)}


def cmd_evaluate(args) -> str:
    rows = read_prediction_log(args.pred)
    truths = _truths(args, rows)
    preds = {r["id"]: r["pred"] for r in rows}
    missing = sorted(set(truths) ^ set(preds))
    if missing:
        raise AlignmentError(f"ids not present in both prediction and truth: {', '.join(missing[:10])}")
    order = sorted(truths)
    cm5 = ratings_confusion([preds[i] for i in order], [truths[i] for i in order])
    args.out_dir.mkdir(parents=True, exist_ok=True)
    runs = [RunResult(f"{args.name} (5-class)", metrics(cm5), cm5)]
    if args.collapse:
        cm3 = collapse(cm5)
        runs.append(RunResult(f"{args.name} (3-class)", metrics(cm3), cm3))
    for run, stem in zip(runs, ("report_5class", "report_3class")):
        (args.out_dir / f"{stem}.json").write_text(render_report([run], "json"), encoding="utf-8")
        (args.out_dir / f"{stem}.md").write_text(render_report([run], "markdown"), encoding="utf-8")
    summary = ", ".join(f"{r.name} acc={r.report.accuracy:.4f}" for r in runs)
    return f"evaluate: {summary}"


def cmd_compare_remote(args) -> str:
    rs = corpus.read_jsonl(args.input)
    template = args.prompt.read_text(encoding="utf-8") if args.prompt else RemoteConfig.prompt_template
    cfg = RemoteConfig(endpoint=args.endpoint, model=args.model, prompt_template=template,
                       timeout=args.timeout, max_retries=args.max_retries, requests_per_minute=args.rpm)
    verdicts = classify_remote(rs, cfg, args.cache)
    local = read_prediction_log(args.local_pred)
    truths = {r.id: r.rating for r in rs}
    cmp = compare_runs(local, verdicts, truths)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "remote_verdicts.jsonl", "w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    (args.out_dir / "comparison.md").write_text(cmp.render("markdown"), encoding="utf-8")
    (args.out_dir / "comparison.json").write_text(cmp.render("json"), encoding="utf-8")
    cached = sum(v.cached for v in verdicts)
    unmapped = sum(v.label is None for v in verdicts)
    remote_acc = cmp.by_name("remote (5-class)").report.accuracy
    local_acc = cmp.by_name("local (5-class)").report.accuracy
    return (f"compare-remote: {len(verdicts)} verdicts ({cached} cached, {unmapped} unmapped); "
            f"local acc={local_acc:.4f}, remote acc={remote_acc:.4f}")


def _runs_from_report_json(path: Path) -> list[RunResult]:
    from .evaluation import ConfusionMatrix

    doc = json.loads(path.read_text(encoding="utf-8"))
    runs = []
    for r in doc["runs"]:
        cm = ConfusionMatrix.from_json(r["confusion"])
        runs.append(RunResult(r["name"], metrics(cm), cm, list(r.get("notes", []))))
    return runs


def cmd_report(args) -> str:
    runs: list[RunResult] = []
    notes: list[str] = []
    for path in args.inputs:
        runs.extend(_runs_from_report_json(path))
    if args.published:
        cm5, fixture = load_published_confusion()
        cm3 = collapse(cm5)
        runs.append(RunResult("published counts (5-class)", metrics(cm5), cm5))
        runs.append(RunResult("published counts (3-class)", metrics(cm3), cm3))
        notes.extend(divergence_notes(cm5, fixture["published"]))
    if not runs:
        raise ValidationError("report needs --inputs and/or --published")
    args.out.write_text(render_report(runs, args.format, notes), encoding="utf-8")
    return f"report: {len(runs)} runs written to {args.out}"


HANDLERS = {
    "clean": cmd_clean,
    "langid": cmd_langid,
    "split": cmd_split,
    "tokenize": cmd_tokenize,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "compare-remote": cmd_compare_remote,
    "report": cmd_report,
}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = apply_config(parser, argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        validate_paths(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except (ValidationError, *VALIDATION_ERRORS) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = HANDLERS[args.command](args)
    except AuthError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValidationError, *VALIDATION_ERRORS) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    print(summary)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

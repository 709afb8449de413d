"""Command-line entry point: ``coattqa <subcommand> ...``.

Exit status is 0 on success, 1 when an input or configuration fails
validation (including usage errors), and 2 on runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .augment import DEFAULT_PIVOT, HttpTranslator, IdentityTranslator, MockTranslator, augment_dataset
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import SquadFormatError, featurize, load_squad, make_sentinel_dataset, read_squad, write_json_atomic, \
    write_squad
from .dump import dump_attention
from .ensemble import ensemble
from .gradcheck import COMPOSED_VARIANTS, TOLERANCE, run_suite
from .metrics import evaluate
from .model import QAModel
from .training import train

log = logging.getLogger("coattqa")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _read_json_object(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return data


def cmd_train(args) -> int:
    config = RunConfig.load(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    model = QAModel(config)
    dataset = load_squad(args.data, model.tokenizer, config.max_seq_len)
    if dataset.dropped:
        log.warning("dropped %d questions while loading %s", len(dataset.dropped), args.data)
    result = train(model, dataset.examples, config.train)
    out = Path(args.out)
    save_checkpoint(model, out / "model.ckpt")
    write_json_atomic({"losses": result.losses, "steps": result.steps,
                       "dropped": [list(d) for d in dataset.dropped]}, out / "train_log.json")
    print(f"trained {result.steps} updates, final loss {result.losses[-1]:.6f}; checkpoint at {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    dataset = load_squad(args.data, model.tokenizer, model.config.max_seq_len)
    results = model.predict(dataset.examples, threshold=args.threshold, max_answer_len=args.max_answer_len)
    predictions = {qid: pred.answer_text for qid, (pred, _) in results.items()}
    probabilities = {qid: prob for qid, (_, prob) in results.items()}
    report = evaluate(predictions, dataset.examples)
    write_json_atomic(predictions, args.pred_out)
    probs_out = args.probs_out or str(Path(args.pred_out).with_suffix(".probs.json"))
    write_json_atomic(probabilities, probs_out)
    write_json_atomic(report.to_json(), args.metrics_out, indent=2)
    print(f"F1 {report.f1:.2f}  EM {report.em:.2f}  HasAns F1 {report.has_ans_f1:.2f}  "
          f"NoAns F1 {report.no_ans_f1:.2f}  ({report.total} questions, {len(dataset.dropped)} dropped)")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    if len(args.preds) != len(args.probs):
        raise ValueError("--preds and --probs need the same number of files")
    preds = [_read_json_object(p) for p in args.preds]
    probs = [_read_json_object(p) for p in args.probs]
    text, prob = ensemble(preds, probs)
    write_json_atomic(text, args.out)
    if args.probs_out:
        write_json_atomic(prob, args.probs_out)
    print(f"ensembled {len(preds)} models over {len(text)} questions "
          f"({sum(1 for t in text.values() if t == '')} no-answer)")
    return EXIT_OK


def _translator(args):
    if args.translator == "identity":
        return IdentityTranslator()
    if args.translator == "mock":
        return MockTranslator(seed=args.seed)
    if not args.endpoint:
        raise ValueError("--endpoint is required with --translator http")
    return HttpTranslator(args.endpoint, cache_dir=args.cache_dir, max_in_flight=args.max_in_flight,
                          requests_per_second=args.rate)


def cmd_augment(args) -> int:
    raw = read_squad(args.data)
    out, manifest = augment_dataset(raw, args.fraction, _translator(args), seed=args.seed, pivot_lang=args.pivot)
    write_squad(out, args.out)
    manifest_path = args.manifest or str(Path(args.out).with_suffix(".manifest.json"))
    write_json_atomic(manifest.to_json(), manifest_path, indent=2)
    print(f"added {len(manifest.pairs)} paraphrased questions ({len(manifest.skipped)} skipped) -> {args.out}")
    return EXIT_OK


def cmd_dump_attention(args) -> int:
    model = load_checkpoint(args.model)
    raw = read_squad(args.data)
    # featurize without a length cap so overlong questions are reported rather than silently missing
    examples, dropped = featurize(raw, model.tokenizer, max_seq_len=sys.maxsize)
    found = [ex for ex in examples if ex.qid == args.id]
    if not found:
        reason = dict(dropped).get(args.id, "no such question id")
        raise ValueError(f"cannot dump {args.id!r}: {reason}")
    dump = dump_attention(model, found[0], args.out)
    print(f"wrote {len(dump['blocks'])} blocks of attention for {args.id} to {args.out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    results = run_suite(seed=args.seed, variants=None if args.all else ("composed[simple skip]",))
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:40s} {r.max_rel_error:.3e}  {r.seconds:6.2f}s  {status}")
    worst = max(r.max_rel_error for r in results)
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if worst <= TOLERANCE else EXIT_RUNTIME


def cmd_synth(args) -> int:
    raw = make_sentinel_dataset(args.n, seed=args.seed, vocab_size=args.vocab_size,
                                no_answer_fraction=args.no_answer_fraction, id_prefix=args.id_prefix)
    write_squad(raw, args.out)
    print(f"wrote {args.n} synthetic questions to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coattqa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from a flat JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="predict and score a SQuAD-v2 file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pred-out", required=True)
    p.add_argument("--metrics-out", required=True)
    p.add_argument("--probs-out", help="probability sidecar (default: <pred-out>.probs.json)")
    p.add_argument("--threshold", type=float, help="no-answer margin (default: from the checkpoint config)")
    p.add_argument("--max-answer-len", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble", help="combine prediction files with the no-answer veto")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--probs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probs-out")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("augment", help="add backtranslated question paraphrases")
    p.add_argument("--data", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--translator", choices=("mock", "identity", "http"), default="mock")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    p.add_argument("--pivot", default=DEFAULT_PIVOT)
    p.add_argument("--endpoint", help="translation endpoint for --translator http")
    p.add_argument("--cache-dir", help="on-disk translation cache for --translator http")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--rate", type=float, help="maximum requests per second")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("dump-attention", help="write C2Q/Q2C attention matrices for one question")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("grad-check", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--all", action="store_true", help=f"also check {len(COMPOSED_VARIANTS) - 1} extra variants")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("synth", help="generate the sentinel-span synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=512)
    p.add_argument("--no-answer-fraction", type=float, default=0.2)
    p.add_argument("--id-prefix", default="syn")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SquadFormatError, CheckpointError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""SQuAD-v2 ingestion, validation, featurization and the synthetic sentinel task."""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .encoder import CLS_ID, PAD_ID, SEP_ID, Token, Tokenizer

log = logging.getLogger(__name__)


class SquadFormatError(ValueError):
    """The input does not follow the SQuAD-v2 schema."""


@dataclass
class QAExample:
    qid: str
    question: str
    context: str
    answers: list[str]
    is_impossible: bool
    token_ids: np.ndarray
    m_q: np.ndarray
    m_c: np.ndarray
    context_tokens: list[Token]
    context_offset: int  # sequence index of the first context token
    gold_start: int
    gold_end: int

    @property
    def length(self) -> int:
        return len(self.token_ids)

    @property
    def context_positions(self) -> np.ndarray:
        return np.arange(self.context_offset, self.context_offset + len(self.context_tokens))

    def span_text(self, start: int, end: int) -> str:
        tokens = self.context_tokens
        first, last = tokens[start - self.context_offset], tokens[end - self.context_offset]
        return self.context[first.start:last.end]

    @property
    def gold_texts(self) -> list[str]:
        return [] if self.is_impossible else list(self.answers)


@dataclass
class SquadDataset:
    raw: dict[str, Any]
    examples: list[QAExample]
    dropped: list[tuple[str, str]] = field(default_factory=list)  # (qid, reason)

    def by_id(self) -> dict[str, QAExample]:
        return {ex.qid: ex for ex in self.examples}


@dataclass
class Batch:
    token_ids: np.ndarray
    m_q: np.ndarray
    m_c: np.ndarray
    gold_start: np.ndarray
    gold_end: np.ndarray

    @property
    def pad_mask(self) -> np.ndarray:
        return self.m_q | self.m_c


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

def _expect(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise SquadFormatError(f"{where}: {message}")


def validate_squad(data: Any, source: str = "<input>") -> None:
    """Check structural invariants; raise :class:`SquadFormatError` with a location."""
    _expect(isinstance(data, dict), source, "top level must be an object")
    _expect(isinstance(data.get("data"), list), source, "missing 'data' list")
    seen: set[str] = set()
    for a, article in enumerate(data["data"]):
        where_a = f"{source}: data[{a}]"
        _expect(isinstance(article, dict) and isinstance(article.get("paragraphs"), list),
                where_a, "article needs a 'paragraphs' list")
        for p, para in enumerate(article["paragraphs"]):
            where_p = f"{where_a}.paragraphs[{p}]"
            _expect(isinstance(para, dict), where_p, "paragraph must be an object")
            _expect(isinstance(para.get("context"), str), where_p, "'context' must be a string")
            _expect(isinstance(para.get("qas"), list), where_p, "'qas' must be a list")
            for q, qa in enumerate(para["qas"]):
                where_q = f"{where_p}.qas[{q}]"
                _expect(isinstance(qa, dict), where_q, "qa must be an object")
                qid = qa.get("id")
                _expect(isinstance(qid, str) and qid != "", where_q, "'id' must be a non-empty string")
                _expect(qid not in seen, where_q, f"duplicate id {qid!r}")
                seen.add(qid)
                _expect(isinstance(qa.get("question"), str), where_q, "'question' must be a string")
                impossible = qa.get("is_impossible", False)
                _expect(isinstance(impossible, bool), where_q, "'is_impossible' must be a boolean")
                answers = qa.get("answers", [])
                _expect(isinstance(answers, list), where_q, "'answers' must be a list")
                if impossible:
                    _expect(not answers, where_q, "unanswerable question must have no answers")
                else:
                    _expect(bool(answers), where_q, "answerable question needs at least one answer")
                for n, ans in enumerate(answers):
                    where_n = f"{where_q}.answers[{n}]"
                    _expect(isinstance(ans, dict) and isinstance(ans.get("text"), str),
                            where_n, "answer needs a 'text' string")
                    start = ans.get("answer_start")
                    _expect(isinstance(start, int) and not isinstance(start, bool) and start >= 0,
                            where_n, "'answer_start' must be a non-negative int")


def read_squad(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SquadFormatError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    validate_squad(data, str(path))
    return data


def iter_qas(raw: dict[str, Any]):
    for article in raw["data"]:
        for para in article["paragraphs"]:
            for qa in para["qas"]:
                yield para, qa


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------

def build_sequence(question_ids: list[int], context_ids: list[int]):
    """Lay out ``[CLS] question [SEP] context [SEP]`` and its masks.

    The question mask covers CLS, the question and the first SEP; the context
    mask covers the context and the final SEP, so the two masks partition the
    real tokens.
    """
    ids = [CLS_ID, *question_ids, SEP_ID, *context_ids, SEP_ID]
    n_q = len(question_ids) + 2
    m_q = np.zeros(len(ids), dtype=bool)
    m_q[:n_q] = True
    return np.asarray(ids, dtype=np.int64), m_q, ~m_q, n_q


def _align(tokens: list[Token], start: int, text: str) -> tuple[int, int] | None:
    end = start + len(text)
    first = next((i for i, t in enumerate(tokens) if t.start == start), None)
    last = next((i for i, t in enumerate(tokens) if t.end == end), None)
    if first is None or last is None or last < first:
        return None
    return first, last


def featurize(raw: dict[str, Any], tokenizer: Tokenizer, max_seq_len: int) -> tuple[list[QAExample], list[tuple[str, str]]]:
    examples: list[QAExample] = []
    dropped: list[tuple[str, str]] = []
    for para, qa in iter_qas(raw):
        context = para["context"]
        ctx_tokens = tokenizer.tokenize(context)
        q_tokens = tokenizer.tokenize(qa["question"])
        qid = qa["id"]
        if not ctx_tokens:
            dropped.append((qid, "empty context"))
            continue
        ids, m_q, m_c, offset = build_sequence(tokenizer.ids(q_tokens), tokenizer.ids(ctx_tokens))
        if len(ids) > max_seq_len:
            dropped.append((qid, f"sequence length {len(ids)} exceeds {max_seq_len}"))
            continue
        impossible = bool(qa.get("is_impossible", False))
        answers = [a["text"] for a in qa.get("answers", [])]
        if impossible:
            gold = (0, 0)
        else:
            first = qa["answers"][0]
            span = None
            if context[first["answer_start"]:first["answer_start"] + len(first["text"])] == first["text"]:
                span = _align(ctx_tokens, first["answer_start"], first["text"])
            if span is None:
                dropped.append((qid, "answer does not align with token boundaries"))
                continue
            gold = (span[0] + offset, span[1] + offset)
        examples.append(QAExample(
            qid=qid, question=qa["question"], context=context, answers=answers, is_impossible=impossible,
            token_ids=ids, m_q=m_q, m_c=m_c, context_tokens=ctx_tokens, context_offset=offset,
            gold_start=gold[0], gold_end=gold[1]))
    for qid, reason in dropped:
        log.warning("dropping %s: %s", qid, reason)
    return examples, dropped


def load_squad(path: str | Path, tokenizer: Tokenizer, max_seq_len: int) -> SquadDataset:
    raw = read_squad(path)
    examples, dropped = featurize(raw, tokenizer, max_seq_len)
    if dropped:
        log.info("%s: dropped %d of %d questions", path, len(dropped), len(dropped) + len(examples))
    return SquadDataset(raw, examples, dropped)


def collate(examples: list[QAExample]) -> Batch:
    L = max(ex.length for ex in examples)
    B = len(examples)
    ids = np.full((B, L), PAD_ID, dtype=np.int64)
    m_q = np.zeros((B, L), dtype=bool)
    m_c = np.zeros((B, L), dtype=bool)
    for b, ex in enumerate(examples):
        n = ex.length
        ids[b, :n] = ex.token_ids
        m_q[b, :n] = ex.m_q
        m_c[b, :n] = ex.m_c
    return Batch(ids, m_q, m_c,
                 np.array([ex.gold_start for ex in examples], dtype=np.int64),
                 np.array([ex.gold_end for ex in examples], dtype=np.int64))


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def write_json_atomic(obj: Any, path: str | Path, indent: int | None = None) -> None:
    """Serialise ``obj`` deterministically and move it into place atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(obj, indent=indent, sort_keys=True, ensure_ascii=False)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_squad(raw: dict[str, Any], path: str | Path) -> None:
    validate_squad(raw, str(path))
    write_json_atomic(raw, path)


# ---------------------------------------------------------------------------
# synthetic sentinel task
# ---------------------------------------------------------------------------

OPEN_MARK, CLOSE_MARK = "[[", "]]"
SYNTH_QUESTION = "what lies between the marks ?"


def _distinct_words(tokenizer: Tokenizer, n: int, reserved: list[str]) -> list[str]:
    taken = {tokenizer.token_id(w) for w in reserved}
    words = []
    k = 0
    while len(words) < n:
        word = f"w{k:03d}"
        bucket = tokenizer.token_id(word)
        if bucket not in taken:
            taken.add(bucket)
            words.append(word)
        k += 1
    return words


def make_sentinel_dataset(n: int, seed: int = 0, vocab_size: int = 512, n_words: int = 40,
                          context_len: tuple[int, int] = (8, 14), answer_len: tuple[int, int] = (1, 3),
                          no_answer_fraction: float = 0.2, id_prefix: str = "syn") -> dict[str, Any]:
    """SQuAD-v2 records whose answer is the words between ``[[`` and ``]]``.

    Unanswerable records carry no markers.  Filler words are chosen so that no
    two tokens of the task share a hash bucket at ``vocab_size``.
    """
    rng = np.random.default_rng(seed)
    tokenizer = Tokenizer(vocab_size)
    reserved = [OPEN_MARK, CLOSE_MARK, *SYNTH_QUESTION.split()]
    words = _distinct_words(tokenizer, n_words, reserved)
    paragraphs = []
    for i in range(n):
        n_ctx = int(rng.integers(context_len[0], context_len[1] + 1))
        filler = [words[j] for j in rng.integers(0, n_words, size=n_ctx)]
        qid = f"{id_prefix}-{i:05d}"
        if rng.random() < no_answer_fraction:
            context = " ".join(filler)
            qa = {"id": qid, "question": SYNTH_QUESTION, "is_impossible": True, "answers": []}
        else:
            n_ans = int(rng.integers(answer_len[0], answer_len[1] + 1))
            answer = [words[j] for j in rng.integers(0, n_words, size=n_ans)]
            cut = int(rng.integers(0, n_ctx + 1))
            left, right = filler[:cut], filler[cut:]
            prefix = " ".join([*left, OPEN_MARK]) + " "
            context = prefix + " ".join([*answer, CLOSE_MARK, *right])
            text = " ".join(answer)
            qa = {"id": qid, "question": SYNTH_QUESTION, "is_impossible": False,
                  "answers": [{"text": text, "answer_start": len(prefix)}]}
        paragraphs.append({"context": context, "qas": [qa]})
    return {"version": "v2.0", "data": [{"title": "sentinel", "paragraphs": paragraphs}]}

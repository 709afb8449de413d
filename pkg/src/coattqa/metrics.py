"""SQuAD-v2 style exact match / F1, answerability splits and question-type bins."""

from __future__ import annotations

import collections
import re
import string
from dataclasses import asdict, dataclass, field

QUESTION_TYPES = ("what", "which", "when", "where", "who", "why", "how")
OTHER = "other"

_ARTICLES = re.compile(r"\b(a|an|the)\b", re.UNICODE)
_PUNCT = set(string.punctuation)
_WORD = re.compile(r"[a-z]+")


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    text = "".join(ch for ch in text.lower() if ch not in _PUNCT)
    return " ".join(_ARTICLES.sub(" ", text).split())


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = collections.Counter(pred_tokens) & collections.Counter(gold_tokens)
    same = sum(common.values())
    if same == 0:
        return 0.0
    precision = same / len(pred_tokens)
    recall = same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1_em(pred_text: str, gold_texts: list[str]) -> tuple[float, int]:
    """Best token F1 and exact match of ``pred_text`` against any gold answer.

    An empty gold list means the question is unanswerable; the empty string
    is the no-answer prediction.
    """
    pred_norm = normalize_answer(pred_text)
    golds = [normalize_answer(g) for g in gold_texts] or [""]
    em = max(int(pred_norm == g) for g in golds)
    f1 = max(_f1(pred_norm.split(), g.split()) for g in golds)
    return f1, em


def question_type(question: str) -> str:
    for word in _WORD.findall(question.lower()):
        if word in QUESTION_TYPES:
            return word
    return OTHER


@dataclass
class MetricsReport:
    f1: float
    em: float
    has_ans_f1: float
    no_ans_f1: float
    has_ans_em: float
    no_ans_em: float
    has_ans_total: int
    no_ans_total: int
    total: int
    per_type: dict[str, tuple[int, int]] = field(default_factory=dict)  # type -> (wrong, total)

    def to_json(self) -> dict:
        out = asdict(self)
        out["per_type"] = {k: {"wrong": w, "total": n} for k, (w, n) in self.per_type.items()}
        return out


def _pct(values: list[float]) -> float:
    return 100.0 * sum(values) / len(values) if values else 0.0


def evaluate(predictions: dict[str, str], examples) -> MetricsReport:
    """Macro-average EM/F1 (percent) over ``examples``.

    ``examples`` needs ``qid``, ``question`` and ``gold_texts``; predictions must
    cover exactly the same ids.
    """
    ids = [ex.qid for ex in examples]
    missing = set(ids) - predictions.keys()
    extra = predictions.keys() - set(ids)
    if missing or extra:
        raise ValueError(f"prediction ids do not match the dataset: missing={sorted(missing)[:5]} "
                         f"extra={sorted(extra)[:5]}")
    f1s, ems = {}, {}
    for ex in examples:
        f1s[ex.qid], ems[ex.qid] = f1_em(predictions[ex.qid], ex.gold_texts)
    has = [ex.qid for ex in examples if ex.gold_texts]
    no = [ex.qid for ex in examples if not ex.gold_texts]
    return MetricsReport(
        f1=_pct([f1s[i] for i in ids]),
        em=_pct([ems[i] for i in ids]),
        has_ans_f1=_pct([f1s[i] for i in has]),
        no_ans_f1=_pct([f1s[i] for i in no]),
        has_ans_em=_pct([ems[i] for i in has]),
        no_ans_em=_pct([ems[i] for i in no]),
        has_ans_total=len(has),
        no_ans_total=len(no),
        total=len(ids),
        per_type=question_type_bins(examples, predictions),
    )


def question_type_bins(examples, predictions: dict[str, str]) -> dict[str, tuple[int, int]]:
    """Per question type ``(wrong, total)`` where wrong means EM failure."""
    table = {t: [0, 0] for t in (*QUESTION_TYPES, OTHER)}
    for ex in examples:
        _, em = f1_em(predictions[ex.qid], ex.gold_texts)
        cell = table[question_type(ex.question)]
        cell[0] += 1 - em
        cell[1] += 1
    return {t: (w, n) for t, (w, n) in table.items()}

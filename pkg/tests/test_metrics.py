from dataclasses import dataclass

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coattqa.metrics import evaluate, f1_em, normalize_answer, question_type, question_type_bins


@dataclass
class Item:
    qid: str
    question: str
    gold_texts: list


# question, golds, prediction, hand-computed (f1, em)
HAND_FIXTURE = [
    ("What color is the sky?", ["blue"], "blue", (1.0, 1)),
    ("Who wrote it?", ["John Smith"], "Smith", (2 / 3, 0)),
    ("When did it end?", ["in 1990"], "1990", (2 / 3, 0)),
    ("Where is Paris?", ["France", "in France"], "the France", (1.0, 1)),
    ("Why did he go?", ["to eat lunch"], "lunch time", (0.4, 0)),
    ("How many cats?", ["three"], "", (0.0, 0)),
    ("Is it raining?", [], "", (1.0, 1)),
    ("Which way?", [], "north", (0.0, 0)),
    ("What is X?", [], "", (1.0, 1)),
    ("Did the Cat sleep?", [], "", (1.0, 1)),
]


def fixture_items():
    items = [Item(f"h{i}", q, golds) for i, (q, golds, _, _) in enumerate(HAND_FIXTURE)]
    preds = {f"h{i}": p for i, (_, _, p, _) in enumerate(HAND_FIXTURE)}
    return items, preds


@pytest.mark.parametrize("text,want", [("The  Cat!", "cat"), ("", ""), ("a an the x", "x"),
                                       ("Hello, World.", "hello world")])
def test_normalize_answer(text, want):
    assert normalize_answer(text) == want


def test_f1_em_basic_cases():
    assert f1_em("gold", ["gold"]) == (1.0, 1)
    assert f1_em("x b", ["b c"])[0] == pytest.approx(0.5)
    # "a" is an article and is removed before overlap is counted
    assert f1_em("a b", ["b c"])[0] == pytest.approx(2 / 3)
    assert f1_em("", []) == (1.0, 1)
    assert f1_em("x", []) == (0.0, 0)
    assert f1_em("", ["x"]) == (0.0, 0)


@pytest.mark.parametrize("i", range(len(HAND_FIXTURE)))
def test_f1_em_hand_fixture(i):
    _, golds, pred, (f1, em) = HAND_FIXTURE[i]
    got_f1, got_em = f1_em(pred, golds)
    assert got_f1 == pytest.approx(f1, abs=1e-12)
    assert got_em == em


def test_evaluate_hand_fixture():
    items, preds = fixture_items()
    report = evaluate(preds, items)
    has_f1 = (1 + 2 / 3 + 2 / 3 + 1 + 0.4 + 0) / 6
    assert report.has_ans_f1 == pytest.approx(100 * has_f1, abs=1e-12)
    assert report.has_ans_em == pytest.approx(100 * 2 / 6, abs=1e-12)
    assert report.no_ans_f1 == pytest.approx(75.0, abs=1e-12)
    assert report.no_ans_em == pytest.approx(75.0, abs=1e-12)
    assert report.f1 == pytest.approx(100 * (6 * has_f1 + 3) / 10, abs=1e-12)
    assert report.em == pytest.approx(50.0, abs=1e-12)
    assert (report.has_ans_total, report.no_ans_total, report.total) == (6, 4, 10)
    assert report.per_type == {"what": (0, 2), "which": (1, 1), "when": (1, 1), "where": (0, 1),
                               "who": (1, 1), "why": (1, 1), "how": (1, 1), "other": (0, 2)}


def test_evaluate_three_example_average():
    items = [Item("a", "What?", ["x y"]), Item("b", "Who?", ["z"]), Item("c", "Why?", [])]
    report = evaluate({"a": "x", "b": "z", "c": ""}, items)
    assert report.f1 == pytest.approx(100 * (2 / 3 + 1 + 1) / 3)
    assert report.em == pytest.approx(100 * 2 / 3)


def test_evaluate_all_correct_and_all_wrong():
    items = [Item("a", "What?", ["x"]), Item("b", "Who?", [])]
    perfect = evaluate({"a": "x", "b": ""}, items)
    assert (perfect.f1, perfect.em, perfect.has_ans_f1, perfect.no_ans_f1) == (100.0, 100.0, 100.0, 100.0)
    wrong = evaluate({"a": "", "b": "y"}, items)
    assert wrong.f1 == 0.0 and wrong.em == 0.0


@pytest.mark.parametrize("preds", [{"a": "x"}, {"a": "x", "b": "", "c": "z"}])
def test_evaluate_rejects_id_mismatch(preds):
    with pytest.raises(ValueError, match="do not match"):
        evaluate(preds, [Item("a", "What?", ["x"]), Item("b", "Who?", [])])


def test_question_type_bins():
    assert question_type("What is X?") == "what"
    assert question_type("Is it raining?") == "other"
    assert question_type("In which year?") == "which"
    assert question_type("HOW old?") == "how"
    questions = ["What is it?", "what now", "Who came?", "Where to?", "Is it?", "Does it?",
                 "Tell me why.", "In what year and how?"]
    items = [Item(str(i), q, ["a"]) for i, q in enumerate(questions)]
    bins = question_type_bins(items, {str(i): "a" for i in range(8)})
    counts = {k: n for k, (_, n) in bins.items() if n}
    assert counts == {"what": 3, "who": 1, "where": 1, "other": 2, "why": 1}


words = st.sampled_from(["a", "the", "cat", "dog", "Red", "blue,", "run", "!", "x"])
answers = st.lists(words, max_size=4).map(" ".join)


@settings(max_examples=100, deadline=None)
@given(s=answers)
def test_identical_strings_score_perfectly(s):
    if normalize_answer(s):
        assert f1_em(s, [s]) == (1.0, 1)


@settings(max_examples=100, deadline=None)
@given(data=st.lists(st.tuples(answers, st.lists(answers, max_size=2), st.sampled_from(["What?", "Who?", "Is it?"])),
                     min_size=1, max_size=12))
def test_overall_is_weighted_mean_of_splits(data):
    items = [Item(str(i), q, [g for g in golds if normalize_answer(g)]) for i, (_, golds, q) in enumerate(data)]
    preds = {str(i): p for i, (p, _, _) in enumerate(data)}
    r = evaluate(preds, items)
    assert r.has_ans_total + r.no_ans_total == r.total
    weighted = (r.has_ans_f1 * r.has_ans_total + r.no_ans_f1 * r.no_ans_total) / r.total
    assert abs(r.f1 - weighted) <= 1e-9
    for v in (r.f1, r.em, r.has_ans_f1, r.no_ans_f1):
        assert 0.0 <= v <= 100.0

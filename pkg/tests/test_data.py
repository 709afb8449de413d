import json

import numpy as np
import pytest

from coattqa.data import (SquadFormatError, build_sequence, collate, featurize, load_squad,
                          make_sentinel_dataset, read_squad, validate_squad, write_squad)
from coattqa.encoder import CLS_ID, SEP_ID, Tokenizer

TOK = Tokenizer(128)


def test_minimal_fixture_loads(fixtures_dir):
    ds = load_squad(fixtures_dir / "minimal.json", TOK, 64)
    assert [ex.qid for ex in ds.examples] == ["q1", "q2", "q3"]
    assert ds.dropped == []
    q1 = ds.by_id()["q1"]
    assert q1.span_text(q1.gold_start, q1.gold_end) == "north"
    assert q1.gold_start in q1.context_positions


def test_impossible_question_maps_to_null(fixtures_dir):
    q3 = load_squad(fixtures_dir / "minimal.json", TOK, 64).by_id()["q3"]
    assert q3.is_impossible and q3.gold_texts == []
    assert (q3.gold_start, q3.gold_end) == (0, 0)


def test_off_by_one_answer_is_dropped(fixtures_dir):
    ds = load_squad(fixtures_dir / "off_by_one.json", TOK, 64)
    assert len(ds.dropped) == 1
    assert ds.dropped[0][0] == "q1"
    assert len(ds.examples) == 2


def test_duplicate_id_rejected(fixtures_dir):
    with pytest.raises(SquadFormatError, match="duplicate id 'q1'"):
        read_squad(fixtures_dir / "duplicate_id.json")


def test_impossible_with_answers_rejected(fixtures_dir):
    with pytest.raises(SquadFormatError, match=r"qas\[2\].*no answers"):
        read_squad(fixtures_dir / "impossible_with_answer.json")


def test_malformed_json_reports_location(fixtures_dir):
    with pytest.raises(SquadFormatError, match="line"):
        read_squad(fixtures_dir / "malformed.json")


@pytest.mark.parametrize("mutate,message", [
    (lambda d: d.pop("data"), "'data'"),
    (lambda d: d["data"][0]["paragraphs"][0].pop("context"), "'context'"),
    (lambda d: d["data"][0]["paragraphs"][0]["qas"][0].update(id=""), "'id'"),
    (lambda d: d["data"][0]["paragraphs"][0]["qas"][0]["answers"][0].update(answer_start=-1), "answer_start"),
    (lambda d: d["data"][0]["paragraphs"][0]["qas"][0].update(answers=[]), "at least one answer"),
])
def test_schema_violations_rejected(fixtures_dir, mutate, message):
    data = json.loads((fixtures_dir / "minimal.json").read_text())
    mutate(data)
    with pytest.raises(SquadFormatError, match=message):
        validate_squad(data)


def test_overlong_sequences_are_dropped(fixtures_dir):
    ds = load_squad(fixtures_dir / "minimal.json", TOK, 12)
    assert len(ds.examples) == 0
    assert all("exceeds" in reason for _, reason in ds.dropped)


def test_sequence_layout_and_masks():
    ids, m_q, m_c, offset = build_sequence([10, 11], [20, 21, 22])
    assert ids.tolist() == [CLS_ID, 10, 11, SEP_ID, 20, 21, 22, SEP_ID]
    assert m_q.tolist() == [1, 1, 1, 1, 0, 0, 0, 0]
    assert (m_q ^ m_c).all()
    assert offset == 4


def test_collate_pads_and_keeps_masks_disjoint(fixtures_dir):
    ds = load_squad(fixtures_dir / "minimal.json", TOK, 64)
    batch = collate(ds.examples)
    assert batch.token_ids.shape[0] == 3
    assert not (batch.m_q & batch.m_c).any()
    lengths = [ex.length for ex in ds.examples]
    for b, n in enumerate(lengths):
        assert batch.pad_mask[b].sum() == n
        assert (batch.token_ids[b, n:] == 0).all()


def test_round_trip_is_lossless(fixtures_dir, tmp_path):
    raw = read_squad(fixtures_dir / "minimal.json")
    write_squad(raw, tmp_path / "copy.json")
    assert read_squad(tmp_path / "copy.json") == raw
    write_squad(raw, tmp_path / "again.json")
    assert (tmp_path / "copy.json").read_bytes() == (tmp_path / "again.json").read_bytes()


def test_sentinel_dataset_is_valid_and_aligned():
    raw = make_sentinel_dataset(60, seed=3, vocab_size=128)
    validate_squad(raw)
    examples, dropped = featurize(raw, Tokenizer(128), 64)
    assert dropped == [] and len(examples) == 60
    assert any(ex.is_impossible for ex in examples)
    for ex in examples:
        if not ex.is_impossible:
            assert ex.span_text(ex.gold_start, ex.gold_end) == ex.answers[0]
            ids = ex.token_ids.tolist()
            assert ids[ex.gold_start - 1] == Tokenizer(128).token_id("[[")
    assert make_sentinel_dataset(10, seed=3, vocab_size=128) == make_sentinel_dataset(10, seed=3, vocab_size=128)


def test_sentinel_words_occupy_distinct_buckets():
    raw = make_sentinel_dataset(30, seed=0, vocab_size=128)
    words = {w for _, para in enumerate(raw["data"][0]["paragraphs"]) for w in para["context"].split()}
    assert len({TOK.token_id(w) for w in words}) == len(words)
    assert np.all(np.array([TOK.token_id(w) for w in words]) >= 4)

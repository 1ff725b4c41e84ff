import json
import math

import pytest

from bnforge.evaluation import (
    ImportanceEntry,
    ImportanceError,
    ImportanceResult,
    conflict,
    importance,
    importance_to_json,
    joint_importance,
    quadratic_score_gain,
    render_importance_report,
    single_importance,
    synergy_sample,
)
from bnforge.inference import brute_force_posterior

from fixtures import chain, copy_net, independent_net, twin_copy_net, witness_net


def test_copy_has_maximal_importance():
    # uniform binary focus observed exactly: 2 * 0.5 * (0.5^2 + 0.5^2)
    assert single_importance(copy_net(), "F", "E", {}) == pytest.approx(0.5)


def test_independent_evidence_scores_zero():
    result = importance(independent_net(), "F", ["E", "G"])
    assert result["E"].importance == 0.0
    assert result["G"].importance == 0.0
    assert result["E"].score_text == "0"
    assert result["E"].stars == 0


def test_importance_matches_quadratic_gain():
    net = chain()
    assert single_importance(net, "A", "B", {}) == pytest.approx(quadratic_score_gain(net, "A", ["B"], {}), abs=1e-12)


def test_importance_with_oracle_engine():
    net = witness_net()
    fast = importance(net, "A", ["B1", "B2"])
    slow = importance(net, "A", ["B1", "B2"], infer=brute_force_posterior)
    for name in ("B1", "B2"):
        assert fast[name].importance == pytest.approx(slow[name].importance, abs=1e-12)


def test_ranking_ties_broken_by_name():
    result = importance(witness_net(), "A", ["B2", "B1"])
    assert result.ranking == ["B1", "B2"]
    assert [e.rank for e in result.entries] == [1, 2]
    assert result["B1"].score == 100.0


def test_query_validation():
    net = witness_net()
    with pytest.raises(ImportanceError):
        importance(net, "A", ["A"])
    with pytest.raises(ImportanceError):
        importance(net, "A", ["B1", "B1"])
    with pytest.raises(ImportanceError):
        importance(net, "A", ["B1"], base={"B1": "t"})
    with pytest.raises(ImportanceError):
        importance(net, "A", ["B1"], base={"A": "t"})


def test_impossible_base():
    net = twin_copy_net()
    with pytest.raises(ImportanceError, match="impossible"):
        importance(net, "F", [], base={"E1": "t", "E2": "f"})


class TestSynergy:
    def test_redundant_copies(self):
        [res] = synergy_sample(twin_copy_net(), "F", ["E1", "E2"], k=2, n=1, seed=0)
        assert res.combination == ("E1", "E2")
        assert res.synergy == pytest.approx(-0.5, abs=1e-12)
        assert res.joint == pytest.approx(joint_importance(twin_copy_net(), "F", ["E1", "E2"], {}))

    def test_independent_is_zero(self):
        [res] = synergy_sample(independent_net(), "F", ["E", "G"], k=2, n=5, seed=3)
        assert res.synergy == 0.0

    def test_deterministic_sampling(self):
        net = witness_net()
        a = synergy_sample(net, "B1", ["A", "B2"], 2, 1, seed=11)
        b = synergy_sample(net, "B1", ["A", "B2"], 2, 1, seed=11)
        assert a == b

    def test_bad_k(self):
        with pytest.raises(ImportanceError):
            synergy_sample(witness_net(), "A", ["B1", "B2"], k=3, n=1, seed=0)
        with pytest.raises(ImportanceError):
            synergy_sample(witness_net(), "A", ["B1", "B2"], k=2, n=0, seed=0)


class TestConflict:
    def test_witnesses_disagree(self):
        score = conflict(witness_net(), {"B1": "t", "B2": "f"})
        assert score.value == pytest.approx(math.log2(0.25 / 0.0099), abs=1e-9)
        assert score.flagged

    def test_witnesses_agree(self):
        score = conflict(witness_net(), {"B1": "t", "B2": "t"})
        assert score.value < 0
        assert not score.flagged

    def test_impossible(self):
        score = conflict(twin_copy_net(), {"E1": "t", "E2": "f"})
        assert score.impossible and score.flagged and score.value == math.inf

    def test_threshold_is_strict(self):
        score = conflict(witness_net(), {"B1": "t", "B2": "f"}, threshold=100.0)
        assert not score.flagged


def _result(*scores):
    entries = tuple(ImportanceEntry(f"V{i}", s / 100, s, i + 1) for i, s in enumerate(scores))
    return ImportanceResult("F", entries, {"Z": "z1", "A": "a0"})


class TestReport:
    def test_star_buckets(self):
        result = _result(100.0, 41.0, 20.0, 0.4, 0.0)
        assert [e.stars for e in result.entries] == [5, 3, 1, 1, 0]
        assert [e.score_text for e in result.entries] == ["100", "41", "20", "0+", "0"]

    def test_rendering(self):
        text = render_importance_report(_result(100.0, 0.4, 0.0), title="Launch")
        lines = text.splitlines()
        assert lines[0] == 'Importance Analysis for "Launch"'
        assert lines[1] == "Current Observations: A: a0, Z: z1"
        assert lines[3].startswith("*****")
        assert lines[3].endswith(" 100 V0")
        assert lines[4].split() == ["*", "0+", "V1"]
        assert lines[5].split() == ["0", "V2"]

    def test_json_keeps_unrounded_score(self):
        doc = importance_to_json(_result(100.0, 33.333333))
        assert doc["entries"][1]["score"] == 33.333333
        assert json.loads(json.dumps(doc)) == doc
        assert list(doc["base"]) == ["A", "Z"]

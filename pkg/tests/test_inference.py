import numpy as np
import pytest

from bnforge.core import Deterministic, UnknownReference, make_network, prior, table
from bnforge.inference import (
    TooLargeForOracle,
    ZeroProbabilityEvidence,
    brute_force_evidence_probability,
    brute_force_posterior,
    evidence_probability,
    joint_posterior,
    marginals,
    min_fill_order,
    posterior,
)

from fixtures import TF, chain, copy_net, regression_net


def test_chain_posterior_given_child():
    post = posterior(chain(), {"B": "t"}, ["A"])["A"]
    assert post["t"] == pytest.approx(27 / 41, abs=1e-12)
    assert sum(post.probabilities) == pytest.approx(1.0, abs=1e-15)


def test_chain_predictive():
    assert posterior(chain(), {}, ["B"])["B"]["t"] == pytest.approx(0.41, abs=1e-12)


def test_no_evidence_returns_prior():
    assert posterior(chain(), {}, ["A"])["A"].probabilities == pytest.approx((0.3, 0.7))


def test_observed_target_is_one_hot():
    assert posterior(chain(), {"A": "f"}, ["A"])["A"].probabilities == (0.0, 1.0)


def test_single_variable_network():
    net = make_network([("X", ("a", "b", "c"), [], prior(0.2, 0.3, 0.5))])
    assert posterior(net, {}, ["X"])["X"].probabilities == pytest.approx((0.2, 0.3, 0.5))
    assert evidence_probability(net, {"X": "c"}) == pytest.approx(0.5)


def test_evidence_probability_matches_oracle():
    net = chain()
    for ev in ({}, {"B": "t"}, {"A": "f", "B": "f"}):
        assert evidence_probability(net, ev) == pytest.approx(brute_force_evidence_probability(net, ev), abs=1e-15)


def test_contradiction_raises():
    net = make_network(
        [
            ("A", TF, [], prior(0.5, 0.5)),
            ("B", TF, ["A"], Deterministic(((("t",), "t"), (("f",), "f")))),
            ("C", TF, [], prior(0.4, 0.6)),
        ]
    )
    with pytest.raises(ZeroProbabilityEvidence):
        posterior(net, {"A": "t", "B": "f"}, ["C"])
    with pytest.raises(ZeroProbabilityEvidence):
        brute_force_posterior(net, {"A": "t", "B": "f"}, ["C"])
    assert evidence_probability(net, {"A": "t", "B": "f"}) == 0.0


def test_unknown_names():
    with pytest.raises(UnknownReference):
        posterior(chain(), {"Q": "t"}, ["A"])
    with pytest.raises(UnknownReference):
        posterior(chain(), {"B": "maybe"}, ["A"])
    with pytest.raises(UnknownReference):
        posterior(chain(), {}, ["Z"])


def test_oracle_size_guard():
    net = make_network([(f"V{i:02d}", TF, [], prior(0.5, 0.5)) for i in range(21)])
    with pytest.raises(TooLargeForOracle):
        brute_force_posterior(net, {}, ["V00"])
    # the eliminator has no such limit
    assert posterior(net, {"V03": "t"}, ["V00"])["V00"]["t"] == pytest.approx(0.5)


def test_d_separated_marginal_is_bit_identical():
    net = regression_net()
    before = posterior(net, {}, ["C"])["C"].probabilities
    after = posterior(net, {"B": "t", "A": "f"}, ["C"])["C"].probabilities
    assert before == after


def test_joint_posterior_copy():
    joint = joint_posterior(copy_net(), {}, ["F", "E"])
    assert np.allclose(joint, [[0.5, 0.0], [0.0, 0.5]])
    observed = joint_posterior(copy_net(), {"E": "f"}, ["F", "E"])
    assert np.allclose(observed, [[0.0, 0.0], [0.0, 1.0]])


def test_joint_posterior_rejects_duplicates():
    with pytest.raises(Exception):
        joint_posterior(chain(), {}, ["A", "A"])


def test_marginals_cover_every_variable():
    out = marginals(regression_net(), {"D": "t"})
    assert list(out) == ["A", "B", "C", "D"]
    assert out["C"]["t"] == pytest.approx(0.6 * 0.7 / (0.6 * 0.7 + 0.4 * 0.1))


def test_min_fill_order_is_deterministic_and_complete():
    scopes = [("A", "B"), ("B", "C"), ("C", "D"), ("A", "D")]
    order = min_fill_order(scopes, ["A", "B", "C", "D"])
    assert sorted(order) == ["A", "B", "C", "D"]
    assert order == min_fill_order(list(reversed(scopes)), ["D", "C", "B", "A"])


def test_explaining_away():
    net = make_network(
        [
            ("X", TF, [], prior(0.1, 0.9)),
            ("Y", TF, [], prior(0.1, 0.9)),
            (
                "Z",
                TF,
                ["X", "Y"],
                table({("t", "t"): (0.99, 0.01), ("t", "f"): (0.9, 0.1), ("f", "t"): (0.9, 0.1), ("f", "f"): (0.01, 0.99)}),
            ),
        ]
    )
    alone = posterior(net, {"Z": "t"}, ["X"])["X"]["t"]
    explained = posterior(net, {"Z": "t", "Y": "t"}, ["X"])["X"]["t"]
    assert explained < alone
    oracle = brute_force_posterior(net, {"Z": "t", "Y": "t"}, ["X"])["X"]["t"]
    assert explained == pytest.approx(oracle, abs=1e-12)

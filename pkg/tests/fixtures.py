"""Hand-built networks and knowledge bases shared by unit and acceptance tests."""

from __future__ import annotations

from importlib.resources import files

from bnforge.core import Deterministic, StateSpace, make_network, prior, table
from bnforge.dsl import load_kb, parse_kb
from bnforge.fragments import Fragment, InputDecl, VarDecl

TF = ("t", "f")
DEMO_PATH = str(files("bnforge") / "data" / "demo.bnkb")


def demo_kb():
    return load_kb(DEMO_PATH)


def chain():
    """A -> B with P(A=t)=0.3, P(B=t|A=t)=0.9, P(B=t|A=f)=0.2."""
    return make_network(
        [
            ("A", TF, [], prior(0.3, 0.7)),
            ("B", TF, ["A"], table({("t",): (0.9, 0.1), ("f",): (0.2, 0.8)})),
        ]
    )


def copy_net():
    """E is a deterministic copy of F, F uniform."""
    return make_network(
        [
            ("F", TF, [], prior(0.5, 0.5)),
            ("E", TF, ["F"], Deterministic(((("t",), "t"), (("f",), "f")))),
        ]
    )


def twin_copy_net():
    return make_network(
        [
            ("F", TF, [], prior(0.5, 0.5)),
            ("E1", TF, ["F"], Deterministic(((("t",), "t"), (("f",), "f")))),
            ("E2", TF, ["F"], Deterministic(((("t",), "t"), (("f",), "f")))),
        ]
    )


def independent_net():
    """F and E (and G) are unconnected roots."""
    return make_network(
        [
            ("F", TF, [], prior(0.3, 0.7)),
            ("E", ("a", "b", "c"), [], prior(0.2, 0.5, 0.3)),
            ("G", TF, [], prior(0.6, 0.4)),
        ]
    )


def witness_net():
    """A -> B1, A -> B2 with P(A=t)=0.5 and P(Bi=t|A=t)=0.99, P(Bi=t|A=f)=0.01."""
    row = table({("t",): (0.99, 0.01), ("f",): (0.01, 0.99)})
    return make_network([("A", TF, [], prior(0.5, 0.5)), ("B1", TF, ["A"], row), ("B2", TF, ["A"], row)])


def regression_net(b_given_a_t: float = 0.9):
    """A -> B and an unconnected C -> D; focus C is d-separated from B's CPT."""
    return make_network(
        [
            ("A", TF, [], prior(0.3, 0.7)),
            ("B", TF, ["A"], table({("t",): (b_given_a_t, 1 - b_given_a_t), ("f",): (0.2, 0.8)})),
            ("C", TF, [], prior(0.6, 0.4)),
            ("D", TF, ["C"], table({("t",): (0.7, 0.3), ("f",): (0.1, 0.9)})),
        ]
    )


# --- fragments ----------------------------------------------------------------

S2 = StateSpace(TF)
S3 = StateSpace(("lo", "mid", "hi"))


def frag(name, inputs=(), residents=(), stub=False):
    return Fragment(name, tuple(inputs), tuple(residents), stub)


def var(name, space, parents=(), cpt=None):
    return VarDecl(name, None, space, "", tuple(parents), cpt)


def inp(name, space, prior_row=None):
    return InputDecl(name, None, space, "", prior_row)


def f1_prior_a():
    return frag("F1", residents=[var("A", S2, cpt=prior(0.3, 0.7))])


def f2_b_given_a(space=S2):
    return frag(
        "F2",
        inputs=[inp("A", space)],
        residents=[var("B", S2, ["A"], table({(s,): (0.9 - 0.3 * i, 0.1 + 0.3 * i) for i, s in enumerate(space.states)}))],
    )


# --- knowledge-base snippets ----------------------------------------------------


def kb(text: str):
    result = parse_kb(text, file="fixture.bnkb")
    assert result.ok, result.diagnostics
    return result.kb


CLEAN_KB = """
definition Distance states {near, mid, far} ordered
class Range { states {near, mid, far} ordered }
class Sensor { states {hit, miss} }
fragment world {
  var Distance prior (0.2, 0.5, 0.3)
}
fragment detect {
  input Distance
  var Detect : Sensor parents (Distance) cpt {
    (near): (0.9, 0.1)
    (mid): (0.6, 0.4)
    (far): (0.3, 0.7)
  }
  var Gauge : Range prior (0.1, 0.2, 0.7)
}
stub later {
  var Later states {yes, no} prior (0.5, 0.5)
}
model m {
  use world, detect, later
  bind detect.Distance -> world.Distance
}
constraint monotone Detect = hit along Distance nonincreasing
"""

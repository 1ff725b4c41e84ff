"""Acceptance criteria 1-10, one check per criterion.

Each test prints a single ``PASS``/``FAIL`` line. Run the module directly
(``python tests/test_acceptance.py``) for just the summary lines.
"""

from __future__ import annotations

import itertools
import math
import random
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

import fixtures as fx  # noqa: E402
from netgen import random_edit, random_evidence, random_kb, random_network  # noqa: E402

from bnforge.core import NoisyOr, StateSpace, expand_cpt, prior, table  # noqa: E402
from bnforge.dsl import parse_kb, serialize_kb  # noqa: E402
from bnforge.evaluation import conflict, quadratic_score_gain, single_importance  # noqa: E402
from bnforge.fragments import (  # noqa: E402
    Binding,
    CrossCycle,
    HomeConflict,
    InterfaceMismatch,
    UnboundInput,
    compile_model,
    compose,
    substitute_stub,
)
from bnforge.harness import Scenario, compare_golden, elicitation_review, record_golden, run_cases  # noqa: E402
from bnforge.inference import (  # noqa: E402
    ZeroProbabilityEvidence,
    brute_force_posterior,
    evidence_probability,
    posterior,
)
from bnforge.kbver import Store, apply_diff, diff_kbs  # noqa: E402

N_RANDOM_NETWORKS = 500
ORACLE_SEED = 1000


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()
    assert ok, line


def oracle_cases():
    """The networks and evidence shared by criteria 1 and 2c."""
    for i in range(N_RANDOM_NETWORKS):
        rng = random.Random(ORACLE_SEED + i)
        net = random_network(rng, max_vars=12)
        yield rng, net, random_evidence(rng, net, max_vars=4)


# --- 1 ------------------------------------------------------------------------


def check_oracle_equivalence():
    start = time.perf_counter()
    worst, compared, impossible, mismatched = 0.0, 0, 0, 0
    for _, net, ev in oracle_cases():
        try:
            fast = posterior(net, ev, net.names)
        except ZeroProbabilityEvidence:
            try:
                brute_force_posterior(net, ev, net.names)
                mismatched += 1
            except ZeroProbabilityEvidence:
                impossible += 1
            continue
        slow = brute_force_posterior(net, ev, net.names)
        for v in net.names:
            worst = max(worst, float(np.max(np.abs(np.array(fast[v].probabilities) - slow[v].probabilities))))
            compared += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and mismatched == 0 and elapsed < 120
    return ok, (
        f"{N_RANDOM_NETWORKS} networks, {compared} marginals, max |diff| {worst:.2e} (tol 1e-9), "
        f"{impossible} impossible-evidence cases agreed, {elapsed:.1f}s (< 120s)"
    )


def test_criterion_01_oracle_equivalence():
    report(1, "oracle equivalence", *check_oracle_equivalence())


# --- 2 ------------------------------------------------------------------------


def check_importance():
    parts, ok = [], True
    net = fx.independent_net()
    a = max(single_importance(net, "F", "E", {}), single_importance(net, "F", "G", {}))
    ok &= a < 1e-12
    parts.append(f"(a) independent I={a:.1e}")

    b = single_importance(fx.copy_net(), "F", "E", {})
    ok &= abs(b - 0.5) <= 1e-9
    parts.append(f"(b) copy I={b!r}")

    worst, checked = 0.0, 0
    for rng, net, ev in oracle_cases():
        if len(net.names) < 2:
            continue
        focus, evar = rng.sample(net.names, 2)
        base = {v: s for v, s in ev.items() if v not in (focus, evar)}
        if evidence_probability(net, base) == 0.0:
            continue
        i1 = single_importance(net, focus, evar, base)
        i2 = quadratic_score_gain(net, focus, [evar], base)
        worst = max(worst, abs(i1 - i2))
        checked += 1
    ok &= worst <= 1e-9
    parts.append(f"(c) identity on {checked} networks max |diff| {worst:.1e}")

    d = single_importance(fx.chain(), "A", "B", {})
    ok &= abs(d - 0.17866) <= 1e-4
    parts.append(f"(d) chain I={d:.6f} (0.17866 +/- 1e-4)")
    return ok, "; ".join(parts)


def test_criterion_02_importance():
    report(2, "importance correctness", *check_importance())


# --- 3 ------------------------------------------------------------------------


def check_noisy_or():
    rng = random.Random(3)
    worst, rows = 0.0, 0
    boolean = StateSpace(("true", "false"))
    for n in range(0, 11):
        links = tuple(rng.random() for _ in range(n))
        leak = rng.random() * 0.2
        tab = expand_cpt(NoisyOr(links, leak), boolean, [boolean] * n)
        tab = np.asarray(tab).reshape(-1, 2)
        for mask in range(2**n):
            # bit i (most significant first) set means parent i is false
            true_parents = [i for i in range(n) if not (mask >> (n - 1 - i)) & 1]
            q = math.prod([1.0 - leak] + [1.0 - links[i] for i in true_parents])
            worst = max(worst, abs(tab[mask][0] - (1.0 - q)), abs(tab[mask][1] - q))
            rows += 1
    return worst == 0.0, f"{rows} configurations for 0..10 parents, max error {worst!r} (required 0)"


def test_criterion_03_noisy_or():
    report(3, "noisy-OR closed form", *check_noisy_or())


# --- 4 ------------------------------------------------------------------------


def composition_errors():
    S2, S3 = fx.S2, fx.S3
    cases = {}

    def attempt(name, expected, fragments, binding):
        try:
            compose(fragments, Binding.of(binding))
        except expected:
            cases[name] = True
        except Exception:  # noqa: BLE001
            cases[name] = False
        else:
            cases[name] = False

    # two fragments both define A
    attempt(
        "HomeConflict",
        HomeConflict,
        [fx.f1_prior_a(), fx.frag("G", residents=[fx.var("A", S2, cpt=prior(0.5, 0.5))])],
        {},
    )
    attempt("InterfaceMismatch", InterfaceMismatch, [fx.f1_prior_a(), fx.f2_b_given_a(S3)], {("F2", "A"): ("F1", "A")})
    cyc_a = fx.frag(
        "F1", inputs=[fx.inp("B", S2)], residents=[fx.var("A", S2, ["B"], table({("t",): (0.5, 0.5), ("f",): (0.5, 0.5)}))]
    )
    cyc_b = fx.frag(
        "F2", inputs=[fx.inp("A", S2)], residents=[fx.var("B", S2, ["A"], table({("t",): (0.5, 0.5), ("f",): (0.5, 0.5)}))]
    )
    attempt("CrossCycle", CrossCycle, [cyc_a, cyc_b], {("F1", "B"): ("F2", "B"), ("F2", "A"): ("F1", "A")})
    attempt("UnboundInput", UnboundInput, [fx.f1_prior_a(), fx.f2_b_given_a()], {})
    return cases


def _network_key(net):
    return (
        tuple(net.variables),
        tuple(sorted((k, tuple(v)) for k, v in net.parents.items())),
        tuple(sorted((k, net.cpts[k]) for k in net.cpts)),
        tuple(sorted(net.provenance.items())),
    )


def check_composition():
    errors = composition_errors()
    kb = fx.demo_kb()
    decl = kb.model("theater")
    frags = {f.name: f for f in kb.fragments}
    used = [frags[n] for n in decl.uses]
    binding = Binding(tuple(((sf, si), (tf, tr)) for sf, si, tf, tr in decl.binds))
    keys = set()
    perms = 0
    for perm in itertools.permutations(used):
        model = compose(list(perm), binding, kb.hierarchy, kb.registry)
        keys.add(_network_key(compile_model(model)))
        perms += 1
    ok = all(errors.values()) and len(keys) == 1 and perms == 24
    detail = ", ".join(f"{k} {'raised' if v else 'NOT raised'}" for k, v in errors.items())
    return ok, f"{detail}; {perms} permutations of the 4-fragment demo -> {len(keys)} distinct compiled network(s)"


def test_criterion_04_composition():
    report(4, "composition and separability", *check_composition())


# --- 5 ------------------------------------------------------------------------


def stub_fixture():
    """upstream A -> middle (M|A, X|M) -> downstream (Y|X, Z|Y)."""
    S2, S3 = fx.S2, fx.S3
    up = fx.frag("up", residents=[fx.var("A", S2, cpt=prior(0.35, 0.65))])
    middle = fx.frag(
        "middle",
        inputs=[fx.inp("A", S2)],
        residents=[
            fx.var("M", S3, ["A"], table({("t",): (0.6, 0.3, 0.1), ("f",): (0.2, 0.3, 0.5)})),
            fx.var("X", S2, ["M"], table({("lo",): (0.9, 0.1), ("mid",): (0.5, 0.5), ("hi",): (0.15, 0.85)})),
        ],
    )
    down = fx.frag(
        "down",
        inputs=[fx.inp("X", S2)],
        residents=[
            fx.var("Y", S3, ["X"], table({("t",): (0.7, 0.2, 0.1), ("f",): (0.1, 0.3, 0.6)})),
            fx.var("Z", S2, ["Y"], table({("lo",): (0.8, 0.2), ("mid",): (0.4, 0.6), ("hi",): (0.05, 0.95)})),
        ],
    )
    return up, middle, down


def check_stub_transparency():
    up, middle, down = stub_fixture()
    full = compile_model(
        compose([up, middle, down], Binding.of({("middle", "A"): ("up", "A"), ("down", "X"): ("middle", "X")}))
    )
    boundary = brute_force_posterior(full, {}, ["X"])["X"].probabilities
    stub = fx.frag("middle_stub", residents=[fx.var("X", fx.S2, cpt=prior(*boundary))], stub=True)
    proto_model = compose([up, stub, down], Binding.of({("down", "X"): ("middle_stub", "X")}))
    proto = compile_model(proto_model)

    worst = 0.0
    queries = [{}, {"Z": "t"}, {"Y": "hi"}, {"Z": "f", "Y": "mid"}, {"X": "t"}]
    for ev in queries:
        targets = [v for v in ("X", "Y", "Z") if v not in ev]
        a, b = posterior(full, ev, targets), posterior(proto, ev, targets)
        for t in targets:
            worst = max(worst, float(np.max(np.abs(np.array(a[t].probabilities) - b[t].probabilities))))

    swapped = compile_model(substitute_stub(proto_model, "middle_stub", middle, Binding.of({("middle", "A"): ("up", "A")})))
    same = _network_key(swapped) == _network_key(full)
    ok = worst <= 1e-9 and same
    return ok, (
        f"downstream posteriors under {len(queries)} evidence sets max |diff| {worst:.1e} (tol 1e-9); "
        f"substitute_stub result {'equals' if same else 'DIFFERS from'} direct composition"
    )


def test_criterion_05_stub_transparency():
    report(5, "stub transparency", *check_stub_transparency())


# --- 6 ------------------------------------------------------------------------


def check_conflict():
    indep = conflict(fx.independent_net(), {"F": "t", "E": "b", "G": "f"})
    contra = conflict(fx.witness_net(), {"B1": "t", "B2": "f"})
    support = conflict(fx.witness_net(), {"B1": "t", "B2": "t"})
    expected = math.log2(0.25 / 0.0099)
    ok = (
        abs(indep.value) <= 1e-9
        and not indep.flagged
        and abs(contra.value - expected) <= 1e-3
        and contra.flagged
        and support.value < 0
        and not support.flagged
    )
    return ok, (
        f"independent {indep.value:.1e} (0 +/- 1e-9); contradiction {contra.value:.6f} bits "
        f"(expected {expected:.6f} +/- 1e-3) flagged={contra.flagged}; supportive {support.value:.4f} flagged={support.flagged}"
    )


def test_criterion_06_conflict():
    report(6, "conflict measure", *check_conflict())


# --- 7 ------------------------------------------------------------------------


def check_regression():
    scenario = Scenario("reg", ("A", "C"), (("B", None), ("D", ("t",))))
    base = run_cases(fx.regression_net(), scenario)
    golden = record_golden(base, "0" * 64)
    self_report = compare_golden(base, golden, 1e-6)
    perturbed = run_cases(fx.regression_net(0.9 - 0.05), scenario)
    rep = compare_golden(perturbed, golden, 1e-6)
    focus_a = {d.focus for d in rep.drifts} == {"A"}
    c_deltas = [
        abs(new.marginals["C"][s] - old.marginals["C"][s])
        for old, new in zip(base.cases, perturbed.cases)
        for s in ("t", "f")
    ]
    ok = self_report.ok and not rep.ok and focus_a and max(c_deltas) == 0.0
    return ok, (
        f"self-comparison {len(self_report.drifts)} drifts; perturbation 0.05 -> {len(rep.drifts)} drifts on "
        f"focus {sorted({d.focus for d in rep.drifts})}; d-separated focus C max delta {max(c_deltas)!r} (exact 0)"
    )


def test_criterion_07_regression():
    report(7, "regression harness", *check_regression())


# --- 8 ------------------------------------------------------------------------


def check_round_trip():
    failures = 0
    for i in range(1000):
        kb = random_kb(random.Random(i))
        text = serialize_kb(kb)
        parsed = parse_kb(text)
        if parsed.diagnostics or parsed.kb != kb or serialize_kb(parsed.kb) != text:
            failures += 1
    return failures == 0, f"1000 random KBs, {failures} round-trip/idempotence failures"


def test_criterion_08_round_trip():
    report(8, "DSL round-trip", *check_round_trip())


# --- 9 ------------------------------------------------------------------------


def check_versioning():
    failures = []
    snapshots = 0
    with tempfile.TemporaryDirectory() as tmp:
        for seq in range(100):
            rng = random.Random(seq)
            store = Store(Path(tmp) / f"s{seq}")
            kb = parse_kb(serialize_kb(random_kb(rng))).kb
            prev = store.snapshot(kb, "start", "seed", timestamp=f"{seq:03d}-00")
            if store.snapshot(kb, "again", "", timestamp="later") != prev:
                failures.append((seq, "idempotence"))
            for step in range(1, 6):
                new = parse_kb(serialize_kb(random_edit(rng, kb))).kb
                v = store.snapshot(new, f"edit {step}", "random edit", prev.version_id, f"{seq:03d}-{step:02d}")
                snapshots += 1
                if not store.diff(v.version_id, v.version_id).empty:
                    failures.append((seq, "self-diff"))
                d = store.diff(prev.version_id, v.version_id)
                if d.empty != (v.version_id == prev.version_id):
                    failures.append((seq, "empty-iff-equal"))
                if serialize_kb(apply_diff(store.load(prev.version_id), d)) != serialize_kb(store.load(v.version_id)):
                    failures.append((seq, "completeness"))
                if diff_kbs(kb, new).changes != d.changes:
                    failures.append((seq, "store diff"))
                kb, prev = new, v
    return not failures, f"100 edit sequences, {snapshots} snapshots, failures: {failures[:3] or 'none'}"


def test_criterion_09_versioning():
    report(9, "versioning", *check_versioning())


# --- 10 -----------------------------------------------------------------------

REVIEW_FIXTURES = {
    # rule: (text edit that triggers it, severity)
    "R1": (("  input Distance\n", "  input Distance states {near, mid, far, beyond}\n"), "error"),
    "R2": (("(mid): (0.6, 0.4)", "(mid): (0.6, 0.5)"), "error"),
    "R3": (("(mid): (0.6, 0.4)", "(mid): (0.9, 0.1)"), "warning"),
    "R4": (("(far): (0.3, 0.7)", "(far): (0.95, 0.05)"), "error"),
    "R5": (("along Distance", "along Distanse"), "error"),
    "R6": (None, "info"),
    "R7": (("class Sensor {", "class Unused { states {a, b} }\nclass Sensor {"), "warning"),
}
NO_STUB = fx.CLEAN_KB.replace("stub later {\n  var Later states {yes, no} prior (0.5, 0.5)\n}\n", "").replace(
    "use world, detect, later", "use world, detect"
)


def check_review():
    results = {}
    for rule, (edit, severity) in REVIEW_FIXTURES.items():
        if rule == "R6":
            positive, negative = fx.CLEAN_KB, NO_STUB
        else:
            positive, negative = fx.CLEAN_KB.replace(*edit), fx.CLEAN_KB
            assert positive != negative, rule
        pos = elicitation_review(fx.kb(positive))
        neg = elicitation_review(fx.kb(negative))
        hit = any(f.rule == rule and f.severity == severity for f in pos)
        quiet = not any(f.rule == rule for f in neg)
        stable = elicitation_review(fx.kb(positive)) == pos and pos == sorted(
            pos, key=lambda f: (f.location.file, f.location.line, f.rule)
        )
        results[rule] = hit and quiet and stable
    cycle = fx.kb("class A extends B { states {x, y} }\nclass B extends A { }\n")
    results["R7-cycle"] = any(f.rule == "R7" and f.severity == "error" for f in elicitation_review(cycle))
    ok = all(results.values())
    return ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in results.items()) + " (positive+negative, stable order)"


def test_criterion_10_review_rules():
    report(10, "review rules R1-R7", *check_review())


CHECKS = [
    (1, "oracle equivalence", check_oracle_equivalence),
    (2, "importance correctness", check_importance),
    (3, "noisy-OR closed form", check_noisy_or),
    (4, "composition and separability", check_composition),
    (5, "stub transparency", check_stub_transparency),
    (6, "conflict measure", check_conflict),
    (7, "regression harness", check_regression),
    (8, "DSL round-trip", check_round_trip),
    (9, "versioning", check_versioning),
    (10, "review rules R1-R7", check_review),
]


def main() -> int:
    failed = 0
    start = time.perf_counter()
    for number, title, check in CHECKS:
        ok, detail = check()
        print(f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}")
        failed += not ok
    print(f"{len(CHECKS) - failed}/{len(CHECKS)} criteria passed in {time.perf_counter() - start:.1f}s")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())

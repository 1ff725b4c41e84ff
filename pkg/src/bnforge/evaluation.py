"""Importance analysis, synergy sampling, conflict scoring and report rendering.

Importance of evidence variable E for focus F given base evidence b is the
expected squared change of the focus belief vector:

    I(F; E | b) = sum_e P(e|b) * sum_f (P(f|e,b) - P(f|b))**2

which equals E_e[sum_f P(f|e,b)**2] - sum_f P(f|b)**2, the expected gain in
the quadratic score of F.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import BnError, CompiledNetwork
from .inference import Marginal, ZeroProbabilityEvidence, check_evidence, evidence_probability, joint_posterior, posterior

DEFAULT_CONFLICT_THRESHOLD = 2.0

PosteriorFn = Callable[[CompiledNetwork, Mapping[str, str], Sequence[str]], Mapping[str, Marginal]]


class ImportanceError(BnError):
    pass


@dataclass(frozen=True)
class ImportanceEntry:
    name: str
    importance: float
    score: float  # 100 * I / I_max, unrounded
    rank: int

    @property
    def stars(self) -> int:
        return 0 if self.score == 0 else math.ceil(5 * self.score / 100)

    @property
    def score_text(self) -> str:
        if self.score == 0:
            return "0"
        if self.score < 1:
            return "0+"
        return str(int(math.floor(self.score + 0.5)))


@dataclass(frozen=True)
class ImportanceResult:
    focus: str
    entries: tuple[ImportanceEntry, ...]
    base: Mapping[str, str] = field(default_factory=dict)

    def __getitem__(self, name: str) -> ImportanceEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def ranking(self) -> list[str]:
        return [e.name for e in self.entries]


def _validate_query(net: CompiledNetwork, focus: str, evidence_vars: Sequence[str], base: Mapping[str, str]) -> None:
    net.variable(focus)
    check_evidence(net, base)
    if focus in evidence_vars:
        raise ImportanceError(f"focus variable {focus!r} cannot also be an evidence variable")
    if len(set(evidence_vars)) != len(evidence_vars):
        raise ImportanceError("evidence variables must be distinct")
    for v in evidence_vars:
        net.variable(v)
        if v in base:
            raise ImportanceError(f"evidence variable {v!r} is already observed in the base evidence")
    if focus in base:
        raise ImportanceError(f"focus variable {focus!r} is observed in the base evidence")


def single_importance(
    net: CompiledNetwork,
    focus: str,
    evidence_var: str,
    base: Mapping[str, str],
    infer: PosteriorFn = posterior,
) -> float:
    prior_f = np.array(infer(net, base, [focus])[focus].probabilities)
    p_e = infer(net, base, [evidence_var])[evidence_var]
    terms = []
    for state, pe in zip(p_e.states, p_e.probabilities):
        if pe == 0.0:
            continue
        try:
            post = infer(net, {**base, evidence_var: state}, [focus])[focus]
        except ZeroProbabilityEvidence:
            continue
        terms.append(pe * math.fsum((np.array(post.probabilities) - prior_f) ** 2))
    return math.fsum(terms)


def importance(
    net: CompiledNetwork,
    focus: str,
    evidence_vars: Sequence[str],
    base: Mapping[str, str] | None = None,
    infer: PosteriorFn = posterior,
) -> ImportanceResult:
    """Rank evidence variables by their expected impact on the focus belief.

    ``infer`` selects the posterior engine, so the ranking can be recomputed
    with ``brute_force_posterior``.
    """
    base = dict(base or {})
    evidence_vars = list(evidence_vars)
    _validate_query(net, focus, evidence_vars, base)
    if base and evidence_probability(net, base) == 0.0:
        raise ImportanceError(f"base evidence is impossible: {base}")
    try:
        values = {v: single_importance(net, focus, v, base, infer) for v in evidence_vars}
    except ZeroProbabilityEvidence as exc:
        raise ImportanceError(f"base evidence is impossible: {exc}") from None
    return _rank(focus, values, base)


def _rank(focus: str, values: Mapping[str, float], base: Mapping[str, str]) -> ImportanceResult:
    order = sorted(values, key=lambda v: (-values[v], v))
    top = max(values.values(), default=0.0)
    entries = tuple(
        ImportanceEntry(v, values[v], 100.0 * (values[v] / top) if top > 0 else 0.0, i + 1) for i, v in enumerate(order)
    )
    return ImportanceResult(focus, entries, dict(base))


def quadratic_score_gain(net: CompiledNetwork, focus: str, evidence_vars: Sequence[str], base: Mapping[str, str]) -> float:
    """E_e[sum_f P(f|e,b)^2] - sum_f P(f|b)^2 for the compound variable ``evidence_vars``.

    Computed from the joint table P(E..., F | b), independently of ``importance``.
    """
    joint = joint_posterior(net, base, [*evidence_vars, focus])
    table = joint.reshape(-1, joint.shape[-1])
    p_e = table.sum(axis=1)
    p_f = table.sum(axis=0)
    expected = math.fsum(float(np.sum(row**2) / pe) for row, pe in zip(table, p_e) if pe > 0)
    return expected - math.fsum(p_f**2)


def joint_importance(net: CompiledNetwork, focus: str, evidence_vars: Sequence[str], base: Mapping[str, str]) -> float:
    """Importance of a combination treated as one compound evidence variable.

    Each configuration's focus posterior comes from ``posterior``, so evidence
    d-separated from the focus contributes exactly zero.
    """
    prior_f = np.array(posterior(net, base, [focus])[focus].probabilities)
    p_e = joint_posterior(net, base, list(evidence_vars))
    spaces = [net.space(v).states for v in evidence_vars]
    terms = []
    for idx in itertools.product(*(range(len(s)) for s in spaces)):
        pe = float(p_e[idx])
        if pe == 0.0:
            continue
        config = {v: spaces[i][j] for i, (v, j) in enumerate(zip(evidence_vars, idx))}
        try:
            post = posterior(net, {**base, **config}, [focus])[focus]
        except ZeroProbabilityEvidence:
            continue
        terms.append(pe * math.fsum((np.array(post.probabilities) - prior_f) ** 2))
    return math.fsum(terms)


@dataclass(frozen=True)
class SynergyResult:
    combination: tuple[str, ...]
    joint: float
    synergy: float


def synergy_sample(
    net: CompiledNetwork,
    focus: str,
    evidence_vars: Sequence[str],
    k: int,
    n: int,
    seed: int,
    base: Mapping[str, str] | None = None,
) -> list[SynergyResult]:
    """Sample ``n`` distinct size-``k`` combinations and compare joint vs summed importance.

    Negative synergy means redundancy, positive means the variables are
    jointly more informative than separately.
    """
    base = dict(base or {})
    evidence_vars = list(evidence_vars)
    _validate_query(net, focus, evidence_vars, base)
    if not 2 <= k <= len(evidence_vars):
        raise ImportanceError(f"combination size k={k} outside [2, {len(evidence_vars)}]")
    if n < 1:
        raise ImportanceError("sample count must be at least 1")
    combos = list(itertools.combinations(evidence_vars, k))
    if n >= len(combos):
        chosen = combos
    else:
        chosen = [combos[i] for i in sorted(random.Random(seed).sample(range(len(combos)), n))]
    singles: dict[str, float] = {}
    out = []
    for combo in chosen:
        for v in combo:
            if v not in singles:
                singles[v] = single_importance(net, focus, v, base)
        joint = joint_importance(net, focus, combo, base)
        out.append(SynergyResult(combo, joint, joint - math.fsum(singles[v] for v in combo)))
    return out


@dataclass(frozen=True)
class ConflictScore:
    value: float  # bits; +inf when the evidence is impossible
    threshold: float
    flagged: bool
    impossible: bool = False


def conflict(
    net: CompiledNetwork, evidence: Mapping[str, str], threshold: float = DEFAULT_CONFLICT_THRESHOLD
) -> ConflictScore:
    """log2( prod_i P(e_i) / P(e) ); large positive values suggest out-of-scope evidence."""
    check_evidence(net, evidence)
    joint = evidence_probability(net, evidence)
    if joint == 0.0:
        return ConflictScore(math.inf, threshold, True, True)
    log_singles = math.fsum(math.log2(evidence_probability(net, {v: s})) for v, s in evidence.items())
    value = log_singles - math.log2(joint)
    return ConflictScore(value, threshold, value > threshold)


def render_importance_report(result: ImportanceResult, title: str | None = None) -> str:
    """Plain-text bar chart: stars, score, name; rows in rank order."""
    observations = ", ".join(f"{v}: {s}" for v, s in sorted(result.base.items())) or "none"
    lines = [
        f'Importance Analysis for "{title or result.focus}"',
        f"Current Observations: {observations}",
        f"{'IMPORTANCE':<10} {'##':>4} NAME",
    ]
    for e in result.entries:
        lines.append(f"{'*' * e.stars:<10} {e.score_text:>4} {e.name}")
    return "\n".join(lines) + "\n"


def importance_to_json(result: ImportanceResult) -> dict:
    return {
        "focus": result.focus,
        "base": dict(sorted(result.base.items())),
        "entries": [
            {"name": e.name, "importance": e.importance, "score": e.score, "stars": e.stars} for e in result.entries
        ],
    }

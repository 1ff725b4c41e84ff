"""Command-line front end: ``bnforge <command> ...``.

Exit codes: 0 clean, 1 the model has problems (findings, regressions,
flagged conflict, composition failure), 2 usage, parse or reference errors,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from .core import BnError, CompiledNetwork, CptError, UnknownReference
from .dsl import KbSyntaxError, KnowledgeBase, format_constraint, load_kb
from .evaluation import (
    DEFAULT_CONFLICT_THRESHOLD,
    conflict,
    importance,
    importance_to_json,
    render_importance_report,
    synergy_sample,
)
from .fragments import ClassCycle, CompositionError, InvalidNetwork, MissingFeature, TemplateError
from .harness import (
    DEFAULT_TOL,
    CaseSetMismatch,
    GoldenRecord,
    coverage,
    compare_golden,
    elicitation_review,
    generate_cases,
    has_problems,
    record_golden,
    results_to_json,
    run_cases,
)
from .inference import ZeroProbabilityEvidence, posterior
from .kbver import Store, change_to_json, version_id
from .workbench import compile_kb

OK, PROBLEMS, USAGE, INTERNAL = 0, 1, 2, 3
SCHEMA_VERSION = 1

# the model itself is at fault, not the invocation
MODEL_ERRORS = (
    CompositionError,
    InvalidNetwork,
    CptError,
    MissingFeature,
    ClassCycle,
    TemplateError,
    ZeroProbabilityEvidence,
    CaseSetMismatch,
)


class UsageError(BnError):
    pass


def store_root() -> Path:
    return Path(os.environ.get("BNFORGE_STORE", ".bnforge"))


def parse_assignments(items: Sequence[str] | None) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"expected V=state, got {item!r}")
        var, state = item.split("=", 1)
        var, state = var.strip(), state.strip()
        if not var or not state:
            raise UsageError(f"expected V=state, got {item!r}")
        if var in out and out[var] != state:
            raise UsageError(f"variable {var!r} given two states")
        out[var] = state
    return out


def parse_names(items: Sequence[str] | None) -> list[str]:
    out: list[str] = []
    for item in items or ():
        out.extend(n.strip() for n in item.split(",") if n.strip())
    return out


def emit(args, doc: dict, text: str) -> None:
    if args.json:
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    else:
        sys.stdout.write(text)


def _load(args) -> KnowledgeBase:
    return load_kb(args.kb)


def _compile(args) -> tuple[KnowledgeBase, CompiledNetwork]:
    kb = _load(args)
    return kb, compile_kb(kb, args.model)


def _fmt(p: float) -> str:
    return f"{p:.6f}"


# --- commands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    kb, net = _compile(args)
    doc = {"schema_version": SCHEMA_VERSION, "kind": "validate", "ok": True, "variables": len(net.names)}
    emit(args, doc, f"ok: {args.kb} compiles to {len(net.names)} variables\n")
    return OK


def network_to_json(net: CompiledNetwork) -> dict:
    variables = []
    for v in net.variables:
        prov = net.provenance.get(v.name)
        variables.append(
            {
                "name": v.name,
                "states": list(v.space.states),
                "ordered": v.space.ordered,
                "class": v.class_ref,
                "parents": list(net.parents[v.name]),
                "cpt": [list(row) for row in net.cpts[v.name]],
                "fragment": prov.fragment if prov else None,
                "form": prov.form if prov else None,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "network",
        "variables": variables,
        "constraints": [format_constraint(c) for c in net.constraints],
    }


def cmd_compile(args) -> int:
    _, net = _compile(args)
    text = json.dumps(network_to_json(net), indent=2) + "\n"
    out = Path(args.out)
    out.write_text(text, encoding="utf-8")
    emit(args, {"schema_version": SCHEMA_VERSION, "kind": "compile", "out": str(out), "variables": len(net.names)},
         f"wrote {len(net.names)} variables to {out}\n")
    return OK


def cmd_infer(args) -> int:
    _, net = _compile(args)
    evidence = parse_assignments(args.evidence)
    targets = parse_names(args.target) or [n for n in net.names if n not in evidence]
    post = posterior(net, evidence, targets)
    lines = []
    for t in targets:
        m = post[t]
        lines.append(f"{t}: " + "  ".join(f"{s}={_fmt(p)}" for s, p in zip(m.states, m.probabilities)))
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "infer",
        "evidence": dict(sorted(evidence.items())),
        "marginals": {t: post[t].as_dict() for t in targets},
    }
    emit(args, doc, "\n".join(lines) + "\n")
    return OK


def cmd_importance(args) -> int:
    _, net = _compile(args)
    base = parse_assignments(args.base)
    evidence_vars = parse_names(args.evidence) or [n for n in net.names if n != args.focus and n not in base]
    result = importance(net, args.focus, evidence_vars, base)
    doc = {"schema_version": SCHEMA_VERSION, "kind": "importance", **importance_to_json(result)}
    emit(args, doc, render_importance_report(result))
    return OK


def cmd_synergy(args) -> int:
    _, net = _compile(args)
    base = parse_assignments(args.base)
    evidence_vars = parse_names(args.evidence) or [n for n in net.names if n != args.focus and n not in base]
    results = synergy_sample(net, args.focus, evidence_vars, args.k, args.samples, args.seed, base)
    lines = [f"{'SYNERGY':>12} {'JOINT':>12}  COMBINATION"]
    for r in results:
        lines.append(f"{r.synergy:>12.6f} {r.joint:>12.6f}  {', '.join(r.combination)}")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "synergy",
        "focus": args.focus,
        "k": args.k,
        "seed": args.seed,
        "results": [{"combination": list(r.combination), "joint": r.joint, "synergy": r.synergy} for r in results],
    }
    emit(args, doc, "\n".join(lines) + "\n")
    return OK


def cmd_conflict(args) -> int:
    _, net = _compile(args)
    evidence = parse_assignments(args.evidence)
    if not evidence:
        raise UsageError("conflict needs at least one --evidence V=state")
    score = conflict(net, evidence, args.threshold)
    verdict = "FLAGGED" if score.flagged else "ok"
    text = "impossible evidence" if score.impossible else f"{score.value:.6f} bits"
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "conflict",
        "evidence": dict(sorted(evidence.items())),
        "value": None if score.impossible else score.value,
        "impossible": score.impossible,
        "threshold": score.threshold,
        "flagged": score.flagged,
    }
    emit(args, doc, f"conflict: {text} (threshold {score.threshold:g}) {verdict}\n")
    return PROBLEMS if score.flagged else OK


def cmd_review(args) -> int:
    kb = _load(args)
    net = None
    if args.model is not None:
        net = compile_kb(kb, args.model)
    findings = elicitation_review(kb, net)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "review",
        "findings": [
            {
                "rule": f.rule,
                "severity": f.severity,
                "file": f.location.file,
                "line": f.location.line,
                "column": f.location.column,
                "message": f.message,
            }
            for f in findings
        ],
    }
    counts = {s: sum(f.severity == s for f in findings) for s in ("error", "warning", "info")}
    summary = f"{counts['error']} error(s), {counts['warning']} warning(s), {counts['info']} info\n"
    emit(args, doc, "".join(f"{f}\n" for f in findings) + summary)
    return PROBLEMS if has_problems(findings) else OK


def _scenario(kb: KnowledgeBase, name: str):
    s = kb.scenario(name)
    if s is None:
        raise UnknownReference(f"unknown scenario {name!r}", name)
    return s


def _results_text(results) -> str:
    lines = []
    for c in results.cases:
        ev = ", ".join(f"{v}={s}" for v, s in c.assignments) or "(none)"
        tag = " [unanticipated]" if c.unanticipated else ""
        if c.impossible:
            lines.append(f"case {c.index}: {ev}{tag}: impossible")
            continue
        lines.append(f"case {c.index}: {ev}{tag}: P(e)={c.evidence_probability:.6g} conflict={c.conflict:.4f}")
        for f, m in c.marginals.items():
            lines.append(f"  {f}: " + "  ".join(f"{s}={_fmt(p)}" for s, p in m.items()))
    return "\n".join(lines) + "\n"


def cmd_cases(args) -> int:
    kb, net = _compile(args)
    scenario = _scenario(kb, args.scenario)
    cases = generate_cases(scenario, net)
    if args.action == "gen":
        cov = coverage(scenario, cases, net)
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "cases",
            "scenario": scenario.name,
            "coverage": cov,
            "cases": [
                {"index": c.index, "assignments": dict(c.assignments), "unanticipated": c.unanticipated} for c in cases
            ],
        }
        lines = [
            f"case {c.index}: " + (", ".join(f"{v}={s}" for v, s in c.assignments) or "(none)")
            + (" [unanticipated]" if c.unanticipated else "")
            for c in cases
        ]
        lines.append(f"{len(cases)} case(s), coverage {cov:.4f}")
        emit(args, doc, "\n".join(lines) + "\n")
        return OK

    results = run_cases(net, scenario, cases, workers=args.workers)
    if args.action == "run":
        emit(args, results_to_json(results), _results_text(results))
        return OK
    if args.golden is None:
        raise UsageError(f"cases {args.action} needs --golden FILE")
    golden_path = Path(args.golden)
    if args.action == "record":
        record = record_golden(results, version_id(kb))
        golden_path.write_text(json.dumps(record.to_json(), indent=2) + "\n", encoding="utf-8")
        emit(
            args,
            {"schema_version": SCHEMA_VERSION, "kind": "record", "golden": str(golden_path), "cases": len(results.cases)},
            f"recorded {len(results.cases)} case(s) to {golden_path}\n",
        )
        return OK
    try:
        golden = GoldenRecord.from_json(json.loads(golden_path.read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read golden file {golden_path}: {exc}") from None
    report = compare_golden(results, golden, args.tol)
    lines = [
        f"REGRESSION case {d.case} {d.focus}={d.state}: {d.golden!r} -> {d.current!r} (delta {d.delta:+.3g})"
        for d in report.drifts
    ]
    lines += [f"REGRESSION case {s.case}: status {s.golden} -> {s.current}" for s in report.status_changes]
    lines.append(
        f"{len(results.cases)} case(s) compared at tol {args.tol:g}: "
        + ("no regressions" if report.ok else f"{len(report.flagged_cases)} case(s) regressed")
    )
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "compare",
        "scenario": scenario.name,
        "tol": args.tol,
        "ok": report.ok,
        "drifts": [
            {"case": d.case, "focus": d.focus, "state": d.state, "golden": d.golden, "current": d.current}
            for d in report.drifts
        ],
        "status_changes": [{"case": s.case, "golden": s.golden, "current": s.current} for s in report.status_changes],
    }
    emit(args, doc, "\n".join(lines) + "\n")
    return OK if report.ok else PROBLEMS


def _version_json(v) -> dict:
    return v.to_json()


def cmd_snapshot(args) -> int:
    kb = _load(args)
    store = Store(store_root())
    parent = store.resolve(args.parent) if args.parent else store.head()
    v = store.snapshot(kb, args.message, args.rationale or "", parent, args.timestamp)
    emit(args, {"schema_version": SCHEMA_VERSION, "kind": "snapshot", "version": _version_json(v)}, v.version_id + "\n")
    return OK


def cmd_diff(args) -> int:
    store = Store(store_root())
    a, b = store.resolve(args.v1), store.resolve(args.v2)
    d = store.diff(a, b)
    lines = []
    for c in d:
        line = c.describe()
        if c.op == "changed" and c.kind in ("cpt_row", "arcs"):
            j = change_to_json(c)
            line += f": {j['before']} -> {j['after']}"
        lines.append(line)
    lines.append(f"{len(d)} change(s)")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "diff",
        "from": a,
        "to": b,
        "changes": [change_to_json(c) for c in d],
    }
    emit(args, doc, "\n".join(lines) + "\n")
    return OK


def cmd_log(args) -> int:
    history = Store(store_root()).log()
    lines = []
    for v in history:
        lines.append(f"{v.version_id[:12]} parent={v.parent_id[:12] if v.parent_id else '-'} {v.timestamp} {v.message}")
        if v.rationale:
            lines.append(f"    rationale: {v.rationale}")
    doc = {"schema_version": SCHEMA_VERSION, "kind": "log", "versions": [_version_json(v) for v in history]}
    emit(args, doc, "".join(line + "\n" for line in lines))
    return OK


# --- argument parsing -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    modelopt = _Parser(add_help=False, parents=[common])
    modelopt.add_argument("--model", help="model to compile (default: first declared)")
    kbopts = _Parser(add_help=False, parents=[modelopt])
    kbopts.add_argument("kb", help="knowledge-base file (.bnkb)")

    parser = _Parser(prog="bnforge", description="Build, test and version Bayesian-network knowledge bases.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("validate", parents=[kbopts], help="parse and compile a knowledge base")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compile", parents=[kbopts], help="write the compiled network as JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("infer", parents=[kbopts], help="posterior marginals")
    p.add_argument("--target", action="append", help="target variable(s), repeatable or comma-separated")
    p.add_argument("--evidence", nargs="+", action="extend", metavar="V=STATE")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("importance", parents=[kbopts], help="rank evidence variables for a focus")
    p.add_argument("--focus", required=True)
    p.add_argument("--evidence", action="append", metavar="V1,V2", help="candidate evidence variables")
    p.add_argument("--base", nargs="+", action="extend", metavar="V=STATE", help="current observations")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("synergy", parents=[kbopts], help="sampled joint-vs-single importance of combinations")
    p.add_argument("--focus", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--evidence", action="append", metavar="V1,V2")
    p.add_argument("--base", nargs="+", action="extend", metavar="V=STATE")
    p.set_defaults(func=cmd_synergy)

    p = sub.add_parser("conflict", parents=[kbopts], help="conflict score of a set of findings")
    p.add_argument("--evidence", nargs="+", action="extend", metavar="V=STATE")
    p.add_argument("--threshold", type=float, default=DEFAULT_CONFLICT_THRESHOLD)
    p.set_defaults(func=cmd_conflict)

    p = sub.add_parser("review", parents=[kbopts], help="elicitation review (rules R1-R7)")
    p.set_defaults(func=cmd_review)

    p = sub.add_parser("cases", parents=[modelopt], help="scenario test cases and golden regression")
    p.add_argument("action", choices=["gen", "run", "record", "compare"])
    p.add_argument("kb", help="knowledge-base file (.bnkb)")
    p.add_argument("--scenario", required=True)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--golden", help="golden file")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_cases)

    p = sub.add_parser("snapshot", parents=[common], help="store a version of a knowledge base")
    p.add_argument("kb")
    p.add_argument("-m", "--message", required=True)
    p.add_argument("-r", "--rationale", default="")
    p.add_argument("--parent", help="parent version (default: latest)")
    p.add_argument("--timestamp", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_snapshot)

    p = sub.add_parser("diff", parents=[common], help="structural diff between two stored versions")
    p.add_argument("v1")
    p.add_argument("v2")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("log", parents=[common], help="version history")
    p.set_defaults(func=cmd_log)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except KbSyntaxError as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return USAGE
    except MODEL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return PROBLEMS
    except BnError as exc:  # unknown names and versions, bad queries
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return INTERNAL


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

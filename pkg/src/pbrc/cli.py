"""Command-line entry point.

Exit codes: 0 success or invariant holds; 1 usage or I/O error; 2 invariant
violated, with a JSON payload on stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Sequence

from .belief import Belief, argmax
from .contract import load_contract, running_example_contract, save_contract
from .evidence import ValidityConfig, config_from_dict, issue_token, load_events, make_event, save_events, tokens_valid
from .router import AttributionViolation, AuditLog, Router, RouterConfig, attribute_flip, verify_audit

OK, USAGE, VIOLATION = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


def _emit(payload) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _validity(path: str | None) -> ValidityConfig:
    if path is None:
        return ValidityConfig()
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def _belief(text: str | None) -> Belief | None:
    if text is None:
        return None
    return Belief(tuple(float(x) for x in text.split(",")))


def _seed(arg: int | None, fallback: int) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("PBRC_SEED")
    return int(env) if env else fallback


# -- subcommands ----------------------------------------------------------------------


def cmd_simulate(a) -> int:
    from .sim import SimConfig, export_sim1_run, run_sim, write_outputs

    base = {}
    if a.config:
        with open(a.config, encoding="utf-8") as fh:
            base = json.load(fh)
    if a.sim:
        base["sim_id"] = a.sim
    base["seed"] = _seed(a.seed, base.get("seed", 0))
    if a.trials is not None:
        base["trials"] = a.trials
    if a.jobs is not None:
        base["jobs"] = a.jobs
    if a.audit:
        base["audit"] = True
    cfg = SimConfig.from_dict(base)
    m = run_sim(cfg)
    paths = write_outputs(m, cfg, a.out)
    if a.export_run:
        if cfg.sim_id not in ("I", "Ib"):
            raise ValueError("--export-run applies to Simulation I only")
        export_sim1_run(cfg, a.export_run, topology=a.export_topology)
    for p in paths:
        print(p)
    return OK


def cmd_audit_verify(a) -> int:
    log = AuditLog.load(a.log)
    bad = verify_audit(log)
    if bad is None:
        _emit({"ok": True, "records": len(log)})
        return OK
    _emit({"ok": False, "first_bad_index": bad})
    return VIOLATION


def _truth(text: str, labels: Sequence[str]) -> int:
    if text in labels:
        return list(labels).index(text)
    return int(text)


def cmd_audit_localize(a) -> int:
    from .adversary import GroundTruth, TamperedLog, localize_failure

    log = AuditLog.load(a.log)
    events = load_events(a.events)
    c = load_contract(a.contract)
    m = log[0].belief_after.m if len(log) else 2
    gt = GroundTruth(_truth(a.truth, c.hypothesis_labels(m)), float(a.delta))
    try:
        v = localize_failure(log, events, c, gt, _validity(a.validity), _belief(a.initial))
    except TamperedLog as exc:
        _emit({"error": "TamperedLog", "message": str(exc)})
        return VIOLATION
    except AttributionViolation as exc:
        _emit({"error": "AttributionViolation", "round": exc.round, "agent": exc.agent, "message": str(exc)})
        return VIOLATION
    _emit(v.to_dict())
    return OK if v.first_bad_round is None else VIOLATION


def cmd_audit_attribute(a) -> int:
    log = AuditLog.load(a.log)
    try:
        flips = attribute_flip(log, _belief(a.initial))
    except AttributionViolation as exc:
        _emit({"error": "AttributionViolation", "round": exc.round, "agent": exc.agent, "message": str(exc)})
        return VIOLATION
    _emit({"flips": [{"round": r, "certificate": cert.to_dict()} for r, cert in flips]})
    return OK


def cmd_flood(a) -> int:
    from .network import flood, load_graph, unique_placement

    if a.placement != "unique":
        raise ValueError(f"unsupported placement {a.placement!r}")
    if a.horizon < 0:
        raise ValueError("horizon must be nonnegative")
    g = load_graph(a.graph)
    res = flood(g, unique_placement(g.n), a.horizon)
    out = open(a.out, "w", encoding="utf-8", newline="") if a.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["agent", "round", "token_count"])
        for t, know in enumerate(res.knowledge):
            for i, k in enumerate(know):
                w.writerow([i, t, len(k)])
    finally:
        if a.out:
            out.close()
    return OK


def cmd_check(a) -> int:
    from .cddl import abstract_run, accountability_formula, check_invariant, parse_sexpr, social_stability_formula

    log = AuditLog.load(a.log)
    events = load_events(a.events)
    c = load_contract(a.contract)
    if a.formula == "builtin:social-stability":
        f = social_stability_formula(c)
    elif a.formula == "builtin:accountability":
        f = accountability_formula(c)
    else:
        with open(a.formula, encoding="utf-8") as fh:
            f = parse_sexpr(fh.read())
    k = abstract_run(log, events, c, _validity(a.validity), initial=_belief(a.initial))
    cex = check_invariant(k, f)
    if cex is None:
        _emit({"ok": True, "states": len(k.states)})
        return OK
    _emit({"ok": False, "counterexample": cex.to_dict()})
    return VIOLATION


def cmd_demo(a) -> int:
    c = running_example_contract(0.1)
    cfg = ValidityConfig()
    tau = issue_token(cfg.secret_key, "tau*", schema="VerifierJudgment", issued_at=1,
                      support_labels={"True": "contradicts"})
    events = [
        make_event("agent", 0, ("peer", (), "Everyone agrees it is False.")),
        make_event("agent", 1, ("peer", (tau,), "Here is the fact-check.")),
    ]
    what = ["social-only persuasion", "validated evidence arrives"]
    log = AuditLog()
    router = Router(c, RouterConfig(), cfg, agent="agent", log=log)
    b0 = b = Belief((0.6, 0.4))
    print("hypotheses (True, False); priorities phi1 (verified falsifier) > phi2 (verified support); fallback Dilute(0.1)")
    print(f"initial belief ({b[0]:.4f}, {b[1]:.4f})  argmax={c.hypotheses[argmax(b)]}")
    for e, desc in zip(events, what):
        step = router.step(b, e)
        b = step.belief
        valid = "{" + ", ".join(t.id for t in tokens_valid(e, cfg)) + "}"
        print(f"t={e.round}  {desc:<28} T(E)={valid:<8} cert={step.certificate}  "
              f"b=({b[0]:.4f}, {b[1]:.4f})  argmax={c.hypotheses[argmax(b)]}")
    for r, cert in attribute_flip(log, b0):
        print(f"argmax change at t={r} attributed to {cert}")
    if a.log_out:
        log.save(a.log_out)
    if a.events_out:
        save_events(a.events_out, events)
    if a.contract_out:
        save_contract(c, a.contract_out)
    return OK


# -- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pbrc", description="Evidence-gated belief revision lab.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a simulation and write CSV outputs")
    s.add_argument("--sim", choices=["I", "Ib", "II", "III", "IV", "V", "VI"], help="simulation id")
    s.add_argument("--config", help="JSON file of SimConfig fields")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="master seed (default: PBRC_SEED or the config's seed)")
    s.add_argument("--trials", type=int, help="override the trial count")
    s.add_argument("--jobs", type=int, help="worker processes")
    s.add_argument("--audit", action="store_true", help="audit and model-check every enforced run")
    s.add_argument("--export-run", help="directory for one agent's baseline and enforced logs (Simulation I)")
    s.add_argument("--export-topology", default="complete", help="topology for --export-run")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("audit-verify", help="check an audit log's hash chain")
    s.add_argument("log")
    s.set_defaults(fn=cmd_audit_verify)

    s = sub.add_parser("audit-localize", help="classify the first step that loses correctness")
    s.add_argument("--log", required=True)
    s.add_argument("--events", required=True)
    s.add_argument("--contract", required=True)
    s.add_argument("--truth", required=True, help="true hypothesis (index or label)")
    s.add_argument("--delta", default="inf", help="freshness window used for judging")
    s.add_argument("--initial", help="initial belief as comma-separated weights")
    s.add_argument("--validity", help="JSON validity configuration")
    s.set_defaults(fn=cmd_audit_localize)

    s = sub.add_parser("audit-attribute", help="attribute every argmax change to its certificate")
    s.add_argument("--log", required=True)
    s.add_argument("--initial", help="initial belief as comma-separated weights")
    s.set_defaults(fn=cmd_audit_attribute)

    s = sub.add_parser("flood", help="flood unique tokens over a graph and emit per-round counts")
    s.add_argument("--graph", required=True, help="edge list file, one 'u v' per line")
    s.add_argument("--placement", default="unique", choices=["unique"])
    s.add_argument("--horizon", type=int, required=True)
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(fn=cmd_flood)

    s = sub.add_parser("check", help="model-check a formula on an abstracted audit log")
    s.add_argument("--log", required=True)
    s.add_argument("--events", required=True)
    s.add_argument("--contract", required=True)
    s.add_argument("--formula", required=True, help="s-expression file or builtin:social-stability|builtin:accountability")
    s.add_argument("--initial", help="initial belief as comma-separated weights")
    s.add_argument("--validity", help="JSON validity configuration")
    s.set_defaults(fn=cmd_check)

    s = sub.add_parser("demo-running-example", help="print the two-round running example trace")
    s.add_argument("--log-out", help="write the audit log here")
    s.add_argument("--events-out", help="write the events here")
    s.add_argument("--contract-out", help="write the contract here")
    s.set_defaults(fn=cmd_demo)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"pbrc {args.command}: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Report rendering: JSON documents, flat CSV rows and aligned text tables.

JSON keys ending in ``_ms`` carry wall times; everything else in a report is
deterministic for a given configuration.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict
from typing import Any, Iterable, Sequence

from .audit import EXPECTED_VERDICTS, AuditConfig, PropertyVerdict, phase2_passes, verdict_code
from .sim import ConvergenceReport, PartitionReport, ScaleRow, SimConfig, SweepRow

PROPS = ("commutativity", "associativity", "idempotency", "convergence")


def _pf(x) -> str:
    if x is None:
        return "-"
    return "P" if x else "F"


def spec_dict(spec) -> dict:
    return {"id": spec.id, "params": spec.params.to_dict()}


def audit_config_dict(cfg: AuditConfig) -> dict:
    return {
        "shape": list(cfg.shape),
        "seed": cfg.seed,
        "atol": cfg.atol,
        "trials": cfg.trials,
        "repetitions": cfg.repetitions,
        "strategies": [spec_dict(s) for s in cfg.specs()],
    }


def sim_config_dict(cfg: SimConfig) -> dict:
    return {
        "nodes": cfg.nodes,
        "shape": list(cfg.shape),
        "strategy": spec_dict(cfg.strategy),
        "orderings": cfg.orderings,
        "seed": cfg.seed,
        "partitions": cfg.partitions,
        "ladder": list(cfg.ladder),
        "wire": cfg.wire,
    }


# -- report documents ----------------------------------------------------------

def audit_report(phase: str, cfg: AuditConfig, verdicts: Sequence[PropertyVerdict]) -> dict:
    props = PROPS if phase == "phase2" else PROPS[:3]
    totals = {p: f"{sum(bool(getattr(v, p)) for v in verdicts)}/{len(verdicts)}" for p in props}
    doc: dict[str, Any] = {
        "command": phase,
        "config": audit_config_dict(cfg),
        "verdicts": [v.to_dict() for v in verdicts],
        "totals": totals,
        "crdt_compliant": f"{sum(v.crdt for v in verdicts)}/{len(verdicts)}",
    }
    if phase == "phase2":
        passed, total = phase2_passes(verdicts)
        doc["checks_passed"] = passed
        doc["checks_total"] = total
    else:
        doc["reference_rows"] = {v.strategy: EXPECTED_VERDICTS[v.strategy] for v in verdicts if v.strategy in EXPECTED_VERDICTS}
        doc["reference_match"] = all(
            verdict_code(v) == EXPECTED_VERDICTS[v.strategy] for v in verdicts if v.strategy in EXPECTED_VERDICTS
        )
    return doc


def convergence_report(cfg: SimConfig, reports: Sequence[ConvergenceReport]) -> dict:
    n = len(reports)
    return {
        "command": "converge",
        "config": sim_config_dict(cfg),
        "orderings": [dict(asdict(r), status=r.status) for r in reports],
        "avg_gossip_ms": sum(r.gossip_ms for r in reports) / n if n else 0.0,
        "avg_resolve_ms": sum(r.resolve_ms for r in reports) / n if n else 0.0,
        "all_bitwise_equal": all(r.bitwise_equal for r in reports),
        "distinct_final_roots": len({r.final_root for r in reports}),
        "payload_reads_in_merge": sum(r.payload_reads for r in reports),
    }


def partition_report(cfg: SimConfig, rep: PartitionReport) -> dict:
    return {
        "command": "partition",
        "config": sim_config_dict(cfg),
        **asdict(rep),
        "matches_unpartitioned": rep.matches_unpartitioned,
        "passed": rep.passed,
    }


def sweep_report(cfg: SimConfig, rows: Sequence[SweepRow]) -> dict:
    return {
        "command": "sweep",
        "config": sim_config_dict(cfg),
        "strategies": [dict(asdict(r), status=r.status) for r in rows],
        "passed": sum(r.single_hash for r in rows),
        "total": len(rows),
    }


def scalability_report(cfg: SimConfig, rows: Sequence[ScaleRow]) -> dict:
    return {
        "command": "bench",
        "config": sim_config_dict(cfg),
        "rows": [dict(asdict(r), status=r.status) for r in rows],
        "all_converged": all(r.converged for r in rows),
        "payload_reads_in_merge": sum(r.payload_reads for r in rows),
    }


# -- flattening ----------------------------------------------------------------

def csv_rows(doc: dict) -> tuple[list[str], list[list]]:
    cmd = doc["command"]
    if cmd in ("phase1", "phase2"):
        header = ["strategy", "property", "verdict", "max_violation", "trials", "atol"]
        rows = []
        for v in doc["verdicts"]:
            for p in PROPS:
                if v[p] is None:
                    continue
                rows.append([v["strategy"], p, _pf(v[p]), v["violations"][p], v["trials"], v["atol"]])
        return header, rows
    if cmd == "converge":
        header = ["ordering", "merges", "gossip_ms", "resolve_ms", "max_diff", "status", "final_root"]
        return header, [[o[k] for k in header] for o in doc["orderings"]]
    if cmd == "sweep":
        header = ["strategy", "gossip_ms", "resolve_ms", "status", "final_root"]
        return header, [[r[k] for k in header] for r in doc["strategies"]]
    if cmd == "bench":
        header = ["nodes", "params", "merges", "gossip_ms", "resolve_ms", "payload_reads", "status"]
        return header, [[r[k] for k in header] for r in doc["rows"]]
    if cmd == "partition":
        skip = {"command", "config", "partition_roots"}
        return ["metric", "value"], [[k, v] for k, v in doc.items() if k not in skip]
    raise ValueError(f"no CSV layout for {cmd!r}")


def render_csv(doc: dict) -> str:
    header, rows = csv_rows(doc)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def render_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def aligned(header: Sequence[str], rows: Iterable[Sequence], right: Sequence[bool] | None = None) -> str:
    rows = [[str(c) for c in r] for r in rows]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]
    right = right or [False] * len(header)

    def fmt(cells):
        return "  ".join(c.rjust(w) if r else c.ljust(w) for c, w, r in zip(cells, widths, right)).rstrip()

    rule = "-" * len(fmt(header))
    return "\n".join([fmt(header), rule, *(fmt(r) for r in rows)])


def render_table(doc: dict) -> str:
    cmd = doc["command"]
    if cmd == "phase1":
        body = aligned(
            ["Strategy", "Commut.", "Assoc.", "Idemp.", "CRDT?", "Stable"],
            [
                [v["strategy"], _pf(v["commutativity"]), _pf(v["associativity"]), _pf(v["idempotency"]),
                 _pf(v["crdt"]), _pf(v["stable"])]
                for v in doc["verdicts"]
            ],
        )
        t = doc["totals"]
        foot = f"Totals  C {t['commutativity']}  A {t['associativity']}  I {t['idempotency']}  CRDT {doc['crdt_compliant']}"
        return f"{body}\n{foot}\n"
    if cmd == "phase2":
        body = aligned(
            ["Strategy", "Commut.", "Assoc.", "Idemp.", "Conv.", "CRDT?"],
            [
                [v["strategy"], _pf(v["commutativity"]), _pf(v["associativity"]), _pf(v["idempotency"]),
                 _pf(v["convergence"]), "yes" if v["crdt"] else "no"]
                for v in doc["verdicts"]
            ],
        )
        return f"{body}\nChecks passed: {doc['checks_passed']}/{doc['checks_total']}\n"
    if cmd == "converge":
        body = aligned(
            ["Ordering", "Gossip", "Resolve", "Max Diff", "Status"],
            [[o["ordering"], f"{o['gossip_ms']:.1f} ms", f"{o['resolve_ms']:.1f} ms", f"{o['max_diff']:g}", o["status"]]
             for o in doc["orderings"]],
            right=[True, True, True, True, False],
        )
        yes = "YES" if doc["all_bitwise_equal"] else "NO"
        return f"{body}\nAvg gossip: {doc['avg_gossip_ms']:.1f} ms   All orderings bitwise equal: {yes}\n"
    if cmd == "partition":
        yn = lambda b: "YES" if b else "NO"  # noqa: E731
        rows = [
            ["Nodes / Partitions", f"{doc['nodes']} / {doc['partitions']}"],
            ["Partition gossip time", f"{doc['partition_gossip_ms']:.1f} ms"],
            ["Distinct partition hashes", f"{doc['distinct_partition_roots']}/{doc['partitions']}"],
            ["Partition isolation held", yn(doc["isolation_held"])],
            ["Healing time", f"{doc['healing_ms']:.1f} ms"],
            ["Post-healing convergence", f"{doc['converged_nodes']}/{doc['nodes']} nodes"],
            ["Bitwise identical", yn(doc["bitwise_equal"])],
            ["Final hash matches unpartitioned run", yn(doc["matches_unpartitioned"])],
        ]
        return aligned(["Metric", "Value"], rows, right=[False, True]) + "\n"
    if cmd == "sweep":
        body = aligned(
            ["Strategy", "Gossip", "Resolve", "Status"],
            [[r["strategy"], f"{r['gossip_ms']:.1f} ms", f"{r['resolve_ms']:.1f} ms", r["status"]] for r in doc["strategies"]],
            right=[False, True, True, False],
        )
        return f"{body}\n{doc['passed']}/{doc['total']} strategies converged to a single hash\n"
    if cmd == "bench":
        body = aligned(
            ["Nodes", "Params", "Merges", "Gossip", "Resolve", "Status"],
            [[r["nodes"], f"{r['params']:,}", f"{r['merges']:,}", f"{r['gossip_ms']:.1f} ms", f"{r['resolve_ms']:.1f} ms", r["status"]]
             for r in doc["rows"]],
            right=[True, True, True, True, True, False],
        )
        return f"{body}\nPayload reads inside merge: {doc['payload_reads_in_merge']}\n"
    raise ValueError(f"no table layout for {cmd!r}")


def render(doc: dict, fmt: str) -> str:
    if fmt == "json":
        return render_json(doc)
    if fmt == "csv":
        return render_csv(doc)
    if fmt == "table":
        return render_table(doc)
    raise ValueError(f"unknown format {fmt!r}")


def strip_timings(doc):
    """Copy of ``doc`` without wall-time fields, for determinism comparisons."""
    if isinstance(doc, dict):
        return {k: strip_timings(v) for k, v in doc.items() if not k.endswith("_ms")}
    if isinstance(doc, list):
        return [strip_timings(v) for v in doc]
    return doc

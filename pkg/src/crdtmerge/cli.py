"""Command-line entry point.

Exit codes: 0 success / all checks pass, 1 a finding failed (Phase 2 or
convergence), 2 usage error, 3 data or file-format error, 4 unknown strategy.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import figures, reporting
from .audit import AuditConfig, run_phase1, run_phase2
from .hashing import Hash256
from .sim import DEFAULT_LADDER, DEFAULT_SIM_SEED, SimConfig, SimError, run_convergence, run_partition_healing, run_scalability, run_strategy_sweep
from .state import MergeState, StateError, resolve, state_deserialize, state_serialize
from .strategies import BUILTIN_STRATEGIES, InvalidParamsError, StrategyParams, StrategySpec, UnknownStrategyError, get_strategy, strategy_ids
from .tensor import Tensor, TensorError

log = logging.getLogger("crdtmerge")

EXIT_OK, EXIT_FINDING, EXIT_USAGE, EXIT_DATA, EXIT_STRATEGY = 0, 1, 2, 3, 4
AUDIT_SEED = 42
SEED_ENV = "CRDT_MERGE_SEED"


class UsageError(Exception):
    pass


def parse_shape(text: str) -> tuple[int, ...]:
    """``"4x4"`` or ``"2,3,5"``."""
    sep = "x" if "x" in text.lower() else ","
    try:
        dims = tuple(int(p) for p in text.lower().split(sep))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}") from None
    if not dims or any(d <= 0 for d in dims):
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return dims


def parse_ladder(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ladder {text!r}") from None


def default_seed(fallback: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return fallback
    try:
        return int(env, 0)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--output", "-o", type=Path, help="write the report here instead of stdout")
    p.add_argument("--plot-dir", type=Path, help="also render PNG figures into this directory")


def _param_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("strategy parameters")
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--t", type=float)
    g.add_argument("--drop-p", type=float)
    g.add_argument("--keep-frac", type=float)
    g.add_argument("--linear-w", type=float)
    g.add_argument("--outlier-frac", type=float)
    g.add_argument("--pop-size", type=int)
    g.add_argument("--generations", type=int)


def _params(args) -> StrategyParams:
    names = ("lam", "t", "drop_p", "keep_frac", "linear_w", "outlier_frac", "pop_size", "generations")
    kw = {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}
    params = replace(StrategyParams(), **kw)
    params.validate()
    return params


def _spec(name: str, params: StrategyParams) -> StrategySpec:
    get_strategy(name)
    return StrategySpec(name, params)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crdtmerge", description="Conflict-free model merging: audits, gossip simulation, state files.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    for phase in ("phase1", "phase2"):
        p = sub.add_parser(phase, parents=[common], help=f"{'raw-operation' if phase == 'phase1' else 'state-level'} property audit")
        p.add_argument("--seed", type=int)
        p.add_argument("--atol", type=float, default=1e-5)
        p.add_argument("--shape", type=parse_shape, default=(4, 4))
        p.add_argument("--trials", type=int, default=20)
        p.add_argument("--repetitions", type=int, default=5, help="reruns for stochastic kernels (phase1)")
        p.add_argument("--strategy", action="append", help="repeatable; default is every built-in strategy")
        _param_args(p)
        _output_args(p)

    p = sub.add_parser("converge", parents=[common], help="random-ordering convergence")
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--shape", type=parse_shape, default=(64, 64))
    p.add_argument("--orderings", type=int, default=20)
    p.add_argument("--strategy", default="slerp")
    p.add_argument("--full-scale", action="store_true", help="100 nodes, 512x512, in-memory transfer")

    p2 = sub.add_parser("partition", parents=[common], help="partition then heal")
    p2.add_argument("--nodes", type=int, default=20)
    p2.add_argument("--partitions", type=int, default=4)
    p2.add_argument("--shape", type=parse_shape, default=(64, 64))
    p2.add_argument("--strategy", default="slerp")
    p2.add_argument("--full-scale", action="store_true", help="100 nodes / 10 partitions, 512x512, in-memory transfer")

    p3 = sub.add_parser("sweep", parents=[common], help="convergence of every strategy")
    p3.add_argument("--nodes", type=int, default=10)
    p3.add_argument("--shape", type=parse_shape, default=(64, 64))
    p3.add_argument("--strategy", action="append")

    p4 = sub.add_parser("bench", parents=[common], help="scalability ladder")
    p4.add_argument("--ladder", type=parse_ladder, default=DEFAULT_LADDER)
    p4.add_argument("--shape", type=parse_shape, default=(64, 64))
    p4.add_argument("--strategy", default="slerp")

    for q in (p, p2, p3, p4):
        q.add_argument("--seed", type=int)
        q.add_argument("--no-wire", action="store_true", help="skip CMS1 round-trips between nodes")
        _param_args(q)
        _output_args(q)

    ps = sub.add_parser("state", parents=[common], help="inspect and edit CMS1 state files")
    ssub = ps.add_subparsers(dest="action", required=True)
    s = ssub.add_parser("inspect")
    s.add_argument("file", type=Path)
    s.add_argument("--format", choices=("table", "json"), default="table")
    s = ssub.add_parser("hash")
    s.add_argument("file", type=Path)
    s = ssub.add_parser("resolve")
    s.add_argument("file", type=Path)
    s.add_argument("--strategy", default="weight_average")
    s.add_argument("--out", type=Path, required=True, help="CMT1 output file")
    _param_args(s)
    s = ssub.add_parser("add", help="add a tensor to a state file, creating it if needed")
    s.add_argument("file", type=Path)
    s.add_argument("--owner", help="node id for a new state file")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--tensor", type=Path, help="CMT1 tensor file")
    src.add_argument("--values", help="comma-separated values (use with --shape)")
    s.add_argument("--shape", type=parse_shape)
    s = ssub.add_parser("remove")
    s.add_argument("file", type=Path)
    s.add_argument("hash", help="hex digest of a visible contribution")
    s = ssub.add_parser("merge", help="merge state files into the first one")
    s.add_argument("file", type=Path)
    s.add_argument("others", type=Path, nargs="+")
    return parser


def _emit(doc: dict, args) -> None:
    text = reporting.render(doc, args.format)
    if args.output:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(text)
    else:
        sys.stdout.write(text)
    if args.plot_dir:
        for path in figures.render_figures(doc, args.plot_dir):
            log.info("wrote %s", path)


def cmd_audit(args) -> int:
    params = _params(args)
    names = args.strategy or list(BUILTIN_STRATEGIES)
    specs = [_spec(n, params) for n in names]
    try:
        cfg = AuditConfig(
            shape=args.shape, seed=args.seed if args.seed is not None else default_seed(AUDIT_SEED),
            atol=args.atol, trials=args.trials, strategies=specs, repetitions=args.repetitions,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.command == "phase1":
        _emit(reporting.audit_report("phase1", cfg, run_phase1(cfg)), args)
        return EXIT_OK
    verdicts = run_phase2(cfg)
    _emit(reporting.audit_report("phase2", cfg, verdicts), args)
    return EXIT_OK if all(v.crdt for v in verdicts) else EXIT_FINDING


def _sim_cfg(args, **kw) -> SimConfig:
    seed = args.seed if args.seed is not None else default_seed(DEFAULT_SIM_SEED)
    try:
        return SimConfig(seed=seed, wire=not args.no_wire, **kw)
    except SimError as exc:
        raise UsageError(str(exc)) from None


def cmd_converge(args) -> int:
    nodes, shape = (100, (512, 512)) if args.full_scale else (args.nodes, args.shape)
    if args.full_scale:
        args.no_wire = True
    cfg = _sim_cfg(args, nodes=nodes, shape=shape, orderings=args.orderings, strategy=_spec(args.strategy, _params(args)))
    reports = run_convergence(cfg)
    _emit(reporting.convergence_report(cfg, reports), args)
    ok = all(r.bitwise_equal for r in reports) and len({r.final_root for r in reports}) <= 1
    return EXIT_OK if ok else EXIT_FINDING


def cmd_partition(args) -> int:
    nodes, parts, shape = (100, 10, (512, 512)) if args.full_scale else (args.nodes, args.partitions, args.shape)
    if args.full_scale:
        args.no_wire = True
    cfg = _sim_cfg(args, nodes=nodes, partitions=parts, shape=shape, orderings=1, strategy=_spec(args.strategy, _params(args)))
    rep = run_partition_healing(cfg)
    _emit(reporting.partition_report(cfg, rep), args)
    return EXIT_OK if rep.passed else EXIT_FINDING


def cmd_sweep(args) -> int:
    params = _params(args)
    specs = [_spec(n, params) for n in (args.strategy or strategy_ids())]
    cfg = _sim_cfg(args, nodes=args.nodes, shape=args.shape, orderings=1, strategy=specs[0])
    rows = run_strategy_sweep(cfg, specs)
    _emit(reporting.sweep_report(cfg, rows), args)
    return EXIT_OK if all(r.single_hash for r in rows) else EXIT_FINDING


def cmd_bench(args) -> int:
    if not args.ladder or any(n < 2 for n in args.ladder):
        raise UsageError("ladder entries must be at least 2")
    cfg = _sim_cfg(args, nodes=max(args.ladder), shape=args.shape, ladder=args.ladder, strategy=_spec(args.strategy, _params(args)))
    rows = run_scalability(cfg)
    _emit(reporting.scalability_report(cfg, rows), args)
    return EXIT_OK if all(r.status == "PASS" for r in rows) else EXIT_FINDING


def _load_state(path: Path) -> MergeState:
    return state_deserialize(path.read_bytes())


def cmd_state(args) -> int:
    if args.action == "inspect":
        s = _load_state(args.file)
        info = s.debug_dict()
        if args.format == "json":
            print(reporting.render_json(info), end="")
        else:
            print(f"owner:   {info['owner']}")
            print(f"root:    {info['root']}")
            print(f"vv:      {', '.join(f'{k}={v}' for k, v in info['vv'].items()) or '-'}")
            print(f"adds:    {len(info['adds'])}   removes: {len(info['removes'])}")
            print(f"visible: {len(info['visible'])}")
            for h in info["visible"]:
                print(f"  {h}")
        return EXIT_OK
    if args.action == "hash":
        print(_load_state(args.file).root.hex())
        return EXIT_OK
    if args.action == "resolve":
        s = _load_state(args.file)
        out = resolve(s, _spec(args.strategy, _params(args)))
        args.out.write_bytes(out.canonical_bytes())
        print(out.content_hash().hex())
        return EXIT_OK
    if args.action == "add":
        if args.file.exists():
            s = _load_state(args.file)
        elif args.owner:
            s = MergeState(args.owner)
        else:
            raise UsageError("--owner is required to create a new state file")
        if args.tensor:
            t = Tensor.from_bytes(args.tensor.read_bytes())
        else:
            values = [float(v) for v in args.values.split(",")]
            t = Tensor(args.shape or (len(values),), values)
        tag = s.add(t)
        args.file.write_bytes(state_serialize(s))
        print(f"{t.content_hash().hex()} {tag}")
        return EXIT_OK
    if args.action == "remove":
        s = _load_state(args.file)
        try:
            h = Hash256.from_hex(args.hash)
        except ValueError:
            raise UsageError(f"bad hash {args.hash!r}") from None
        s.remove(h)
        args.file.write_bytes(state_serialize(s))
        return EXIT_OK
    if args.action == "merge":
        s = _load_state(args.file)
        for other in args.others:
            s.merge_in(_load_state(other))
        args.file.write_bytes(state_serialize(s))
        print(s.root.hex())
        return EXIT_OK
    raise UsageError(f"unknown state action {args.action!r}")


COMMANDS = {
    "phase1": cmd_audit,
    "phase2": cmd_audit,
    "converge": cmd_converge,
    "partition": cmd_partition,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "state": cmd_state,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UnknownStrategyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STRATEGY
    except (UsageError, InvalidParamsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StateError, TensorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

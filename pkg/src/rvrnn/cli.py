"""Command-line entry point: ``rvrnn {assemble,run,bench,sweep-activation}``."""
from __future__ import annotations

import argparse
import json
import sys

from . import activation, bench, isa, schema, sim
from .kernels import KernelError

EXIT_MISMATCH = 2
EXIT_ERROR = 1


def _load_config(path: str | None) -> sim.SimConfig:
    if not path:
        return sim.SimConfig()
    with open(path) as fh:
        return sim.SimConfig.from_dict(json.load(fh))


def _write(text: str, path: str | None):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_program(path: str) -> isa.Program:
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        doc = json.loads(text)
        schema.validate(doc, "program")
        return isa.program_from_dict(doc)
    return isa.assemble(text)


def _levels(s: str) -> list[str]:
    out = [c for c in s.replace(",", "").upper()]
    bad = [c for c in out if c not in "ABCDE"]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown level(s) {''.join(bad)}")
    return out


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v]


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v]


def cmd_assemble(args) -> int:
    with open(args.source) as fh:
        prog = isa.assemble(fh.read())
    text = isa.disassemble(prog) if args.format == "listing" else isa.dumps_program(prog)
    _write(text, args.out)
    return 0


def _parse_dump(spec: str) -> tuple[int, int]:
    addr, _, count = spec.partition(":")
    return int(addr, 0), int(count or "1", 0)


def cmd_run(args) -> int:
    prog = _load_program(args.program)
    cfg = _load_config(args.config)
    core = sim.CoreState.from_program(prog)
    trace = sys.stderr if args.trace else None
    res = sim.Simulator(prog, core, cfg, trace).run(args.max_cycles)
    if args.format == "csv":
        text = res.stats.to_csv()
    else:
        doc = {"stats": res.stats.to_dict(), "retired": core.retired,
               "registers": {isa.reg_name(i): core.gpr[i] for i in range(32) if core.gpr[i]}}
        if args.dump:
            doc["memory"] = {}
            for spec in args.dump:
                addr, n = _parse_dump(spec)
                doc["memory"][hex(addr)] = core.mem.read_halves(addr, n).tolist()
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _write(text, args.out)
    return 0


def cmd_bench(args) -> int:
    specs = bench.load_suite(args.suite) if args.suite else bench.default_suite()
    if args.only:
        keep = set(args.only.split(","))
        specs = [s for s in specs if s.name in keep]
        if not specs:
            print(f"error: no network named {args.only}", file=sys.stderr)
            return EXIT_ERROR
    try:
        rep = bench.run_suite(specs, args.levels, _load_config(args.config), tile_n=args.tile,
                              ifm_tile=args.ifm_tile, hw_act=False if args.sw_act else None,
                              jobs=args.jobs, seed=args.seed, clock_mhz=args.clock_mhz)
    except bench.FunctionalMismatch as e:
        print(f"functional mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    _write(bench.emit_report(rep, args.format), args.out)
    return 0


def cmd_sweep(args) -> int:
    points = []
    for func in args.func.split(","):
        points += activation.error_sweep(func, args.ranges, args.m)
    _write(activation.sweep_to_csv(points), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rvrnn", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    a = sub.add_parser("assemble", help="assemble a source file to program JSON")
    a.add_argument("source")
    a.add_argument("--format", choices=("json", "listing"), default="json")
    a.add_argument("--out", "-o")
    a.set_defaults(handler=cmd_assemble)

    r = sub.add_parser("run", help="simulate a program (.s or program JSON)")
    r.add_argument("program")
    r.add_argument("--config", help="SimConfig JSON file")
    r.add_argument("--max-cycles", type=int, default=10 ** 9)
    r.add_argument("--trace", action="store_true", help="per-instruction trace on stderr")
    r.add_argument("--dump", action="append", metavar="ADDR[:COUNT]",
                   help="include COUNT int16 values from ADDR in the output")
    r.add_argument("--format", choices=("json", "csv"), default="json")
    r.add_argument("--out", "-o")
    r.set_defaults(handler=cmd_run)

    b = sub.add_parser("bench", help="run the network suite at several optimization levels")
    b.add_argument("--suite", help="network suite JSON (default: built-in suite)")
    b.add_argument("--only", help="comma-separated network names to keep")
    b.add_argument("--levels", type=_levels, default=list("ABCDE"))
    b.add_argument("--tile", type=int, default=bench.SUITE_TILE)
    b.add_argument("--ifm-tile", type=int, default=2)
    b.add_argument("--seed", type=int, help="override per-network seeds with SEED + index")
    b.add_argument("--sw-act", action="store_true", help="software activations at every level")
    b.add_argument("--config", help="SimConfig JSON file")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--clock-mhz", type=float, help="report MMAC/s at this clock")
    b.add_argument("--format", choices=bench.REPORT_FORMATS, default="markdown")
    b.add_argument("--out", "-o")
    b.set_defaults(handler=cmd_bench)

    s = sub.add_parser("sweep-activation", help="PLA error versus range and interval count (CSV)")
    s.add_argument("--func", default="tanh,sig")
    s.add_argument("--ranges", type=_floats, default=[2.0, 4.0, 8.0])
    s.add_argument("--m", type=_ints, default=[4, 8, 16, 32, 64, 128, 256])
    s.add_argument("--out", "-o")
    s.set_defaults(handler=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (isa.AssemblerError, sim.SimError, KernelError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

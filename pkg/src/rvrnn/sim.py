"""Functional and cycle-approximate execution of :class:`~rvrnn.isa.Program`.

Timing model: one cycle per retired instruction plus

* ``load_use_stall`` when an instruction reads the GPR written by the load
  retired immediately before it (charged to the load),
* ``branch_taken_penalty`` for taken branches and jumps (charged to the jump),
* a stall until ready when ``pl.sdotsp.h.k`` reads SPR ``k`` earlier than
  ``mem_latency`` cycles after the load that filled it.

Hardware-loop back-edges are free. Memory always grants.
Timing never feeds back into the data path, so the final architectural
state is independent of :class:`SimConfig`.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import activation, fixp, isa

PAGE_BITS = 16
PAGE_SIZE = 1 << PAGE_BITS
PAGE_MASK = PAGE_SIZE - 1

_ld32 = struct.Struct("<i").unpack_from
_ld16 = struct.Struct("<h").unpack_from
_ld8 = struct.Struct("<b").unpack_from
_st32 = struct.Struct("<I").pack_into
_st16 = struct.Struct("<H").pack_into


class SimError(Exception):
    pass


class Trap(SimError):
    def __init__(self, pc: int, msg: str):
        super().__init__(f"trap at pc {pc}: {msg}")
        self.pc = pc


class CycleBudgetExceeded(SimError):
    pass


@dataclass
class SimConfig:
    load_use_stall: int = 1
    branch_taken_penalty: int = 1
    mem_latency: int = 2
    trace: bool = False

    def __post_init__(self):
        for k in ("load_use_stall", "branch_taken_penalty", "mem_latency"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        unknown = set(d) - {"load_use_stall", "branch_taken_penalty", "mem_latency", "trace"}
        if unknown:
            raise ValueError(f"unknown SimConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class Memory:
    """Sparse byte-addressed little-endian memory in 64 KiB pages."""

    def __init__(self):
        self.pages: dict[int, bytearray] = {}

    def _page(self, addr: int) -> bytearray:
        p = self.pages.get(addr >> PAGE_BITS)
        if p is None:
            p = self.pages[addr >> PAGE_BITS] = bytearray(PAGE_SIZE)
        return p

    def write(self, addr: int, blob: bytes):
        addr &= 0xFFFFFFFF
        i = 0
        while i < len(blob):
            off = (addr + i) & PAGE_MASK
            n = min(PAGE_SIZE - off, len(blob) - i)
            self._page(addr + i)[off:off + n] = blob[i:i + n]
            i += n

    def read(self, addr: int, size: int) -> bytes:
        out = bytearray()
        addr &= 0xFFFFFFFF
        while len(out) < size:
            a = addr + len(out)
            off = a & PAGE_MASK
            n = min(PAGE_SIZE - off, size - len(out))
            p = self.pages.get(a >> PAGE_BITS)
            out += p[off:off + n] if p is not None else bytes(n)
        return bytes(out)

    def write_halves(self, addr: int, values):
        self.write(addr, np.asarray(values, dtype=np.int64).astype("<i2").tobytes())

    def read_halves(self, addr: int, n: int) -> np.ndarray:
        return np.frombuffer(self.read(addr, 2 * n), dtype="<i2").astype(np.int64)

    def write_words(self, addr: int, values):
        self.write(addr, np.asarray(values, dtype=np.int64).astype("<i4").tobytes())

    def read_words(self, addr: int, n: int) -> np.ndarray:
        return np.frombuffer(self.read(addr, 4 * n), dtype="<i4").astype(np.int64)

    def image(self) -> dict[int, bytes]:
        """Non-zero pages, for comparing final memory states."""
        return {k: bytes(v) for k, v in sorted(self.pages.items()) if any(v)}

    def copy(self) -> "Memory":
        m = Memory()
        m.pages = {k: bytearray(v) for k, v in self.pages.items()}
        return m


@dataclass
class HwLoop:
    start: int = 0
    end: int = 0  # index of the last body instruction
    count: int = 0


@dataclass
class CoreState:
    pc: int = 0
    gpr: list = field(default_factory=lambda: [0] * 32)
    spr: list = field(default_factory=lambda: [0, 0])
    hwloop: list = field(default_factory=lambda: [HwLoop(), HwLoop()])
    mem: Memory = field(default_factory=Memory)
    cycle: int = 0
    retired: int = 0
    spr_ready: list = field(default_factory=lambda: [0, 0])
    last_load: int = -1  # GPR written by the previously retired load, if any
    last_pc: int = -1
    halted: bool = False

    @property
    def pending_load(self) -> dict | None:
        """The in-flight SPR load with the latest ready cycle, if still pending."""
        k = max((0, 1), key=lambda i: self.spr_ready[i])
        if self.spr_ready[k] <= self.cycle:
            return None
        return {"target": f"spr{k}", "value": self.spr[k], "ready_cycle": self.spr_ready[k]}

    @classmethod
    def from_program(cls, program: isa.Program) -> "CoreState":
        st = cls(pc=program.entry)
        for addr, blob in program.data.items():
            st.mem.write(addr, blob)
        return st

    def copy(self) -> "CoreState":
        return CoreState(self.pc, list(self.gpr), list(self.spr),
                         [HwLoop(h.start, h.end, h.count) for h in self.hwloop],
                         self.mem.copy(), self.cycle, self.retired, list(self.spr_ready),
                         self.last_load, self.last_pc, self.halted)


STALL_KINDS = ("load_use", "branch_taken", "spr")


@dataclass
class CycleStats:
    instrs: dict = field(default_factory=dict)
    cycles: dict = field(default_factory=dict)
    stalls: dict = field(default_factory=lambda: dict.fromkeys(STALL_KINDS, 0))

    @property
    def total_instrs(self) -> int:
        return sum(self.instrs.values())

    @property
    def total_cycles(self) -> int:
        return sum(self.cycles.values())

    @property
    def total_stalls(self) -> int:
        return sum(self.stalls.values())

    def __add__(self, other: "CycleStats") -> "CycleStats":
        out = CycleStats(dict(self.instrs), dict(self.cycles), dict(self.stalls))
        for k, v in other.instrs.items():
            out.instrs[k] = out.instrs.get(k, 0) + v
        for k, v in other.cycles.items():
            out.cycles[k] = out.cycles.get(k, 0) + v
        for k, v in other.stalls.items():
            out.stalls[k] = out.stalls.get(k, 0) + v
        return out

    def to_dict(self) -> dict:
        return {
            "instrs": dict(sorted(self.instrs.items())),
            "cycles": dict(sorted(self.cycles.items())),
            "stalls": dict(self.stalls),
            "total_instrs": self.total_instrs,
            "total_cycles": self.total_cycles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CycleStats":
        return cls(dict(d["instrs"]), dict(d["cycles"]), dict(d["stalls"]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mnemonic", "instrs", "cycles"])
        for k in sorted(self.instrs):
            w.writerow([k, self.instrs[k], self.cycles[k]])
        w.writerow(["total", self.total_instrs, self.total_cycles])
        return buf.getvalue()


@dataclass
class StepResult:
    cycles: int
    events: list


@dataclass
class RunResult:
    state: CoreState
    stats: CycleStats


# -- instruction compilation ---------------------------------------------------

HALT = -1
LOOP_SETUP = -2

_TANH_LUT = None
_SIG_LUT = None


def _activation_luts():
    global _TANH_LUT, _SIG_LUT
    if _TANH_LUT is None:
        idx = np.arange(1 << 16, dtype=np.int64)
        _TANH_LUT = activation.pla_eval_array(activation.default_table("tanh"), idx).tolist()
        _SIG_LUT = activation.pla_eval_array(activation.default_table("sig"), idx).tolist()
    return _TANH_LUT, _SIG_LUT


class _Ctx:
    """Mutable state captured by compiled instruction closures."""

    def __init__(self, state: CoreState):
        self.x = state.gpr
        self.pages = state.mem.pages
        self.spr = state.spr
        self.setup = [0, 0, 0, 0]  # loop, start, end, count of a pending lp.setup


def _unaligned(pc, addr, width):
    raise Trap(pc, f"unaligned {width}-byte access at {addr:#010x}")


def _mk_alu(pc, ins, ctx):
    x = ctx.x
    rd, a, b, imm = ins.rd, ins.rs1, ins.rs2, ins.imm
    op = ins.op
    W = 0x80000000
    M = 0xFFFFFFFF
    if op == "add":
        def f():
            x[rd] = ((x[a] + x[b] + W) & M) - W
    elif op == "sub":
        def f():
            x[rd] = ((x[a] - x[b] + W) & M) - W
    elif op == "and":
        def f():
            x[rd] = x[a] & x[b]
    elif op == "or":
        def f():
            x[rd] = x[a] | x[b]
    elif op == "xor":
        def f():
            x[rd] = x[a] ^ x[b]
    elif op == "sll":
        def f():
            x[rd] = ((x[a] << (x[b] & 31)) + W & M) - W
    elif op == "srl":
        def f():
            x[rd] = (((x[a] & M) >> (x[b] & 31)) + W & M) - W
    elif op == "sra":
        def f():
            x[rd] = x[a] >> (x[b] & 31)
    elif op == "slt":
        def f():
            x[rd] = 1 if x[a] < x[b] else 0
    elif op == "sltu":
        def f():
            x[rd] = 1 if (x[a] & M) < (x[b] & M) else 0
    elif op == "mul":
        def f():
            x[rd] = ((x[a] * x[b] + W) & M) - W
    elif op == "mac":
        def f():
            x[rd] = ((x[rd] + x[a] * x[b] + W) & M) - W
    elif op == "addi":
        def f():
            x[rd] = ((x[a] + imm + W) & M) - W
    elif op == "andi":
        def f():
            x[rd] = x[a] & imm
    elif op == "ori":
        def f():
            x[rd] = ((x[a] | imm) + W & M) - W
    elif op == "xori":
        def f():
            x[rd] = ((x[a] ^ imm) + W & M) - W
    elif op == "slti":
        def f():
            x[rd] = 1 if x[a] < imm else 0
    elif op == "sltiu":
        def f():
            x[rd] = 1 if (x[a] & M) < (imm & M) else 0
    elif op == "slli":
        def f():
            x[rd] = ((x[a] << imm) + W & M) - W
    elif op == "srli":
        def f():
            x[rd] = (((x[a] & M) >> imm) + W & M) - W
    elif op == "srai":
        def f():
            x[rd] = x[a] >> imm
    elif op == "lui":
        v = fixp.s32(imm << 12)

        def f():
            x[rd] = v
    elif op == "p.clip":
        lo, hi = -(1 << (imm - 1)), (1 << (imm - 1)) - 1

        def f():
            v = x[a]
            x[rd] = lo if v < lo else hi if v > hi else v
    else:  # pragma: no cover - guarded by registry check
        raise AssertionError(op)
    return f


def _halves(v):
    return ((v & 0xFFFF) ^ 0x8000) - 0x8000, (((v >> 16) & 0xFFFF) ^ 0x8000) - 0x8000


def _mk_simd(pc, ins, ctx):
    x = ctx.x
    rd, a, b = ins.rd, ins.rs1, ins.rs2
    W, M = 0x80000000, 0xFFFFFFFF
    if ins.op == "pv.sdotsp.h":
        def f():
            u, v = x[a], x[b]
            x[rd] = ((x[rd]
                      + (((u & 0xFFFF) ^ 0x8000) - 0x8000) * (((v & 0xFFFF) ^ 0x8000) - 0x8000)
                      + ((((u >> 16) & 0xFFFF) ^ 0x8000) - 0x8000) * ((((v >> 16) & 0xFFFF) ^ 0x8000) - 0x8000)
                      + W) & M) - W
    elif ins.op == "pv.add.h":
        def f():
            a0, a1 = _halves(x[a])
            b0, b1 = _halves(x[b])
            x[rd] = fixp.s32(fixp.pack(a0 + b0, a1 + b1))
    else:  # pv.mul.h: lane-wise low 16 bits of the product
        def f():
            a0, a1 = _halves(x[a])
            b0, b1 = _halves(x[b])
            x[rd] = fixp.s32(fixp.pack(a0 * b0, a1 * b1))
    return f


def _mk_load(pc, ins, ctx):
    x, pages = ctx.x, ctx.pages
    rd, a, imm = ins.rd, ins.rs1, ins.imm
    width = isa.ACCESS_WIDTH[ins.op]
    unpack = {4: _ld32, 2: _ld16, 1: _ld8}[width]
    amask = width - 1
    W, M = 0x80000000, 0xFFFFFFFF
    if ins.postinc:
        def f():
            base = x[a]
            addr = (base + imm) & M
            if addr & amask:
                _unaligned(pc, addr, width)
            p = pages.get(addr >> PAGE_BITS)
            x[a] = ((base + width + W) & M) - W
            x[rd] = unpack(p, addr & PAGE_MASK)[0] if p is not None else 0
    else:
        def f():
            addr = (x[a] + imm) & M
            if addr & amask:
                _unaligned(pc, addr, width)
            p = pages.get(addr >> PAGE_BITS)
            x[rd] = unpack(p, addr & PAGE_MASK)[0] if p is not None else 0
    return f


def _mk_store(pc, ins, ctx):
    x, pages = ctx.x, ctx.pages
    a, b, imm = ins.rs1, ins.rs2, ins.imm
    width = isa.ACCESS_WIDTH[ins.op]
    pack, vmask = (_st32, 0xFFFFFFFF) if width == 4 else (_st16, 0xFFFF)
    amask = width - 1
    W, M = 0x80000000, 0xFFFFFFFF
    post = width if ins.postinc else 0

    def f():
        base = x[a]
        addr = (base + imm) & M
        if addr & amask:
            _unaligned(pc, addr, width)
        p = pages.get(addr >> PAGE_BITS)
        if p is None:
            p = pages[addr >> PAGE_BITS] = bytearray(PAGE_SIZE)
        pack(p, addr & PAGE_MASK, x[b] & vmask)
        if post:
            x[a] = ((base + post + W) & M) - W
    return f


def _mk_branch(pc, ins, ctx):
    x = ctx.x
    a, b = ins.rs1, ins.rs2
    t = pc + ins.imm // 4
    M = 0xFFFFFFFF
    op = ins.op
    if op == "beq":
        def f():
            if x[a] == x[b]:
                return t
    elif op == "bne":
        def f():
            if x[a] != x[b]:
                return t
    elif op == "blt":
        def f():
            if x[a] < x[b]:
                return t
    elif op == "bge":
        def f():
            if x[a] >= x[b]:
                return t
    elif op == "bltu":
        def f():
            if (x[a] & M) < (x[b] & M):
                return t
    else:
        def f():
            if (x[a] & M) >= (x[b] & M):
                return t
    return f


def _mk_jump(pc, ins, ctx):
    x = ctx.x
    rd = ins.rd
    link = (pc + 1) * 4
    if ins.op == "jal":
        t = pc + ins.imm // 4

        def f():
            x[rd] = link
            return t
    else:
        a, imm = ins.rs1, ins.imm

        def f():
            dest = (x[a] + imm) & ~1 & 0xFFFFFFFF
            if dest & 3:
                raise Trap(pc, f"misaligned jump target {dest:#x}")
            x[rd] = link
            return dest >> 2
    return f


def _mk_loop(pc, ins, ctx):
    x, setup = ctx.x, ctx.setup
    loop = ins.rd
    start, end = pc + 1, pc + ins.imm // 4 - 1
    if ins.op == "lp.setupi":
        count = ins.rs2

        def f():
            setup[0], setup[1], setup[2], setup[3] = loop, start, end, count
            return LOOP_SETUP
    else:
        a = ins.rs1

        def f():
            setup[0], setup[1], setup[2], setup[3] = loop, start, end, x[a]
            return LOOP_SETUP
    return f


def _mk_act(pc, ins, ctx):
    x = ctx.x
    rd, a = ins.rd, ins.rs1
    tanh_lut, sig_lut = _activation_luts()
    lut = tanh_lut if ins.op == "pl.tanh" else sig_lut

    def f():
        x[rd] = lut[x[a] & 0xFFFF]
    return f


def _mk_pl_sdotsp(pc, ins, ctx):
    x, pages, spr = ctx.x, ctx.pages, ctx.spr
    rd, a, b, k = ins.rd, ins.rs1, ins.rs2, ins.slot
    W, M = 0x80000000, 0xFFFFFFFF

    def f():
        u, v = spr[k], x[b]
        acc = x[rd]
        base = x[a]
        addr = base & M
        if addr & 3:
            _unaligned(pc, addr, 4)
        p = pages.get(addr >> PAGE_BITS)
        spr[k] = _ld32(p, addr & PAGE_MASK)[0] if p is not None else 0
        x[a] = ((base + 4 + W) & M) - W
        x[rd] = ((acc
                  + (((u & 0xFFFF) ^ 0x8000) - 0x8000) * (((v & 0xFFFF) ^ 0x8000) - 0x8000)
                  + ((((u >> 16) & 0xFFFF) ^ 0x8000) - 0x8000) * ((((v >> 16) & 0xFFFF) ^ 0x8000) - 0x8000)
                  + W) & M) - W
    return f


def _mk_halt(pc, ins, ctx):
    def f():
        return HALT
    return f


_ALU_OPS = ("add", "sub", "and", "or", "xor", "sll", "srl", "sra", "slt", "sltu", "mul", "mac",
            "addi", "andi", "ori", "xori", "slti", "sltiu", "slli", "srli", "srai", "lui", "p.clip")

EXECUTORS = {
    **{op: _mk_alu for op in _ALU_OPS},
    **{op: _mk_simd for op in ("pv.sdotsp.h", "pv.add.h", "pv.mul.h")},
    **{op: _mk_load for op in ("lw", "lh", "lb")},
    **{op: _mk_store for op in ("sw", "sh")},
    **{op: _mk_branch for op in ("beq", "bne", "blt", "bge", "bltu", "bgeu")},
    "jal": _mk_jump,
    "jalr": _mk_jump,
    "lp.setupi": _mk_loop,
    "lp.setup": _mk_loop,
    "pl.tanh": _mk_act,
    "pl.sig": _mk_act,
    "pl.sdotsp.h": _mk_pl_sdotsp,
    "halt": _mk_halt,
}


def check_registry():
    missing = isa.MNEMONICS - set(EXECUTORS)
    extra = set(EXECUTORS) - isa.MNEMONICS
    if missing or extra:
        raise RuntimeError(f"executor registry mismatch: missing={sorted(missing)} extra={sorted(extra)}")


check_registry()

_CONTROL = frozenset({"beq", "bne", "blt", "bge", "bltu", "bgeu", "jal", "jalr"})
_WRITES_RD = frozenset(f for f in ("R", "I", "SH", "CLIP", "U", "L", "J", "JR", "A", "PL"))


class Simulator:
    """Executes one program on one :class:`CoreState`.

    Per-instruction statistics accumulate across :meth:`step` and
    :meth:`run` calls; :meth:`stats` folds them by mnemonic.
    """

    def __init__(self, program: isa.Program, state: CoreState | None = None,
                 config: SimConfig | None = None, trace=None):
        self.program = program
        self.state = state if state is not None else CoreState.from_program(program)
        self.config = config if config is not None else SimConfig()
        self.trace = trace
        ctx = self._ctx = _Ctx(self.state)
        text = program.text
        self._fns = [EXECUTORS[ins.op](pc, ins, ctx) for pc, ins in enumerate(text)]
        self._srcs = [tuple(r for r in ins.reads() if r) for ins in text]
        self._ldst = [ins.rd if ins.fmt == "L" and ins.rd else -1 for ins in text]
        self._slot = [ins.slot if ins.slot is not None else -1 for ins in text]
        n = len(text)
        self.icount = [0] * n
        self.lu_stall = [0] * n
        self.br_stall = [0] * n
        self.spr_stall = [0] * n

    # -- helpers shared by step() and run()
    def _apply_setup(self, pc: int):
        loop, start, end, count = self._ctx.setup
        hl = self.state.hwloop
        if count < 1:
            raise Trap(pc, f"hardware loop {loop} count must be positive, got {count}")
        other = hl[1 - loop]
        if hl[loop].count > 0 and hl[loop].start <= pc <= hl[loop].end:
            raise Trap(pc, f"hwloop nesting violation: loop {loop} re-armed inside its own body")
        if other.count > 0:
            inner, outer = ((start, end), (other.start, other.end)) if loop == 0 else \
                ((other.start, other.end), (start, end))
            if not (outer[0] <= inner[0] and inner[1] <= outer[1]):
                raise Trap(pc, "hwloop nesting violation: loop 0 must lie inside loop 1")
        h = hl[loop]
        h.start, h.end, h.count = start, end, count

    def step(self) -> StepResult:
        st, cfg = self.state, self.config
        if st.halted:
            raise SimError("core is halted")
        pc = st.pc
        if not 0 <= pc < len(self._fns):
            raise Trap(pc, "pc out of range")
        events = []
        start_cycle = st.cycle
        if st.last_load > 0 and st.last_load in self._srcs[pc] and cfg.load_use_stall:
            st.cycle += cfg.load_use_stall
            self.lu_stall[st.last_pc] += cfg.load_use_stall
            events.append("load_use_stall")
        s = self._slot[pc]
        if s >= 0 and st.spr_ready[s] > st.cycle:
            self.spr_stall[pc] += st.spr_ready[s] - st.cycle
            st.cycle = st.spr_ready[s]
            events.append("spr_stall")
        issue = st.cycle
        npc = self._fns[pc]()
        st.gpr[0] = 0
        self.icount[pc] += 1
        st.retired += 1
        if s >= 0:
            st.spr_ready[s] = issue + cfg.mem_latency
        st.cycle += 1
        st.last_load, st.last_pc = self._ldst[pc], pc
        if npc == LOOP_SETUP:
            self._apply_setup(pc)
            npc = pc + 1
        elif npc is None:
            npc = pc + 1
            for h in st.hwloop:
                if h.count > 0 and pc == h.end:
                    if h.count > 1:
                        h.count -= 1
                        npc = h.start
                        events.append("hwloop_wrap")
                        break
                    h.count = 0
        elif npc == HALT:
            st.halted = True
            events.append("halt")
            npc = pc
        else:
            st.cycle += cfg.branch_taken_penalty
            self.br_stall[pc] += cfg.branch_taken_penalty
            events.append("branch_taken")
        if self.trace is not None:
            self._trace_line(issue, pc)
        st.pc = npc
        return StepResult(st.cycle - start_cycle, events)

    def _trace_line(self, cycle, pc):
        ins = self.program.text[pc]
        wb = ""
        if ins.fmt in _WRITES_RD and ins.rd:
            wb = f" -> x{ins.rd}={self.state.gpr[ins.rd] & 0xFFFFFFFF:#010x}"
        self.trace.write(f"{cycle:>9} {pc:>6} {isa.format_instr(ins)}{wb}\n")

    def run(self, max_cycles: int = 10 ** 9) -> RunResult:
        if self.trace is not None or self.config.trace:
            if self.trace is None:
                import sys
                self.trace = sys.stderr
            while not self.state.halted:
                if self.state.cycle > max_cycles:
                    raise CycleBudgetExceeded(f"exceeded {max_cycles} cycles")
                self.step()
            return RunResult(self.state, self.stats())
        return self._run_fast(max_cycles)

    def _run_fast(self, max_cycles: int) -> RunResult:
        st, cfg = self.state, self.config
        if st.halted:
            raise SimError("core is halted")
        fns, srcs, ldst, slots = self._fns, self._srcs, self._ldst, self._slot
        icount, lu_stall, br_stall, spr_stall = self.icount, self.lu_stall, self.br_stall, self.spr_stall
        x = st.gpr
        spr_ready = st.spr_ready
        lus, bp, mlat = cfg.load_use_stall, cfg.branch_taken_penalty, cfg.mem_latency
        n = len(fns)
        h0, h1 = st.hwloop
        s0, e0, c0 = h0.start, h0.end, h0.count
        s1, e1, c1 = h1.start, h1.end, h1.count
        pc, cyc = st.pc, st.cycle
        last_ld, last_pc = st.last_load, st.last_pc
        retired = st.retired
        try:
            while True:
                if cyc > max_cycles:
                    raise CycleBudgetExceeded(f"exceeded {max_cycles} cycles at pc {pc}")
                if not 0 <= pc < n:
                    raise Trap(pc, "pc out of range")
                if last_ld > 0 and lus and last_ld in srcs[pc]:
                    cyc += lus
                    lu_stall[last_pc] += lus
                s = slots[pc]
                if s >= 0 and spr_ready[s] > cyc:
                    spr_stall[pc] += spr_ready[s] - cyc
                    cyc = spr_ready[s]
                if s >= 0:
                    spr_ready[s] = cyc + mlat
                npc = fns[pc]()
                x[0] = 0
                icount[pc] += 1
                retired += 1
                cyc += 1
                last_ld = ldst[pc]
                last_pc = pc
                if npc is None:
                    npc = pc + 1
                    if c0 and pc == e0:
                        if c0 > 1:
                            c0 -= 1
                            npc = s0
                        else:
                            c0 = 0
                            if c1 and pc == e1:
                                if c1 > 1:
                                    c1 -= 1
                                    npc = s1
                                else:
                                    c1 = 0
                    elif c1 and pc == e1:
                        if c1 > 1:
                            c1 -= 1
                            npc = s1
                        else:
                            c1 = 0
                elif npc >= 0:
                    cyc += bp
                    br_stall[pc] += bp
                elif npc == HALT:
                    st.halted = True
                    npc = pc
                    break
                else:
                    h0.start, h0.end, h0.count = s0, e0, c0
                    h1.start, h1.end, h1.count = s1, e1, c1
                    self._apply_setup(pc)
                    s0, e0, c0 = h0.start, h0.end, h0.count
                    s1, e1, c1 = h1.start, h1.end, h1.count
                    npc = pc + 1
                pc = npc
        finally:
            h0.start, h0.end, h0.count = s0, e0, c0
            h1.start, h1.end, h1.count = s1, e1, c1
            st.pc, st.cycle = pc, cyc
            st.last_load, st.last_pc = last_ld, last_pc
            st.retired = retired
        return RunResult(st, self.stats())

    def pc_profile(self) -> list[tuple[int, int]]:
        """(retired count, cycles including charged stalls) for every pc."""
        return [(n, n + a + b + c) for n, a, b, c in
                zip(self.icount, self.lu_stall, self.br_stall, self.spr_stall)]

    def loop_profile(self) -> list[dict]:
        """Per hardware-loop setup site: body length, iterations and body cycles.

        Only cycles of instructions inside the body range count, so calls
        made from a loop body are excluded.
        """
        prof = self.pc_profile()
        out = []
        for pc, ins in enumerate(self.program.text):
            if ins.fmt not in ("LPI", "LPR") or not self.icount[pc]:
                continue
            end = pc + ins.imm // 4 - 1
            iters = prof[pc + 1][0]
            cycles = sum(prof[i][1] for i in range(pc + 1, end + 1))
            out.append({"setup_pc": pc, "loop": ins.rd, "body_len": end - pc,
                        "setups": self.icount[pc], "iterations": iters, "cycles": cycles})
        return out

    def stats(self) -> CycleStats:
        out = CycleStats()
        text = self.program.text
        for pc, cnt in enumerate(self.icount):
            if not cnt and not self.lu_stall[pc]:
                continue
            k = text[pc].name
            out.instrs[k] = out.instrs.get(k, 0) + cnt
            cyc = cnt + self.lu_stall[pc] + self.br_stall[pc] + self.spr_stall[pc]
            out.cycles[k] = out.cycles.get(k, 0) + cyc
        out.stalls["load_use"] = sum(self.lu_stall)
        out.stalls["branch_taken"] = sum(self.br_stall)
        out.stalls["spr"] = sum(self.spr_stall)
        return out


def step(state: CoreState, program: isa.Program, config: SimConfig | None = None) -> StepResult:
    """Execute one instruction of ``program`` on ``state`` in place."""
    sim = getattr(state, "_sim", None)
    if sim is None or sim.program is not program or sim.config != (config or SimConfig()):
        sim = Simulator(program, state, config)
        state._sim = sim
    return sim.step()


def run(program: isa.Program, state: CoreState | None = None, config: SimConfig | None = None,
        max_cycles: int = 10 ** 9, trace=None) -> RunResult:
    return Simulator(program, state, config, trace).run(max_cycles)

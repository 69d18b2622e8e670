"""Instruction set and two-pass assembler.

Instructions are kept as decoded records; there is no binary encoding.
Text addresses are instruction indices, one instruction per 4 bytes, so
branch and hardware-loop offsets written in bytes are divided by 4.

Dialect summary::

    // comment            # comment
    label:  add x1, x2, x3
    lw   rB, Imm(rBAddr!)          post-increment (+4 for words, +2 for halves)
    lp.setupi 0, 9, 32             loop 0, 9 iterations, body ends 32 bytes ahead
    .alias rB x5                   symbolic register name
    .equ   Imm 0                   numeric constant
    .data  0x10000                 switch to data at address
    .word 1, 2   .half -1   .byte 7
    .text                          back to code
    .entry main                    start label or index (default: main, else 0)
    halt
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

PROGRAM_FORMAT = "rvrnn-program"
PROGRAM_VERSION = 1


class AssemblerError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line
        self.msg = msg


# mnemonic -> operand format
FORMATS: dict[str, str] = {
    **{op: "R" for op in ("add", "sub", "and", "or", "xor", "sll", "srl", "sra",
                          "slt", "sltu", "mul", "mac",
                          "pv.sdotsp.h", "pv.add.h", "pv.mul.h")},
    **{op: "I" for op in ("addi", "andi", "ori", "xori", "slti", "sltiu")},
    **{op: "SH" for op in ("slli", "srli", "srai")},
    "p.clip": "CLIP",
    "lui": "U",
    **{op: "L" for op in ("lw", "lh", "lb")},
    **{op: "S" for op in ("sw", "sh")},
    **{op: "B" for op in ("beq", "bne", "blt", "bge", "bltu", "bgeu")},
    "jal": "J",
    "jalr": "JR",
    "lp.setupi": "LPI",
    "lp.setup": "LPR",
    "pl.tanh": "A",
    "pl.sig": "A",
    "pl.sdotsp.h": "PL",
    "halt": "N",
}
MNEMONICS = frozenset(FORMATS)
POSTINC_OPS = frozenset({"lw", "lh", "sw", "sh"})
ACCESS_WIDTH = {"lw": 4, "lh": 2, "lb": 1, "sw": 4, "sh": 2}
LOOP_MIN_BODY = 2

ABI_NAMES = ["zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1",
             "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7",
             "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11",
             "t3", "t4", "t5", "t6"]
_REGS = {f"x{i}": i for i in range(32)}
_REGS.update({f"r{i}": i for i in range(32)})
_REGS.update({name: i for i, name in enumerate(ABI_NAMES)})
_REGS["fp"] = 8


@dataclass(frozen=True)
class Instr:
    op: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0
    postinc: bool = False
    slot: int | None = None
    line: int = field(default=0, compare=False, repr=False)

    @property
    def name(self) -> str:
        """Display mnemonic: ``lw!`` for post-increment, ``pl.sdotsp.h.0`` etc."""
        if self.postinc:
            return self.op + "!"
        if self.slot is not None:
            return f"{self.op}.{self.slot}"
        return self.op

    @property
    def fmt(self) -> str:
        return FORMATS[self.op]

    def reads(self) -> tuple[int, ...]:
        """GPRs read by this instruction (for hazard detection)."""
        f = self.fmt
        if f == "R":
            return (self.rd, self.rs1, self.rs2) if self.op in ("mac", "pv.sdotsp.h") else (self.rs1, self.rs2)
        if f == "PL":
            return (self.rd, self.rs1, self.rs2)
        if f in ("I", "SH", "CLIP", "L", "JR", "LPR", "A"):
            return (self.rs1,)
        if f in ("S", "B"):
            return (self.rs1, self.rs2)
        return ()


@dataclass
class Program:
    text: tuple[Instr, ...] = ()
    labels: dict[str, int] = field(default_factory=dict)
    data: dict[int, bytes] = field(default_factory=dict)
    entry: int = 0
    symbols: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.text = tuple(self.text)

    def __len__(self):
        return len(self.text)

    def validate(self):
        n = len(self.text)
        if n and not 0 <= self.entry < n:
            raise ValueError(f"entry {self.entry} outside program of {n} instructions")
        for name, idx in self.labels.items():
            if not 0 <= idx <= n:
                raise ValueError(f"label {name!r} -> {idx} outside program")
        for pc, ins in enumerate(self.text):
            _check_target(ins, pc, n, lambda msg: ValueError(f"pc {pc}: {msg}"))


def _check_target(ins: Instr, pc: int, n: int, err):
    if ins.fmt in ("B", "J"):
        if ins.imm % 4:
            raise err(f"branch offset {ins.imm} is not a multiple of 4")
        t = pc + ins.imm // 4
        if not 0 <= t < n:
            raise err(f"branch target {t} outside program of {n} instructions")
    elif ins.fmt in ("LPI", "LPR"):
        if ins.imm % 4:
            raise err(f"loop end offset {ins.imm} is not a multiple of 4")
        body = ins.imm // 4 - 1
        if body < LOOP_MIN_BODY:
            raise err(f"hardware loop body has {body} instruction(s); minimum is {LOOP_MIN_BODY}")
        if pc + body >= n:
            raise err(f"hardware loop end {pc + body} outside program of {n} instructions")


# -- assembler ----------------------------------------------------------------

_LABEL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*)\s*:")
_MEM_RE = re.compile(r"^(.*)\(\s*([^()!\s]+)\s*(!?)\s*\)$")
_NAME_RE = re.compile(r"^[A-Za-z_.$][\w.$]*$")


def _strip_comment(line: str) -> str:
    for marker in ("//", "#"):
        i = line.find(marker)
        if i >= 0:
            line = line[:i]
    return line.strip()


def _split_operands(s: str) -> list[str]:
    s = s.strip()
    return [t.strip() for t in s.split(",")] if s else []


def _li_parts(value: int) -> list[tuple[str, int]]:
    value = ((value & 0xFFFFFFFF) ^ 0x80000000) - 0x80000000
    if -2048 <= value < 2048:
        return [("addi", value)]
    hi = ((value + 0x800) >> 12) & 0xFFFFF
    lo = value - (((hi << 12) ^ 0x80000000) - 0x80000000)
    lo = ((lo & 0xFFFFFFFF) ^ 0x80000000) - 0x80000000
    return [("lui", hi)] + ([("addi", lo)] if lo else [])


class _Assembler:
    def __init__(self, source: str):
        self.lines = source.replace("\r\n", "\n").replace("\r", "\n").split("\n")
        self.aliases: dict[str, int] = {}
        self.symbols: dict[str, int] = {}
        self.labels: dict[str, int] = {}
        self.entry_spec: tuple[int, str] | None = None
        self.li_sizes: dict[int, int] = {}

    # operand helpers
    def reg(self, tok: str, ln: int) -> int:
        tok = tok.strip()
        if tok in self.aliases:
            return self.aliases[tok]
        if tok in _REGS:
            return _REGS[tok]
        m = re.fullmatch(r"[xr](\d+)", tok)
        if m:
            raise AssemblerError(ln, f"register index out of range: {tok}")
        raise AssemblerError(ln, f"malformed register operand: {tok!r}")

    def value(self, tok: str, ln: int, forward_ok: bool = False) -> int | None:
        tok = tok.strip()
        if not tok:
            return 0
        try:
            return int(tok, 0)
        except ValueError:
            pass
        if tok in self.symbols:
            return self.symbols[tok]
        if forward_ok and _NAME_RE.match(tok):
            return None
        raise AssemblerError(ln, f"malformed or undefined immediate: {tok!r}")

    def imm(self, tok: str, ln: int, lo: int, hi: int) -> int:
        v = self.value(tok, ln)
        if not lo <= v <= hi:
            raise AssemblerError(ln, f"immediate {v} outside [{lo}, {hi}]")
        return v

    def mem(self, tok: str, ln: int) -> tuple[int, int, bool]:
        m = _MEM_RE.match(tok.strip())
        if not m:
            raise AssemblerError(ln, f"malformed memory operand: {tok!r}")
        off = self.imm(m.group(1), ln, -2048, 2047)
        return off, self.reg(m.group(2), ln), bool(m.group(3))

    def target(self, tok: str, ln: int, pc: int) -> int:
        tok = tok.strip()
        if tok in self.labels:
            return (self.labels[tok] - pc) * 4
        try:
            return int(tok, 0)
        except ValueError:
            raise AssemblerError(ln, f"unresolved label: {tok!r}") from None

    # passes
    def _statements(self):
        """Yield (line_no, section, label_list, mnemonic, operand_text)."""
        section = "text"
        for ln, raw in enumerate(self.lines, 1):
            s = _strip_comment(raw)
            labels = []
            m = _LABEL_RE.match(s)
            while m:
                labels.append(m.group(1))
                s = s[m.end():].strip()
                m = _LABEL_RE.match(s)
            if not s:
                yield ln, section, labels, None, ""
                continue
            parts = s.split(None, 1)
            mn = parts[0].lower()
            rest = parts[1] if len(parts) > 1 else ""
            if mn in (".data", ".text"):
                section = mn[1:]
            yield ln, section, labels, mn, rest

    def pass1(self):
        pc = 0
        data_addr = None
        for ln, section, labels, mn, rest in self._statements():
            for lab in labels:
                if lab in self.labels or lab in self.symbols:
                    raise AssemblerError(ln, f"duplicate label {lab!r}")
                if section == "text" and mn != ".data":
                    self.labels[lab] = pc
                else:
                    if data_addr is None:
                        raise AssemblerError(ln, "data label before .data address")
                    self.symbols[lab] = data_addr
            if mn is None:
                continue
            if mn == ".alias":
                ops = rest.replace(",", " ").split()
                if len(ops) != 2:
                    raise AssemblerError(ln, ".alias expects: .alias name register")
                self.aliases[ops[0]] = self.reg(ops[1], ln)
            elif mn in (".equ", ".set"):
                ops = rest.replace(",", " ").split()
                if len(ops) != 2:
                    raise AssemblerError(ln, f"{mn} expects: {mn} name value")
                self.symbols[ops[0]] = self.value(ops[1], ln)
            elif mn == ".data":
                data_addr = self.value(rest, ln) if rest.strip() else (data_addr or 0)
            elif mn == ".text":
                pass
            elif mn == ".entry":
                self.entry_spec = (ln, rest.strip())
            elif mn in (".word", ".half", ".byte"):
                if section != "data":
                    raise AssemblerError(ln, f"{mn} outside .data")
                width = {".word": 4, ".half": 2, ".byte": 1}[mn]
                data_addr += width * len(_split_operands(rest))
            elif mn.startswith("."):
                raise AssemblerError(ln, f"unknown directive {mn}")
            else:
                if section != "text":
                    raise AssemblerError(ln, f"instruction {mn!r} in .data section")
                pc += self._size(mn, rest, ln)
        self.n_text = pc

    def _size(self, mn: str, rest: str, ln: int) -> int:
        if mn == "li":
            ops = _split_operands(rest)
            if len(ops) != 2:
                raise AssemblerError(ln, "li expects: li rd, imm")
            v = self.value(ops[1], ln, forward_ok=True)
            self.li_sizes[ln] = 2 if v is None else len(_li_parts(v))
            return self.li_sizes[ln]
        if mn in PSEUDO or _parse_mnemonic(mn) is not None:
            return 1
        raise AssemblerError(ln, f"unknown mnemonic {mn!r}")

    def pass2(self) -> Program:
        text: list[Instr] = []
        data: dict[int, bytearray] = {}
        seg_start = None
        data_addr = None
        for ln, section, labels, mn, rest in self._statements():
            if mn is None or mn in (".alias", ".equ", ".set", ".text", ".entry"):
                continue
            if mn == ".data":
                data_addr = self.value(rest, ln) if rest.strip() else (data_addr or 0)
                seg_start = data_addr
                data.setdefault(seg_start, bytearray())
                continue
            if mn in (".word", ".half", ".byte"):
                width = {".word": 4, ".half": 2, ".byte": 1}[mn]
                for tok in _split_operands(rest):
                    v = self.value(tok, ln)
                    if not -(1 << (8 * width - 1)) <= v < (1 << (8 * width)):
                        raise AssemblerError(ln, f"{mn} value {v} does not fit")
                    data[seg_start] += (v & ((1 << (8 * width)) - 1)).to_bytes(width, "little")
                    data_addr += width
                continue
            for ins in self._encode(mn, rest, ln, len(text)):
                text.append(ins)
        n = len(text)
        for pc, ins in enumerate(text):
            _check_target(ins, pc, n, lambda msg, ln=ins.line: AssemblerError(ln, msg))
        entry = 0
        if self.entry_spec is not None:
            ln, tok = self.entry_spec
            if tok in self.labels:
                entry = self.labels[tok]
            else:
                entry = self.value(tok, ln)
            if n and not 0 <= entry < n:
                raise AssemblerError(ln, f"entry {tok!r} outside program")
        elif "main" in self.labels:
            entry = self.labels["main"]
        return Program(tuple(text), dict(self.labels),
                       {a: bytes(b) for a, b in data.items() if b}, entry, dict(self.symbols))

    def _encode(self, mn: str, rest: str, ln: int, pc: int) -> list[Instr]:
        ops = _split_operands(rest)

        def need(k):
            if len(ops) != k:
                raise AssemblerError(ln, f"{mn} expects {k} operand(s), got {len(ops)}")

        if mn in PSEUDO:
            if mn == "nop":
                need(0)
                return [Instr("addi", line=ln)]
            if mn == "mv":
                need(2)
                return [Instr("addi", self.reg(ops[0], ln), self.reg(ops[1], ln), line=ln)]
            if mn == "li":
                need(2)
                rd = self.reg(ops[0], ln)
                v = self.value(ops[1], ln)
                parts = _li_parts(v)
                if len(parts) < self.li_sizes[ln]:
                    # forward reference was sized as lui+addi in pass 1
                    parts = [("lui", 0), ("addi", v)] if parts[0][0] == "addi" else parts + [("addi", 0)]
                out = []
                for op, k in parts:
                    if op == "lui":
                        out.append(Instr("lui", rd, imm=k, line=ln))
                    else:
                        src = rd if out else 0
                        out.append(Instr("addi", rd, src, imm=k, line=ln))
                return out
            if mn == "j":
                need(1)
                return [Instr("jal", 0, imm=self.target(ops[0], ln, pc), line=ln)]
            if mn == "call":
                need(1)
                return [Instr("jal", 1, imm=self.target(ops[0], ln, pc), line=ln)]
            if mn == "ret":
                need(0)
                return [Instr("jalr", 0, 1, line=ln)]

        op, slot = _parse_mnemonic(mn)
        f = FORMATS[op]
        if f == "R":
            need(3)
            return [Instr(op, self.reg(ops[0], ln), self.reg(ops[1], ln), self.reg(ops[2], ln), line=ln)]
        if f == "PL":
            need(3)
            return [Instr(op, self.reg(ops[0], ln), self.reg(ops[1], ln), self.reg(ops[2], ln),
                          slot=slot, line=ln)]
        if f == "I":
            need(3)
            return [Instr(op, self.reg(ops[0], ln), self.reg(ops[1], ln),
                          imm=self.imm(ops[2], ln, -2048, 2047), line=ln)]
        if f == "SH":
            need(3)
            return [Instr(op, self.reg(ops[0], ln), self.reg(ops[1], ln),
                          imm=self.imm(ops[2], ln, 0, 31), line=ln)]
        if f == "CLIP":
            need(3)
            return [Instr(op, self.reg(ops[0], ln), self.reg(ops[1], ln),
                          imm=self.imm(ops[2], ln, 1, 31), line=ln)]
        if f == "U":
            need(2)
            v = self.imm(ops[1], ln, -(1 << 19), (1 << 20) - 1)
            return [Instr(op, self.reg(ops[0], ln), imm=v & 0xFFFFF, line=ln)]
        if f in ("L", "S"):
            need(2)
            r = self.reg(ops[0], ln)
            off, base, inc = self.mem(ops[1], ln)
            if inc and op not in POSTINC_OPS:
                raise AssemblerError(ln, f"{op} has no post-increment form")
            if inc and f == "L" and r == base and r != 0:
                raise AssemblerError(ln, "post-increment load may not target its base register")
            if f == "L":
                return [Instr(op, r, base, imm=off, postinc=inc, line=ln)]
            return [Instr(op, 0, base, r, imm=off, postinc=inc, line=ln)]
        if f == "B":
            need(3)
            return [Instr(op, 0, self.reg(ops[0], ln), self.reg(ops[1], ln),
                          imm=self.target(ops[2], ln, pc), line=ln)]
        if f == "J":
            if len(ops) == 1:
                return [Instr(op, 1, imm=self.target(ops[0], ln, pc), line=ln)]
            need(2)
            return [Instr(op, self.reg(ops[0], ln), imm=self.target(ops[1], ln, pc), line=ln)]
        if f == "JR":
            if len(ops) == 1:
                return [Instr(op, 1, self.reg(ops[0], ln), line=ln)]
            if len(ops) == 2:
                off, base, inc = self.mem(ops[1], ln)
                if inc:
                    raise AssemblerError(ln, "jalr has no post-increment form")
                return [Instr(op, self.reg(ops[0], ln), base, imm=off, line=ln)]
            need(3)
            return [Instr(op, self.reg(ops[0], ln), self.reg(ops[1], ln),
                          imm=self.imm(ops[2], ln, -2048, 2047), line=ln)]
        if f in ("LPI", "LPR"):
            need(3)
            loop = self.imm(ops[0], ln, 0, 1)
            end = self.target(ops[2], ln, pc)
            if f == "LPI":
                count = self.imm(ops[1], ln, 1, 4095)
                return [Instr(op, rd=loop, rs2=count, imm=end, line=ln)]
            return [Instr(op, rd=loop, rs1=self.reg(ops[1], ln), imm=end, line=ln)]
        if f == "A":
            need(2)
            return [Instr(op, self.reg(ops[0], ln), self.reg(ops[1], ln), line=ln)]
        need(0)
        return [Instr(op, line=ln)]


PSEUDO = frozenset({"nop", "mv", "li", "j", "call", "ret"})


def _parse_mnemonic(mn: str) -> tuple[str, int | None] | None:
    if mn in FORMATS and FORMATS[mn] != "PL":
        return mn, None
    m = re.fullmatch(r"(pl\.sdotsp\.h)\.([01])", mn)
    if m:
        return m.group(1), int(m.group(2))
    return None


def assemble(source: str) -> Program:
    """Two-pass assembly: labels and sizes first, operands second."""
    a = _Assembler(source)
    a.pass1()
    return a.pass2()


# -- disassembler -------------------------------------------------------------

def reg_name(i: int) -> str:
    return f"x{i}"


def format_instr(ins: Instr, pc: int | None = None, label_at: dict[int, str] | None = None) -> str:
    f = ins.fmt
    x = reg_name

    def tgt():
        if pc is not None and label_at:
            t = pc + ins.imm // 4
            if t in label_at:
                return label_at[t]
        return str(ins.imm)

    if f in ("R", "PL"):
        return f"{ins.name} {x(ins.rd)}, {x(ins.rs1)}, {x(ins.rs2)}"
    if f in ("I", "SH", "CLIP"):
        return f"{ins.op} {x(ins.rd)}, {x(ins.rs1)}, {ins.imm}"
    if f == "U":
        return f"lui {x(ins.rd)}, {ins.imm:#x}"
    bang = "!" if ins.postinc else ""
    if f == "L":
        return f"{ins.op} {x(ins.rd)}, {ins.imm}({x(ins.rs1)}{bang})"
    if f == "S":
        return f"{ins.op} {x(ins.rs2)}, {ins.imm}({x(ins.rs1)}{bang})"
    if f == "B":
        return f"{ins.op} {x(ins.rs1)}, {x(ins.rs2)}, {tgt()}"
    if f == "J":
        return f"jal {x(ins.rd)}, {tgt()}"
    if f == "JR":
        return f"jalr {x(ins.rd)}, {ins.imm}({x(ins.rs1)})"
    if f == "LPI":
        return f"lp.setupi {ins.rd}, {ins.rs2}, {tgt()}"
    if f == "LPR":
        return f"lp.setup {ins.rd}, {x(ins.rs1)}, {tgt()}"
    if f == "A":
        return f"{ins.op} {x(ins.rd)}, {x(ins.rs1)}"
    return ins.op


def disassemble(program: Program) -> str:
    """Text that re-assembles to an identical :class:`Program`."""
    out: list[str] = []
    for name, value in program.symbols.items():
        out.append(f".equ {name} {value}")
    label_at: dict[int, str] = {}
    by_index: dict[int, list[str]] = {}
    for name, idx in program.labels.items():
        label_at.setdefault(idx, name)
        by_index.setdefault(idx, []).append(name)
    n = len(program.text)
    for pc, ins in enumerate(program.text):
        for name in by_index.get(pc, ()):
            out.append(f"{name}:")
        out.append("    " + format_instr(ins, pc, label_at))
    for name in by_index.get(n, ()):
        out.append(f"{name}:")
    default_entry = program.labels.get("main", 0)
    if program.entry != default_entry:
        out.append(f".entry {program.entry}")
    for addr in sorted(program.data):
        blob = program.data[addr]
        out.append(f".data {addr:#x}")
        width, directive = (4, ".word") if len(blob) % 4 == 0 else (2, ".half") if len(blob) % 2 == 0 else (1, ".byte")
        vals = [int.from_bytes(blob[i:i + width], "little") for i in range(0, len(blob), width)]
        for i in range(0, len(vals), 8):
            out.append(f"    {directive} " + ", ".join(f"{v:#x}" for v in vals[i:i + 8]))
    if program.data:
        out.append(".text")
    return "\n".join(out) + ("\n" if out else "")


# -- JSON serialisation -------------------------------------------------------

def program_to_dict(program: Program) -> dict:
    text = []
    for ins in program.text:
        d = {"op": ins.op}
        for k in ("rd", "rs1", "rs2", "imm"):
            v = getattr(ins, k)
            if v:
                d[k] = v
        if ins.postinc:
            d["postinc"] = True
        if ins.slot is not None:
            d["slot"] = ins.slot
        text.append(d)
    return {
        "format": PROGRAM_FORMAT,
        "version": PROGRAM_VERSION,
        "entry": program.entry,
        "labels": dict(program.labels),
        "symbols": dict(program.symbols),
        "text": text,
        "data": [{"addr": a, "hex": program.data[a].hex()} for a in sorted(program.data)],
    }


def program_from_dict(d: dict) -> Program:
    if d.get("format") != PROGRAM_FORMAT:
        raise ValueError(f"not an {PROGRAM_FORMAT} document")
    if d.get("version") != PROGRAM_VERSION:
        raise ValueError(f"unsupported program version {d.get('version')!r}")
    text = []
    for t in d["text"]:
        if t["op"] not in MNEMONICS:
            raise ValueError(f"unknown mnemonic {t['op']!r}")
        text.append(Instr(t["op"], t.get("rd", 0), t.get("rs1", 0), t.get("rs2", 0), t.get("imm", 0),
                          t.get("postinc", False), t.get("slot")))
    p = Program(tuple(text), dict(d.get("labels", {})),
                {int(s["addr"]): bytes.fromhex(s["hex"]) for s in d.get("data", [])},
                d.get("entry", 0), dict(d.get("symbols", {})))
    p.validate()
    return p


def dumps_program(program: Program) -> str:
    return json.dumps(program_to_dict(program), indent=1, sort_keys=True)


def loads_program(text: str) -> Program:
    return program_from_dict(json.loads(text))

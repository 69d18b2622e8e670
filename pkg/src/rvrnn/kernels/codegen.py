"""Assembly generators for FC, LSTM and convolution layers at levels A-E.

All three layer kinds reduce to the same matrix-vector job: each output
is ``bias + sum(w * x)`` over one or more contiguous input *segments*
(a single segment for FC/LSTM, one per kernel row for convolution),
requantized and stored as a halfword. The job emitter picks the inner
schedule from the optimization level:

A   scalar ``lh``/``mac`` with the accumulator kept in the stack frame,
    branch-closed loops, branch-based saturation.
B   ``lw!`` pairs + ``pv.sdotsp.h`` in a hardware loop, one output at a time.
C   ``tile_n`` outputs at once sharing every input load.
D   as C but weights stream through the SPR pair via ``pl.sdotsp.h``.
E   as D with ``ifm_tile`` input words per loop iteration.

Memory layout (all little-endian, 4-byte aligned buffers from
``DATA_BASE``): weights row-major int16, biases int32 pre-shifted by 12,
activations int16. Convolutions read a host-padded HWC image and write
HWC output; their weights are stored flipped so the kernel is a plain
sliding dot product.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .. import activation, fixp, isa, sim
from .golden import ConvLayer, FcLayer, LstmLayer

DATA_BASE = 0x0001_0000
STACK_TOP = 0x0800_0000

POOL = ("t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7",
        "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11",
        "t3", "t4", "t5", "t6", "ra", "gp", "tp")

# stack frame slots (byte offsets from sp)
ACC_SLOT, PW_SLOT, PB_SLOT = 0, 4, 8
FRAME = 16


class Level(str, enum.Enum):
    A = "A"  # baseline RV32IMC
    B = "B"  # SIMD + hardware loops
    C = "C"  # output-channel tiling
    D = "D"  # merged load and compute
    E = "E"  # input-channel tiling

    @property
    def rank(self) -> int:
        return "ABCDE".index(self.value)


LEVEL_NAMES = {Level.A: "baseline", Level.B: "simd_hwl", Level.C: "ofm_tiling",
               Level.D: "merged_load", Level.E: "ifm_tiling"}


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class OptLevel:
    level: Level
    tile_n: int = 4
    ifm_tile: int = 2
    hw_act: bool | None = None  # None: use pl.tanh/pl.sig from level C on

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        if self.tile_n < 1:
            raise KernelError("tile_n must be >= 1")
        if self.ifm_tile < 1:
            raise KernelError("ifm_tile must be >= 1")

    @property
    def use_hw_act(self) -> bool:
        return self.level.rank >= Level.C.rank if self.hw_act is None else self.hw_act

    def label(self) -> str:
        return self.level.value


# -- small assembly builder ----------------------------------------------------

class _Asm:
    def __init__(self):
        self.lines: list[str] = []
        self._n = 0

    def __call__(self, text: str):
        self.lines.append("    " + text)

    def comment(self, text: str):
        self.lines.append("    # " + text)

    def new_label(self, stem: str) -> str:
        self._n += 1
        return f".L{stem}{self._n}"

    def place(self, label: str):
        self.lines.append(label + ":")

    def li(self, rd: str, v: int):
        self(f"li {rd}, {v}")

    def addc(self, rd: str, rs: str, v: int, scratch: str):
        """rd = rs + v using addi when the constant fits, else via scratch."""
        if -2048 <= v <= 2047:
            if v or rd != rs:
                self(f"addi {rd}, {rs}, {v}")
        else:
            self.li(scratch, v)
            self(f"add {rd}, {rs}, {scratch}")

    def hwloop(self, loop: int, count: int, end: str, scratch: str):
        if count <= 4095:
            self(f"lp.setupi {loop}, {count}, {end}")
        else:
            self.li(scratch, count)
            self(f"lp.setup {loop}, {scratch}, {end}")

    def sat16(self, r: str, scratch: str):
        """Branch-based clamp to the int16 range (no p.clip in RV32IMC)."""
        hi, lo = self.new_label("sh"), self.new_label("sl")
        self.li(scratch, fixp.Q_MAX)
        self(f"bge {scratch}, {r}, {hi}")
        self(f"mv {r}, {scratch}")
        self.place(hi)
        self.li(scratch, fixp.Q_MIN)
        self(f"bge {r}, {scratch}, {lo}")
        self(f"mv {r}, {scratch}")
        self.place(lo)

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


class _Regs:
    def __init__(self, pool=POOL):
        self.free = list(pool)

    def take(self, n: int | None = None):
        need = 1 if n is None else n
        if need > len(self.free):
            raise KernelError(f"register budget exceeded: need {need}, {len(self.free)} left")
        out, self.free = self.free[:need], self.free[need:]
        return out[0] if n is None else out

    def __len__(self):
        return len(self.free)


class _Alloc:
    def __init__(self, base: int = DATA_BASE):
        self.ptr = base
        self.blobs: dict[int, bytes] = {}

    def reserve(self, nbytes: int) -> int:
        addr = self.ptr
        self.ptr += (nbytes + 3) & ~3
        return addr

    def put(self, blob: bytes) -> int:
        addr = self.reserve(len(blob))
        if blob:
            self.blobs[addr] = bytes(blob)
        return addr

    def halves(self, a) -> int:
        return self.put(np.asarray(a, dtype=np.int64).astype("<i2").tobytes())

    def words(self, a) -> int:
        return self.put(np.asarray(a, dtype=np.int64).astype("<i4").tobytes())


# -- the matrix-vector job -----------------------------------------------------

@dataclass
class _Job:
    rows: int
    w_addr: int
    b_addr: int
    segments: list  # (base register or absolute address, byte offset, halfwords)
    po: str  # caller-owned output pointer register, advanced by the job

    @property
    def row_len(self) -> int:
        return sum(s[2] for s in self.segments)


def _seg_ptr(asm: _Asm, px: str, seg, scratch: str):
    base, off, _ = seg
    if isinstance(base, str):
        asm.addc(px, base, off, scratch)
    else:
        asm.li(px, base + off)


def _emit_job(asm: _Asm, opt: OptLevel, job: _Job, regs: _Regs):
    lvl = opt.level
    if lvl == Level.A:
        return _job_a(asm, job, regs)
    for _, _, n in job.segments:
        if n % 2:
            raise KernelError(f"level {lvl.value} needs an even number of inputs per segment, got {n}")
    if lvl == Level.B:
        return _job_b(asm, job, regs)
    return _job_tiled(asm, opt, job, regs)


def _job_a(asm: _Asm, job: _Job, regs: _Regs):
    pw, pb, px, pend, poend, wv, xv, acc = regs.take(8)
    asm.li(pw, job.w_addr)
    asm.li(pb, job.b_addr)
    asm.addc(poend, job.po, 2 * job.rows, wv)
    outer = asm.new_label("ao")
    asm.place(outer)
    asm(f"lw {acc}, 0({pb})")
    asm(f"addi {pb}, {pb}, 4")
    asm(f"sw {acc}, {ACC_SLOT}(sp)")
    for seg in job.segments:
        _seg_ptr(asm, px, seg, wv)
        asm.addc(pend, px, 2 * seg[2], wv)
        inner = asm.new_label("ai")
        asm.place(inner)
        asm(f"lh {wv}, 0({pw})")
        asm(f"lh {xv}, 0({px})")
        asm(f"lw {acc}, {ACC_SLOT}(sp)")
        asm(f"addi {pw}, {pw}, 2")
        asm(f"addi {px}, {px}, 2")
        asm(f"mac {acc}, {wv}, {xv}")
        asm(f"sw {acc}, {ACC_SLOT}(sp)")
        asm(f"bltu {px}, {pend}, {inner}")
    asm(f"lw {acc}, {ACC_SLOT}(sp)")
    asm(f"srai {acc}, {acc}, {fixp.FRAC_BITS}")
    asm.sat16(acc, wv)
    asm(f"sh {acc}, 0({job.po})")
    asm(f"addi {job.po}, {job.po}, 2")
    asm(f"bltu {job.po}, {poend}, {outer}")


def _requant_store(asm: _Asm, acc: str, po: str):
    asm(f"srai {acc}, {acc}, {fixp.FRAC_BITS}")
    asm(f"p.clip {acc}, {acc}, 16")
    asm(f"sh {acc}, 0({po}!)")


def _job_b(asm: _Asm, job: _Job, regs: _Regs):
    pw, pb, px, wv, xv, acc = regs.take(6)
    asm.li(pw, job.w_addr)
    asm.li(pb, job.b_addr)
    end1 = asm.new_label("bo")
    asm.hwloop(1, job.rows, end1, wv)
    asm(f"lw {acc}, 0({pb}!)")
    for seg in job.segments:
        _seg_ptr(asm, px, seg, wv)
        end0 = asm.new_label("bi")
        asm.hwloop(0, seg[2] // 2, end0, wv)
        asm(f"lw {wv}, 0({pw}!)")
        asm(f"lw {xv}, 0({px}!)")
        asm(f"pv.sdotsp.h {acc}, {wv}, {xv}")
        asm.place(end0)
    _requant_store(asm, acc, job.po)
    asm.place(end1)


def _blocks(opt: OptLevel, rows: int) -> list[tuple[int, str]]:
    """Split ``rows`` into (tile rows, schedule) blocks; full tiles first."""
    lvl, t = opt.level, opt.tile_n
    merged = lvl in (Level.D, Level.E)
    if merged and t % 2:
        raise KernelError(f"level {lvl.value} needs an even tile_n, got {t}")
    sched = "E" if lvl == Level.E else "D" if lvl == Level.D else "C"
    out = [(t, sched)] * (rows // t)
    r = rows % t
    if r:
        if merged and r % 2:
            if r > 1:
                out.append((r - 1, sched))
            out.append((1, "C"))
        else:
            out.append((r, sched))
    return out


def _job_tiled(asm: _Asm, opt: OptLevel, job: _Job, regs: _Regs):
    t_max = min(opt.tile_n, job.rows)
    k = opt.ifm_tile if opt.level == Level.E else 1
    blocks = _blocks(opt, job.rows)
    n_w = 2 if any(s == "C" for _, s in blocks) else 0
    need = 2 * t_max + k + n_w + 1
    if need > len(regs):
        raise KernelError(f"register budget exceeded: tile_n={opt.tile_n} ifm_tile={k} "
                          f"needs {need} registers, {len(regs)} available")
    acc = regs.take(t_max)
    ra = regs.take(t_max)
    rb = regs.take(k)
    wr = regs.take(n_w) if n_w else []
    px = regs.take()
    # pointer into the weights of the next tile, and the bias pointer, are
    # kept in registers while the budget allows and live in the stack otherwise
    pw = regs.take() if len(regs) else None
    pb = regs.take() if len(regs) else None
    scratch = rb[0]
    rowb = 2 * job.row_len
    if pw:
        asm.li(pw, job.w_addr)
    else:
        asm.li(scratch, job.w_addr)
        asm(f"sw {scratch}, {PW_SLOT}(sp)")
    if pb:
        asm.li(pb, job.b_addr)
    else:
        asm.li(scratch, job.b_addr)
        asm(f"sw {scratch}, {PB_SLOT}(sp)")

    n_full = job.rows // opt.tile_n
    ctx = dict(acc=acc, ra=ra, rb=rb, wr=wr, px=px, pw=pw, pb=pb, rowb=rowb, k=k)
    if n_full >= 2:
        end1 = asm.new_label("to")
        asm.hwloop(1, n_full, end1, scratch)
        _tile_block(asm, job, blocks[0][0], blocks[0][1], ctx)
        asm.place(end1)
    elif n_full == 1:
        _tile_block(asm, job, blocks[0][0], blocks[0][1], ctx)
    for t, sched in blocks[n_full:]:
        _tile_block(asm, job, t, sched, ctx)


def _tile_block(asm: _Asm, job: _Job, t: int, sched: str, c: dict):
    acc, ra, rb, wr, px = c["acc"], c["ra"], c["rb"], c["wr"], c["px"]
    rowb, k = c["rowb"], c["k"]
    scratch = rb[0]
    # row pointers for this tile, then bump the running weight pointer
    pw = c["pw"] or px
    if not c["pw"]:
        asm(f"lw {px}, {PW_SLOT}(sp)")
    asm(f"mv {ra[0]}, {pw}")
    for i in range(1, t):
        asm.addc(ra[i], ra[i - 1], rowb, scratch)
    asm.addc(pw, pw, t * rowb, scratch)
    if not c["pw"]:
        asm(f"sw {px}, {PW_SLOT}(sp)")
    pb = c["pb"] or px
    if not c["pb"]:
        asm(f"lw {px}, {PB_SLOT}(sp)")
    for i in range(t):
        asm(f"lw {acc[i]}, 0({pb}!)")
    if not c["pb"]:
        asm(f"sw {px}, {PB_SLOT}(sp)")

    if sched != "C":
        # prime the SPR pair with the first words of rows 0 and 1
        asm(f"pl.sdotsp.h.0 x0, {ra[0]}, x0")
        asm(f"pl.sdotsp.h.1 x0, {ra[1]}, x0")
    for seg in job.segments:
        _seg_ptr(asm, px, seg, scratch)
        n = seg[2] // 2
        if sched == "C":
            _inner_c(asm, t, n, acc, ra, rb[0], wr, px)
        elif sched == "D":
            _inner_merged(asm, t, n, 1, acc, ra, rb, px)
        else:
            _inner_merged(asm, t, n, k, acc, ra, rb, px)
    for i in range(t):
        _requant_store(asm, acc[i], job.po)


def _inner_c(asm, t, n, acc, ra, rb, wr, px):
    end = asm.new_label("ci")
    asm.hwloop(0, n, end, rb)
    asm(f"lw {rb}, 0({px}!)")
    asm(f"lw {wr[0]}, 0({ra[0]}!)")
    if t > 1:
        asm(f"lw {wr[1]}, 0({ra[1]}!)")
    for i in range(t):
        asm(f"pv.sdotsp.h {acc[i]}, {wr[i % 2]}, {rb}")
        if i + 2 < t:
            asm(f"lw {wr[i % 2]}, 0({ra[i + 2]}!)")
    asm.place(end)


def _merged_word(asm, t, acc, ra, rbv):
    for p in range(t):
        asm(f"pl.sdotsp.h.{p % 2} {acc[p]}, {ra[(p + 2) % t]}, {rbv}")


def _inner_merged(asm, t, n, k, acc, ra, rb, px):
    iters, rem = divmod(n, k)
    if iters:
        end = asm.new_label("mi")
        asm.hwloop(0, iters, end, rb[0])
        for i in range(k):
            asm(f"lw {rb[i]}, 0({px}!)")
        for i in range(k):
            _merged_word(asm, t, acc, ra, rb[i])
        asm.place(end)
    for _ in range(rem):
        asm(f"lw {rb[0]}, 0({px}!)")
        _merged_word(asm, t, acc, ra, rb[0])


# -- software activation ---------------------------------------------------------

def _emit_sw_pla(asm: _Asm, func: str, lut: int, table: activation.PlaTable):
    """a0 -> a0 piecewise-linear activation; clobbers t3-t6."""
    if 4 * table.m_count > 2047:
        raise KernelError("activation table too large for the software routine")
    sat, clamp, tail = asm.new_label("ps"), asm.new_label("pc"), asm.new_label("pt")
    asm.place(f"__pla_{func}")
    asm("srai t3, a0, 31")
    asm("xor t4, a0, t3")
    asm("sub t4, t4, t3")
    asm.li("t5", fixp.Q_MAX)
    asm(f"bge t5, t4, {clamp}")
    asm("mv t4, t5")
    asm.place(clamp)
    asm(f"srai t5, t4, {table.n_log2}")
    asm.li("t6", table.m_count)
    asm(f"bge t5, t6, {sat}")
    asm("slli t5, t5, 2")
    asm.li("t6", lut)
    asm("add t6, t6, t5")
    asm("lw t5, 0(t6)")
    asm(f"lw t6, {4 * table.m_count}(t6)")
    asm("mul t5, t5, t4")
    asm(f"srai t5, t5, {fixp.FRAC_BITS}")
    asm("add t5, t5, t6")
    asm(f"j {tail}")
    asm.place(sat)
    asm.li("t5", fixp.ONE)
    asm.place(tail)
    asm("xor t5, t5, t3")
    if func == "tanh":
        asm("sub a0, t5, t3")
    else:
        asm("sub t5, t5, t3")
        asm("slli t6, t3, 12")
        asm("sub a0, t5, t6")
    asm("ret")


def _act(asm: _Asm, func: str, r: str, hw: bool):
    if hw:
        asm(f"pl.{func} {r}, {r}")
    else:
        asm(f"mv a0, {r}")
        asm(f"call __pla_{func}")
        asm(f"mv {r}, a0")


def _emit_lstm_pointwise(asm: _Asm, opt: OptLevel, n: int, gates: int, c_addr: int, h_addr: int):
    """c = sat((f*c + i*g) >> 12); h = sat((o*tanh(c)) >> 12) for n hidden units."""
    hw = opt.use_hw_act
    p_o, p_f, p_i, p_g, p_c, p_h, v_o, v_f, v_i, v_g, v_c, p_end = (f"s{i}" for i in range(12))
    asm.li(p_o, gates)
    asm.li(p_f, gates + 2 * n)
    asm.li(p_i, gates + 4 * n)
    asm.li(p_g, gates + 6 * n)
    asm.li(p_c, c_addr)
    asm.li(p_h, h_addr)
    sh = fixp.FRAC_BITS
    if opt.level == Level.A:
        asm.li(p_end, h_addr + 2 * n)
        top = asm.new_label("ew")
        asm.place(top)
        for p, v in ((p_o, v_o), (p_f, v_f), (p_i, v_i), (p_g, v_g), (p_c, v_c)):
            asm(f"lh {v}, 0({p})")
        for p in (p_o, p_f, p_i, p_g):
            asm(f"addi {p}, {p}, 2")
        for func, v in (("sig", v_o), ("sig", v_f), ("sig", v_i), ("tanh", v_g)):
            _act(asm, func, v, hw)
        asm(f"mul {v_c}, {v_f}, {v_c}")
        asm(f"mul {v_i}, {v_i}, {v_g}")
        asm(f"add {v_c}, {v_c}, {v_i}")
        asm(f"srai {v_c}, {v_c}, {sh}")
        asm.sat16(v_c, "t0")
        asm(f"sh {v_c}, 0({p_c})")
        asm(f"addi {p_c}, {p_c}, 2")
        _act(asm, "tanh", v_c, hw)
        asm(f"mul {v_c}, {v_o}, {v_c}")
        asm(f"srai {v_c}, {v_c}, {sh}")
        asm.sat16(v_c, "t0")
        asm(f"sh {v_c}, 0({p_h})")
        asm(f"addi {p_h}, {p_h}, 2")
        asm(f"bltu {p_h}, {p_end}, {top}")
        return
    end = asm.new_label("ew")
    asm.hwloop(0, n, end, "t0")
    for p, v in ((p_o, v_o), (p_f, v_f), (p_i, v_i), (p_g, v_g)):
        asm(f"lh {v}, 0({p}!)")
    asm(f"lh {v_c}, 0({p_c})")
    for func, v in (("sig", v_o), ("sig", v_f), ("sig", v_i), ("tanh", v_g)):
        _act(asm, func, v, hw)
    asm(f"mul {v_c}, {v_f}, {v_c}")
    asm(f"mac {v_c}, {v_i}, {v_g}")
    asm(f"srai {v_c}, {v_c}, {sh}")
    asm(f"p.clip {v_c}, {v_c}, 16")
    asm(f"sh {v_c}, 0({p_c}!)")
    _act(asm, "tanh", v_c, hw)
    asm(f"mul {v_c}, {v_o}, {v_c}")
    asm(f"srai {v_c}, {v_c}, {sh}")
    asm(f"p.clip {v_c}, {v_c}, 16")
    asm(f"sh {v_c}, 0({p_h}!)")
    asm.place(end)


# -- layouts ---------------------------------------------------------------------

@dataclass
class Buffer:
    addr: int
    count: int  # int16 elements

    def to_dict(self):
        return {"addr": self.addr, "count": self.count}


@dataclass
class KernelLayout:
    """Where a generated program expects its inputs and leaves its outputs.

    ``buffers`` maps names to int16 buffers: ``input`` and ``output`` for
    the whole program, and ``l<i>.h_prev`` / ``l<i>.c`` / ``l<i>.h`` for
    the recurrent state of LSTM layer ``i``. For a leading convolution the
    input buffer holds the zero-padded HWC image described by ``image``.
    """
    buffers: dict = field(default_factory=dict)
    layers: list = field(default_factory=list)  # per-layer summary dicts
    image: dict | None = None  # {"n_in", "h", "w", "pad_h", "pad_w"}
    output_image: dict | None = None  # {"n_out", "h", "w"} if the last layer is a conv

    def to_dict(self) -> dict:
        return {"buffers": {k: v.to_dict() for k, v in self.buffers.items()},
                "layers": list(self.layers), "image": self.image,
                "output_image": self.output_image}


def _in_size(layer) -> int:
    if isinstance(layer, FcLayer):
        return layer.c_in
    if isinstance(layer, LstmLayer):
        return layer.n_in
    return layer.n_in * layer.h_im * layer.w_im


def _out_size(layer) -> int:
    if isinstance(layer, FcLayer):
        return layer.c_out
    if isinstance(layer, LstmLayer):
        return layer.n_hidden
    return layer.n_out * layer.h_im * layer.w_im


def check_chain(layers) -> None:
    if not layers:
        raise KernelError("network has no layers")
    for i, layer in enumerate(layers):
        if not isinstance(layer, (FcLayer, LstmLayer, ConvLayer)):
            raise KernelError(f"layer {i}: unsupported type {type(layer).__name__}")
        if isinstance(layer, ConvLayer) and i:
            raise KernelError(f"layer {i}: convolutions are only supported as the first layer")
        if i and _in_size(layer) != _out_size(layers[i - 1]):
            raise KernelError(f"layer {i}: expects {_in_size(layer)} inputs, "
                              f"previous layer produces {_out_size(layers[i - 1])}")


def generate_network(layers, opt: OptLevel) -> tuple[isa.Program, KernelLayout]:
    """One program running ``layers`` back to back, then ``halt``."""
    if not isinstance(opt, OptLevel):
        opt = OptLevel(opt)
    layers = list(layers)
    check_chain(layers)
    mem = _Alloc()
    lay = KernelLayout()

    # every layer owns its input buffer; the previous layer writes into it
    inputs, lstm_state = [], {}
    for i, layer in enumerate(layers):
        if isinstance(layer, LstmLayer):
            xh = mem.reserve(2 * (layer.n_in + layer.n_hidden))
            inputs.append(xh)
            lstm_state[i] = {"h_prev": Buffer(xh + 2 * layer.n_in, layer.n_hidden)}
        elif isinstance(layer, ConvLayer):
            ph, pw = layer.h_k // 2, layer.w_k // 2
            n = layer.n_in * (layer.h_im + 2 * ph) * (layer.w_im + 2 * pw)
            inputs.append(mem.reserve(2 * n))
            lay.image = {"n_in": layer.n_in, "h": layer.h_im, "w": layer.w_im,
                         "pad_h": ph, "pad_w": pw}
        else:
            inputs.append(mem.reserve(2 * layer.c_in))
    out_addr = mem.reserve(2 * _out_size(layers[-1]))
    first = layers[0]
    if lay.image is None:
        n_input = _in_size(first)
    else:
        im = lay.image
        n_input = (im["h"] + 2 * im["pad_h"]) * (im["w"] + 2 * im["pad_w"]) * im["n_in"]
    lay.buffers["input"] = Buffer(inputs[0], n_input)
    lay.buffers["output"] = Buffer(out_addr, _out_size(layers[-1]))
    if isinstance(layers[-1], ConvLayer):
        last = layers[-1]
        lay.output_image = {"n_out": last.n_out, "h": last.h_im, "w": last.w_im}

    body = _Asm()
    body.li("sp", STACK_TOP - FRAME)
    need_sw = {}
    for i, layer in enumerate(layers):
        dst = inputs[i + 1] if i + 1 < len(layers) else out_addr
        body.comment(f"layer {i}: {type(layer).__name__}")
        if isinstance(layer, FcLayer):
            w = mem.halves(layer.weights.ravel())
            b = mem.words(layer.bias << fixp.FRAC_BITS)
            regs = _Regs()
            po = regs.take()
            body.li(po, dst)
            _emit_job(body, opt, _Job(layer.c_out, w, b, [(inputs[i], 0, layer.c_in)], po), regs)
            lay.layers.append({"kind": "fc", "c_in": layer.c_in, "c_out": layer.c_out,
                               "weights": w, "bias": b})
        elif isinstance(layer, LstmLayer):
            st = layer.stacked()
            n = layer.n_hidden
            w = mem.halves(st.weights.ravel())
            b = mem.words(st.bias << fixp.FRAC_BITS)
            gates = mem.reserve(2 * 4 * n)
            c_buf = mem.reserve(2 * n)
            regs = _Regs()
            po = regs.take()
            body.li(po, gates)
            _emit_job(body, opt, _Job(4 * n, w, b, [(inputs[i], 0, st.c_in)], po), regs)
            if not opt.use_hw_act:
                for func in ("sig", "tanh"):
                    need_sw.setdefault(func, None)
            _emit_lstm_pointwise(body, opt, n, gates, c_buf, dst)
            lstm_state[i]["c"] = Buffer(c_buf, n)
            lstm_state[i]["h"] = Buffer(dst, n)
            lay.layers.append({"kind": "lstm", "n_in": layer.n_in, "n_hidden": n,
                               "weights": w, "bias": b, "gates": gates})
        else:
            _emit_conv(body, opt, layer, inputs[i], dst, mem, lay)
        for name, buf in lstm_state.get(i, {}).items():
            lay.buffers[f"l{i}.{name}"] = buf
    body("halt")

    for func in need_sw:
        table = activation.default_table(func)
        lut = mem.words(list(table.slopes) + list(table.offsets))
        _emit_sw_pla(body, func, lut, table)

    try:
        prog = isa.assemble(body.text())
    except isa.AssemblerError as e:  # pragma: no cover - indicates a generator bug
        raise KernelError(f"generated assembly failed to assemble: {e}") from e
    return replace(prog, data=dict(mem.blobs)), lay


def _emit_conv(asm: _Asm, opt: OptLevel, layer: ConvLayer, src: int, dst: int, mem: _Alloc, lay):
    if opt.level != Level.A and layer.n_in % 2:
        raise KernelError(f"level {opt.level.value} convolution needs an even n_in, got {layer.n_in}")
    ph, pw = layer.h_k // 2, layer.w_k // 2
    wp = layer.w_im + 2 * pw
    # flipped kernel laid out [out][row][col][in]: a plain sliding dot product
    wt = layer.weights[:, :, ::-1, ::-1].transpose(0, 2, 3, 1)
    w = mem.halves(wt.ravel())
    b = mem.words(layer.bias << fixp.FRAC_BITS)
    regs = _Regs()
    po, pp, cx, cy = regs.take(4)
    asm.li(po, dst)
    asm.li(pp, src)
    asm.li(cy, layer.h_im)
    ly, lx = asm.new_label("cy"), asm.new_label("cx")
    asm.place(ly)
    asm.li(cx, layer.w_im)
    asm.place(lx)
    row_b = 2 * wp * layer.n_in
    segs = [(pp, a * row_b, layer.w_k * layer.n_in) for a in range(layer.h_k)]
    _emit_job(asm, opt, _Job(layer.n_out, w, b, segs, po), regs)
    asm(f"addi {pp}, {pp}, {2 * layer.n_in}")
    asm(f"addi {cx}, {cx}, -1")
    asm(f"bne {cx}, zero, {lx}")
    asm.addc(pp, pp, 2 * 2 * pw * layer.n_in, cx)
    asm(f"addi {cy}, {cy}, -1")
    asm(f"bne {cy}, zero, {ly}")
    lay.layers.append({"kind": "conv", "n_in": layer.n_in, "n_out": layer.n_out,
                       "h_im": layer.h_im, "w_im": layer.w_im, "h_k": layer.h_k,
                       "w_k": layer.w_k, "weights": w, "bias": b})


def generate_kernel(layer, opt: OptLevel) -> tuple[isa.Program, KernelLayout]:
    return generate_network([layer], opt)


# -- host side I/O ---------------------------------------------------------------

def write_input(mem: sim.Memory, layout: KernelLayout, x) -> None:
    x = np.asarray(x, dtype=np.int64)
    if layout.image is not None:
        im = layout.image
        if x.shape != (im["n_in"], im["h"], im["w"]):
            raise ValueError(f"image input has shape {x.shape}")
        pad = np.zeros((im["h"] + 2 * im["pad_h"], im["w"] + 2 * im["pad_w"], im["n_in"]),
                       dtype=np.int64)
        pad[im["pad_h"]:im["pad_h"] + im["h"], im["pad_w"]:im["pad_w"] + im["w"]] = x.transpose(1, 2, 0)
        x = pad.ravel()
    buf = layout.buffers["input"]
    if x.shape != (buf.count,):
        raise ValueError(f"input has {x.size} elements, expected {buf.count}")
    mem.write_halves(buf.addr, x)


def read_output(mem: sim.Memory, layout: KernelLayout) -> np.ndarray:
    buf = layout.buffers["output"]
    y = mem.read_halves(buf.addr, buf.count)
    if layout.output_image is not None:
        o = layout.output_image
        y = y.reshape(o["h"], o["w"], o["n_out"]).transpose(2, 0, 1)
    return y


def write_state(mem: sim.Memory, layout: KernelLayout, layer: int, h_prev, c_prev) -> None:
    mem.write_halves(layout.buffers[f"l{layer}.h_prev"].addr, h_prev)
    mem.write_halves(layout.buffers[f"l{layer}.c"].addr, c_prev)


def read_state(mem: sim.Memory, layout: KernelLayout, layer: int):
    h, c = layout.buffers[f"l{layer}.h"], layout.buffers[f"l{layer}.c"]
    return mem.read_halves(h.addr, h.count), mem.read_halves(c.addr, c.count)


@dataclass
class KernelRun:
    output: np.ndarray
    states: dict  # LSTM layer index -> (h_t, c_t)
    stats: sim.CycleStats
    state: sim.CoreState


def run_program(prog: isa.Program, layout: KernelLayout, x, states=None,
                config: sim.SimConfig | None = None, max_cycles: int = 10 ** 9) -> KernelRun:
    """Load inputs, simulate, and read every output buffer back."""
    core = sim.CoreState.from_program(prog)
    write_input(core.mem, layout, x)
    lstm_layers = [i for i, l in enumerate(layout.layers) if l["kind"] == "lstm"]
    states = states or {}
    for i in lstm_layers:
        n = layout.layers[i]["n_hidden"]
        h, c = states.get(i, (np.zeros(n, np.int64), np.zeros(n, np.int64)))
        write_state(core.mem, layout, i, h, c)
    res = sim.Simulator(prog, core, config).run(max_cycles)
    out = read_output(core.mem, layout)
    return KernelRun(out, {i: read_state(core.mem, layout, i) for i in lstm_layers}, res.stats, core)


def run_kernel(layers, opt: OptLevel, x, states=None, config=None) -> KernelRun:
    if isinstance(layers, (FcLayer, LstmLayer, ConvLayer)):
        layers = [layers]
    prog, layout = generate_network(layers, opt)
    return run_program(prog, layout, x, states, config)

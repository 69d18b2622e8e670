"""Assemble the two tiled inner loops and show where their cycles go.

Run: python3 demos/inner_loops.py
"""
from rvrnn import isa, sim

TILED = """
    li a0, 0x10000
    li a1, 0x10200
    li a2, 0x10400
    li a3, 0x10600
    li a4, 0x10800
    lp.setupi 0, 64, end
    lw t0, 0(a4!)
    lw t1, 0(a0!)
    lw t2, 0(a1!)
    pv.sdotsp.h s0, t1, t0
    lw t1, 0(a2!)
    pv.sdotsp.h s1, t2, t0
    lw t2, 0(a3!)
    pv.sdotsp.h s2, t1, t0
    pv.sdotsp.h s3, t2, t0
end:
    halt
"""

MERGED = """
    li a0, 0x10000
    li a1, 0x10200
    li a2, 0x10400
    li a3, 0x10600
    li a4, 0x10800
    pl.sdotsp.h.0 x0, a0, x0
    pl.sdotsp.h.1 x0, a1, x0
    lp.setupi 0, 64, end
    lw t0, 0(a4!)
    pl.sdotsp.h.0 s0, a2, t0
    pl.sdotsp.h.1 s1, a3, t0
    pl.sdotsp.h.0 s2, a0, t0
    pl.sdotsp.h.1 s3, a1, t0
end:
    halt
"""


def show(title, src):
    prog = isa.assemble(src)
    s = sim.Simulator(prog)
    res = s.run()
    (lp,) = s.loop_profile()
    per = lp["cycles"] / lp["iterations"]
    print(f"{title}: {lp['body_len']} instructions, {per:g} cycles per 8 MACs")
    print(res.stats.to_csv())


if __name__ == "__main__":
    show("output tiling", TILED)
    show("merged load and compute", MERGED)

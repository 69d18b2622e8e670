"""Reference inner loops for the tiled schedules (four outputs, 8 MACs per iteration)."""

# output tiling: one input word shared by four sum-dot-products
TILED_LOOP = """
    .alias rAddr0 a0
    .alias rAddr1 a1
    .alias rAddr2 a2
    .alias rAddr3 a3
    .alias rBAddr a4
    li rAddr0, 0x10000
    li rAddr1, 0x10200
    li rAddr2, 0x10400
    li rAddr3, 0x10600
    li rBAddr, 0x10800
    lp.setupi 0, 9, end
    lw t0, 0(rBAddr!)
    lw t1, 0(rAddr0!)
    lw t2, 0(rAddr1!)
    pv.sdotsp.h s0, t1, t0
    lw t1, 0(rAddr2!)
    pv.sdotsp.h s1, t2, t0
    lw t2, 0(rAddr3!)
    pv.sdotsp.h s2, t1, t0
    pv.sdotsp.h s3, t2, t0
end:
    halt
"""

# merged load and compute: weights stream through the SPR pair
MERGED_LOOP = """
    li a0, 0x10000
    li a1, 0x10200
    li a2, 0x10400
    li a3, 0x10600
    li a4, 0x10800
    pl.sdotsp.h.0 x0, a0, x0
    pl.sdotsp.h.1 x0, a1, x0
    lp.setupi 0, 9, end
    lw t0, 0(a4!)            # bubble: rB dependency
    pl.sdotsp.h.0 s0, a2, t0
    pl.sdotsp.h.1 s1, a3, t0
    pl.sdotsp.h.0 s2, a0, t0
    pl.sdotsp.h.1 s3, a1, t0
end:
    halt
"""

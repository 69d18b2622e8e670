"""Step a generated LSTM kernel through a short sequence on the simulator.

The simulated hidden state is compared against the bit-exact host model
and the float model after every step.

Run: python3 demos/lstm_sequence.py
"""
import numpy as np

from rvrnn import fixp
from rvrnn.kernels import (LstmLayer, OptLevel, generate_kernel, golden_lstm_float,
                           golden_lstm_q, random_q, run_program)

if __name__ == "__main__":
    rng = np.random.default_rng(0)
    layer = LstmLayer.random(8, 16, rng)
    prog, layout = generate_kernel(layer, OptLevel("D"))
    h = c = np.zeros(16, dtype=np.int64)
    hf = cf = np.zeros(16)
    for t in range(6):
        x = random_q(rng, 8) // 2
        run = run_program(prog, layout, x, {0: (h, c)})
        hq, cq = golden_lstm_q(layer, x, h, c)
        hf, cf = golden_lstm_float(layer, fixp.to_real_array(x), hf, cf)
        h, c = run.states[0]
        drift = np.abs(fixp.to_real_array(h) - hf).max()
        print(f"step {t}: {run.stats.total_cycles} cycles, bit-exact "
              f"{np.array_equal(h, hq) and np.array_equal(c, cq)}, max |h - h_float| {drift:.2e}")

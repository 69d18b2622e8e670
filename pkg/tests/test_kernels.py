import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvrnn import activation, fixp, sim
from rvrnn.kernels import (LEVELS, ConvLayer, FcLayer, KernelError, Level, LstmLayer, OptLevel,
                           generate_kernel, generate_network, golden_conv_float, golden_conv_q,
                           golden_fc_float, golden_fc_q, golden_lstm_float, golden_lstm_q,
                           golden_network_q, mac_count, random_q, run_kernel)

ONE = fixp.ONE


# -- golden models ------------------------------------------------------------------

def test_fc_identity():
    layer = FcLayer(np.eye(6, dtype=np.int64) * ONE, np.zeros(6, np.int64))
    x = np.array([-4096, -1, 0, 1, 77, 4095])
    assert list(golden_fc_q(layer, x)) == list(x)


def test_fc_zero_weights_give_bias():
    layer = FcLayer(np.zeros((3, 5), np.int64), np.array([5, -6, 7]))
    assert list(golden_fc_q(layer, np.full(5, 1000))) == [5, -6, 7]


def test_fc_half_weights():
    layer = FcLayer(np.array([[ONE // 2, ONE // 2]]), np.array([0]))
    assert golden_fc_q(layer, np.array([ONE, ONE]))[0] == ONE
    assert golden_fc_q(layer, np.array([ONE, 0]))[0] == ONE // 2


def test_fc_saturates():
    layer = FcLayer(np.full((1, 4), 4 * ONE), np.array([0]))
    assert golden_fc_q(layer, np.full(4, 4 * ONE))[0] == fixp.Q_MAX
    assert golden_fc_q(layer, np.full(4, -4 * ONE))[0] == fixp.Q_MIN


def naive_fc(w, b, x):
    return [b[j] + sum(w[j][i] * x[i] for i in range(len(x))) for j in range(len(b))]


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
def test_fc_float_against_loops(c_in, c_out, seed):
    rng = np.random.default_rng(seed)
    layer = FcLayer.random(c_in, c_out, rng)
    x = rng.uniform(-1, 1, c_in)
    ref = naive_fc(layer.weights / ONE, layer.bias / ONE, x)
    assert np.allclose(golden_fc_float(layer, x), ref, atol=1e-12)


@given(st.integers(1, 64), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_fc_quantization_error_bound(c_in, c_out, seed):
    rng = np.random.default_rng(seed)
    layer = FcLayer.random(c_in, c_out, rng)
    x = random_q(rng, c_in) // 8  # keep outputs inside the representable range
    real = golden_fc_float(layer, x / ONE)
    q = golden_fc_q(layer, x) / ONE
    assert np.all(np.abs(real) < 7.9)
    # exact products, one truncation at the end
    assert np.all(np.abs(q - real) <= 2.0 ** -12)


def test_lstm_zero_weights_closed_form():
    n = 3
    z = {g: np.zeros((n, 2), np.int64) for g in "ofic"}
    zu = {g: np.zeros((n, n), np.int64) for g in "ofic"}
    b = {g: np.zeros(n, np.int64) for g in "ofic"}
    layer = LstmLayer(2, n, z, zu, b)
    c_prev = np.array([ONE, -ONE, 0])
    h, c = golden_lstm_q(layer, np.array([1000, -1000]), np.zeros(n, np.int64), c_prev)
    half = activation.pla_eval(activation.default_table("sig"), 0)
    assert half == ONE // 2
    # gates at 0.5, candidate tanh(0) = 0: c = c_prev / 2, h = 0.5 * tanh(c)
    assert list(c) == [ONE // 2, -ONE // 2, 0]
    t = activation.default_table("tanh")
    assert list(h) == [fixp.requantize(half * activation.pla_eval(t, int(v))) for v in c]


def step_oracle(layer, x, h, c):
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    W = {g: layer.W[g] / ONE for g in "ofic"}
    U = {g: layer.U[g] / ONE for g in "ofic"}
    b = {g: layer.b[g] / ONE for g in "ofic"}
    h_new, c_new = [], []
    for j in range(layer.n_hidden):
        pre = {g: b[g][j] + sum(W[g][j][i] * x[i] for i in range(len(x)))
               + sum(U[g][j][i] * h[i] for i in range(len(h))) for g in "ofic"}
        cj = sig(pre["f"]) * c[j] + sig(pre["i"]) * np.tanh(pre["c"])
        c_new.append(cj)
        h_new.append(sig(pre["o"]) * np.tanh(cj))
    return np.array(h_new), np.array(c_new)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_lstm_float_against_step_oracle(n_in, n_h, seed):
    rng = np.random.default_rng(seed)
    layer = LstmLayer.random(n_in, n_h, rng)
    x, h, c = rng.uniform(-1, 1, n_in), rng.uniform(-1, 1, n_h), rng.uniform(-1, 1, n_h)
    got = golden_lstm_float(layer, x, h, c)
    ref = step_oracle(layer, x, h, c)
    assert np.allclose(got[0], ref[0]) and np.allclose(got[1], ref[1])


def test_lstm_quantized_tracks_float():
    # worst case over many small random cells; the measured maximum sits near 2.6e-3
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(300):
        layer = LstmLayer.random(2, 2, rng)
        x, h, c = (random_q(rng, 2) for _ in range(3))
        hq, cq = golden_lstm_q(layer, x, h, c)
        hf, cf = golden_lstm_float(layer, x / ONE, h / ONE, c / ONE)
        worst = max(worst, np.abs(hq / ONE - hf).max(), np.abs(cq / ONE - cf).max())
    assert worst <= 0.01


def test_lstm_stacked_gate_order():
    rng = np.random.default_rng(1)
    layer = LstmLayer.random(3, 2, rng)
    fc = layer.stacked()
    assert fc.weights.shape == (8, 5)
    assert np.array_equal(fc.weights[2:4, :3], layer.W["f"])
    assert np.array_equal(fc.weights[6:8, 3:], layer.U["c"])


def test_conv_1x1_identity():
    w = np.zeros((2, 2, 1, 1), np.int64)
    w[0, 0, 0, 0] = w[1, 1, 0, 0] = ONE
    layer = ConvLayer(w, np.zeros(2, np.int64), 3, 4)
    img = random_q(np.random.default_rng(0), (2, 3, 4))
    assert np.array_equal(golden_conv_q(layer, img), img)


def test_conv_delta_reproduces_kernel():
    rng = np.random.default_rng(2)
    layer = ConvLayer.random(1, 1, 5, 5, 3, 3, rng)
    img = np.zeros((1, 5, 5), np.int64)
    img[0, 2, 2] = ONE
    out = golden_conv_q(layer, img)
    # true convolution: the response to a centred impulse is the kernel itself
    assert np.array_equal(out[0, 1:4, 1:4], layer.weights[0, 0] + layer.bias[0])


def quad_loop_conv(w, bias, img):
    n_out, n_in, hk, wk = w.shape
    _, hh, ww = img.shape
    out = np.zeros((n_out, hh, ww))
    for k in range(n_out):
        for y in range(hh):
            for x in range(ww):
                s = bias[k]
                for n in range(n_in):
                    for a in range(hk):
                        for b in range(wk):
                            yy, xx = y - a + hk // 2, x - b + wk // 2
                            if 0 <= yy < hh and 0 <= xx < ww:
                                s += w[k, n, a, b] * img[n, yy, xx]
                out[k, y, x] = s
    return out


@settings(max_examples=20)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(1, 5),
       st.sampled_from([1, 3, 5]), st.sampled_from([1, 3]), st.integers(0, 2 ** 32 - 1))
def test_conv_float_against_loops(n_in, n_out, h, w, hk, wk, seed):
    rng = np.random.default_rng(seed)
    layer = ConvLayer.random(n_in, n_out, h, w, hk, wk, rng)
    img = rng.uniform(-1, 1, (n_in, h, w))
    ref = quad_loop_conv(layer.weights / ONE, layer.bias / ONE, img)
    assert np.allclose(golden_conv_float(layer, img), ref)


def test_mac_counts():
    rng = np.random.default_rng(0)
    assert mac_count(FcLayer.random(256, 256, rng)) == 65536
    assert mac_count(LstmLayer.random(16, 32, rng)) == 6144
    assert mac_count(ConvLayer.random(2, 4, 8, 8, 3, 3, rng)) == 4608


def test_layer_validation():
    with pytest.raises(ValueError):
        FcLayer(np.zeros((2, 2), np.int64), np.zeros(3, np.int64))
    with pytest.raises(ValueError):
        FcLayer(np.full((1, 1), 40000), np.zeros(1, np.int64))
    with pytest.raises(ValueError):
        ConvLayer(np.zeros((1, 1, 2, 3), np.int64), np.zeros(1, np.int64), 4, 4)
    with pytest.raises(ValueError):
        LstmLayer(2, 2, {}, {}, {})


# -- generated kernels ----------------------------------------------------------------

DIMS = st.integers(1, 24).map(lambda v: 2 * v)


@settings(max_examples=25, deadline=None)
@given(DIMS, st.integers(1, 24), st.sampled_from(list("ABCDE")), st.sampled_from([2, 4, 6, 8]),
       st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_fc_kernel_bit_exact(c_in, c_out, level, tile, k, seed):
    rng = np.random.default_rng(seed)
    layer = FcLayer.random(c_in, c_out, rng)
    x = random_q(rng, c_in)
    run = run_kernel(layer, OptLevel(level, tile_n=tile, ifm_tile=k), x)
    assert np.array_equal(run.output, golden_fc_q(layer, x))


def test_fc_odd_inputs_only_at_baseline():
    rng = np.random.default_rng(0)
    layer = FcLayer.random(7, 5, rng)
    x = random_q(rng, 7)
    assert np.array_equal(run_kernel(layer, OptLevel("A"), x).output, golden_fc_q(layer, x))
    for lv in "BCDE":
        with pytest.raises(KernelError, match="even number of inputs"):
            generate_kernel(layer, OptLevel(lv))


@pytest.mark.parametrize("level", list("ABCDE"))
def test_lstm_kernel_bit_exact(level):
    rng = np.random.default_rng(3)
    layer = LstmLayer.random(6, 10, rng)
    x, h, c = random_q(rng, 6), random_q(rng, 10), random_q(rng, 10)
    run = run_kernel(layer, OptLevel(level, tile_n=4), x, {0: (h, c)})
    hg, cg = golden_lstm_q(layer, x, h, c)
    assert np.array_equal(run.output, hg)
    assert np.array_equal(run.states[0][0], hg) and np.array_equal(run.states[0][1], cg)


@pytest.mark.parametrize("hw_act", [True, False])
def test_lstm_activation_paths_agree(hw_act):
    rng = np.random.default_rng(4)
    layer = LstmLayer.random(8, 8, rng)
    x = random_q(rng, 8)
    run = run_kernel(layer, OptLevel("C", hw_act=hw_act), x)
    assert np.array_equal(run.output, golden_lstm_q(layer, x, np.zeros(8, int), np.zeros(8, int))[0])
    assert ("pl.tanh" in run.stats.instrs) == hw_act


@pytest.mark.parametrize("level", list("ABCDE"))
def test_conv_kernel_bit_exact(level):
    rng = np.random.default_rng(6)
    layer = ConvLayer.random(2, 5, 4, 5, 3, 3, rng)
    img = random_q(rng, (2, 4, 5))
    run = run_kernel(layer, OptLevel(level, tile_n=4), img)
    assert np.array_equal(run.output, golden_conv_q(layer, img))


@pytest.mark.parametrize("level", list("ABCDE"))
def test_mixed_network_bit_exact(level):
    rng = np.random.default_rng(7)
    layers = [ConvLayer.random(2, 2, 3, 3, 3, 1, rng), FcLayer.random(18, 12, rng),
              LstmLayer.random(12, 6, rng), FcLayer.random(6, 3, rng)]
    img = random_q(rng, (2, 3, 3))
    ref, states = golden_network_q(layers, img)
    run = run_kernel(layers, OptLevel(level), img)
    assert np.array_equal(run.output, ref)
    assert np.array_equal(run.states[2][1], states[2][1])


def test_chain_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(KernelError, match="expects"):
        generate_network([FcLayer.random(4, 6, rng), FcLayer.random(8, 2, rng)], OptLevel("A"))
    with pytest.raises(KernelError, match="first layer"):
        generate_network([FcLayer.random(4, 4, rng), ConvLayer.random(1, 1, 2, 2, 1, 1, rng)],
                         OptLevel("A"))
    with pytest.raises(KernelError, match="no layers"):
        generate_network([], OptLevel("A"))


@pytest.mark.parametrize("lv, tile, k", [("C", 24, 2), ("D", 30, 2), ("E", 16, 8)])
def test_register_budget(lv, tile, k):
    with pytest.raises(KernelError, match="register budget exceeded"):
        generate_kernel(FcLayer.random(64, 32, np.random.default_rng(0)),
                        OptLevel(lv, tile_n=tile, ifm_tile=k))


def test_odd_tile_rejected_for_merged_schedule():
    with pytest.raises(KernelError, match="even tile_n"):
        generate_kernel(FcLayer.random(4, 4, np.random.default_rng(0)), OptLevel("D", tile_n=3))


def test_cycles_decrease_with_level_for_large_fc():
    rng = np.random.default_rng(8)
    layer = FcLayer.random(128, 64, rng)
    x = random_q(rng, 128)
    cycles = [run_kernel(layer, OptLevel(lv), x).stats.total_cycles for lv in "ABCDE"]
    assert cycles == sorted(cycles, reverse=True) and len(set(cycles)) == 5


@pytest.mark.parametrize("tile", [2, 4, 8])
def test_tiled_load_count(tile):
    # weights once per word, inputs once per word per tile, one bias word per output
    rng = np.random.default_rng(9)
    c_in, c_out = 64, 32
    layer = FcLayer.random(c_in, c_out, rng)
    run = run_kernel(layer, OptLevel("C", tile_n=tile), random_q(rng, c_in))
    words = c_in // 2
    assert run.stats.instrs["lw!"] == c_out * words + (c_out // tile) * words + c_out


def test_level_enum():
    assert [lv.rank for lv in LEVELS] == [0, 1, 2, 3, 4]
    assert OptLevel("B").level is Level.B
    assert OptLevel("B").use_hw_act is False and OptLevel("C").use_hw_act is True


def test_kernel_respects_sim_config():
    rng = np.random.default_rng(10)
    layer = FcLayer.random(16, 8, rng)
    x = random_q(rng, 16)
    prog, layout = generate_kernel(layer, OptLevel("D"))
    from rvrnn.kernels import run_program
    a = run_program(prog, layout, x)
    b = run_program(prog, layout, x, config=sim.SimConfig(load_use_stall=0))
    assert np.array_equal(a.output, b.output)
    assert b.stats.total_cycles < a.stats.total_cycles

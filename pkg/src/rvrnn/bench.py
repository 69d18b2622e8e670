"""Benchmark suite runner and report rendering.

A suite is a list of :class:`NetworkSpec`. Every (network, level) job
builds the layers from the spec's seed, generates one program for the
whole network, simulates it, and checks the output (and any LSTM state)
against the host golden model before its statistics are accepted.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from . import schema
from .sim import CycleStats, SimConfig

SUITE_FORMAT = "rvrnn-suite"
REPORT_FORMAT = "rvrnn-report"
FORMAT_VERSION = 1
REPORT_FORMATS = ("json", "csv", "markdown")
TOP_K = 6
# tile used by the default suite; ten accumulators keep every input word
# shared across enough outputs while still fitting the register file at
# the widest schedule
SUITE_TILE = 10


class FunctionalMismatch(RuntimeError):
    def __init__(self, network: str, level: str, detail: str):
        super().__init__(f"{network} at level {level}: {detail}")
        self.network, self.level = network, level


@dataclass
class NetworkSpec:
    name: str
    layers: list  # layer dicts as in the network schema
    seed: int = 0

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "layers": [dict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(d["name"], [dict(l) for l in d["layers"]], int(d.get("seed", 0)))

    def build(self):
        """Layers plus a network input, all drawn from ``seed`` where not given."""
        rng = np.random.default_rng(self.seed)
        layers = [_build_layer(l, rng) for l in self.layers]
        K.codegen.check_chain(layers)
        first = layers[0]
        if isinstance(first, K.ConvLayer):
            x = K.random_q(rng, (first.n_in, first.h_im, first.w_im))
        else:
            x = K.random_q(rng, (first.c_in if isinstance(first, K.FcLayer) else first.n_in,))
        states = {}
        for i, layer in enumerate(layers):
            if isinstance(layer, K.LstmLayer):
                states[i] = (K.random_q(rng, (layer.n_hidden,)), K.random_q(rng, (layer.n_hidden,)))
        return layers, x, states

    @property
    def macs(self) -> int:
        return sum(_layer_macs(l) for l in self.layers)

    def describe(self) -> list[str]:
        out = []
        for l in self.layers:
            if l["type"] == "fc":
                out.append(f"fc {l['c_in']}x{l['c_out']}")
            elif l["type"] == "lstm":
                out.append(f"lstm {l['n_in']}+{l['n_hidden']}")
            else:
                out.append(f"conv {l['n_in']}->{l['n_out']} {l['h_im']}x{l['w_im']} "
                           f"k{l['h_k']}x{l['w_k']}")
        return out


def _layer_macs(l: dict) -> int:
    if l["type"] == "fc":
        return l["c_in"] * l["c_out"]
    if l["type"] == "lstm":
        return 4 * l["n_hidden"] * (l["n_in"] + l["n_hidden"])
    return l["n_in"] * l["n_out"] * l["h_im"] * l["w_im"] * l["h_k"] * l["w_k"]


def _build_layer(l: dict, rng):
    kind = l["type"]
    if kind == "fc":
        shape = (l["c_out"], l["c_in"])
        w = np.asarray(l["weights"]) if "weights" in l else K.random_q(rng, shape)
        b = np.asarray(l["bias"]) if "bias" in l else K.random_q(rng, (l["c_out"],))
        return K.FcLayer(w, b)
    if kind == "lstm":
        n_in, n_h = l["n_in"], l["n_hidden"]
        parts = {}
        for name, shape in (("W", (n_h, n_in)), ("U", (n_h, n_h)), ("b", (n_h,))):
            given = l.get(name)
            parts[name] = {g: np.asarray(given[g]) if given else K.random_q(rng, shape) for g in K.GATES}
        return K.LstmLayer(n_in, n_h, parts["W"], parts["U"], parts["b"])
    if kind == "conv":
        shape = (l["n_out"], l["n_in"], l["h_k"], l["w_k"])
        w = np.asarray(l["weights"]) if "weights" in l else K.random_q(rng, shape)
        b = np.asarray(l["bias"]) if "bias" in l else K.random_q(rng, (l["n_out"],))
        return K.ConvLayer(w, b, l["h_im"], l["w_im"])
    raise ValueError(f"unknown layer type {kind!r}")


def fc(c_in, c_out):
    return {"type": "fc", "c_in": c_in, "c_out": c_out}


def lstm(n_in, n_hidden):
    return {"type": "lstm", "n_in": n_in, "n_hidden": n_hidden}


def conv(n_in, n_out, h_im, w_im, h_k=3, w_k=3):
    return {"type": "conv", "n_in": n_in, "n_out": n_out, "h_im": h_im, "w_im": w_im,
            "h_k": h_k, "w_k": w_k}


def mlp(name, dims, seed):
    return NetworkSpec(name, [fc(a, b) for a, b in zip(dims, dims[1:])], seed)


def default_suite() -> list[NetworkSpec]:
    """Ten synthetic networks: seven MLPs, two LSTMs and one small CNN.

    Dimensions are calibration choices, not measurements of real
    networks; they span tiny to 512-wide layers so both the overhead-bound
    and the throughput-bound regimes show up in the totals.
    """
    return [
        mlp("mlp_tiny", [16, 20, 10], 1),
        mlp("mlp_small", [64, 100, 50], 2),
        mlp("mlp_medium", [128, 200, 100, 20], 3),
        mlp("mlp_wide", [256, 256, 128, 10], 4),
        mlp("mlp_large", [512, 400, 200], 5),
        mlp("mlp_deep", [320, 500, 300, 40], 6),
        mlp("mlp_fanin", [480, 512, 10], 7),
        NetworkSpec("lstm_large", [lstm(64, 160), fc(160, 20)], 8),
        NetworkSpec("lstm_small", [lstm(32, 96), fc(96, 10)], 9),
        NetworkSpec("cnn_small", [conv(4, 8, 8, 8), fc(512, 10)], 10),
    ]


def lstm_suite() -> list[NetworkSpec]:
    """LSTM-only benchmark used to measure the activation instructions."""
    return [NetworkSpec("lstm_only", [lstm(64, 160)], 11)]


def suite_to_dict(specs) -> dict:
    return {"format": SUITE_FORMAT, "version": FORMAT_VERSION,
            "networks": [s.to_dict() for s in specs]}


def suite_from_dict(d: dict) -> list[NetworkSpec]:
    schema.validate(d, "network")
    return [NetworkSpec.from_dict(n) for n in d["networks"]]


def load_suite(path) -> list[NetworkSpec]:
    with open(path) as fh:
        return suite_from_dict(json.load(fh))


# -- running ---------------------------------------------------------------------

@dataclass
class NetworkResult:
    name: str
    macs: int
    layers: list
    stats: dict = field(default_factory=dict)  # level -> CycleStats
    verified: bool = True


@dataclass
class BenchReport:
    levels: list
    tile_n: int
    ifm_tile: int
    seed: int
    config: dict
    networks: list = field(default_factory=list)
    clock_mhz: float | None = None

    @property
    def totals(self) -> dict:
        out = {}
        for lv in self.levels:
            tot = CycleStats()
            for n in self.networks:
                tot = tot + n.stats[lv]
            out[lv] = tot
        return out

    @property
    def macs(self) -> int:
        return sum(n.macs for n in self.networks)

    def speedup(self, level: str, base: str = "A") -> float:
        t = self.totals
        return t[base].total_cycles / t[level].total_cycles

    def network_speedup(self, name: str, level: str, base: str = "A") -> float:
        n = next(n for n in self.networks if n.name == name)
        return n.stats[base].total_cycles / n.stats[level].total_cycles

    def macs_per_cycle(self, level: str) -> float:
        return self.macs / self.totals[level].total_cycles

    def top_k(self, level: str, k: int = TOP_K) -> list[tuple[str, int, int]]:
        """``k`` mnemonics with the most cycles, then ``("oth.", ...)``."""
        st = self.totals[level]
        ranked = sorted(st.cycles, key=lambda m: (-st.cycles[m], m))
        rows = [(m, st.cycles[m], st.instrs[m]) for m in ranked[:k]]
        rest = ranked[k:]
        if rest:
            rows.append(("oth.", sum(st.cycles[m] for m in rest), sum(st.instrs[m] for m in rest)))
        return rows

    def to_dict(self) -> dict:
        totals = self.totals
        return {
            "format": REPORT_FORMAT,
            "version": FORMAT_VERSION,
            "levels": list(self.levels),
            "tile_n": self.tile_n,
            "ifm_tile": self.ifm_tile,
            "seed": self.seed,
            "clock_mhz": self.clock_mhz,
            "config": dict(self.config),
            "networks": [{"name": n.name, "macs": n.macs, "layers": list(n.layers),
                          "verified": n.verified,
                          "stats": {lv: n.stats[lv].to_dict() for lv in self.levels}}
                         for n in self.networks],
            "totals": {lv: totals[lv].to_dict() for lv in self.levels},
            "speedup": {lv: self.speedup(lv) for lv in self.levels},
            "macs_per_cycle": {lv: self.macs_per_cycle(lv) for lv in self.levels},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        schema.validate(d, "report")
        rep = cls(list(d["levels"]), d["tile_n"], d["ifm_tile"], d["seed"], dict(d["config"]),
                  clock_mhz=d.get("clock_mhz"))
        for n in d["networks"]:
            rep.networks.append(NetworkResult(
                n["name"], n["macs"], list(n["layers"]),
                {lv: CycleStats.from_dict(s) for lv, s in n["stats"].items()}, n["verified"]))
        return rep


def _check(name, level, got, want, what):
    if got.shape != want.shape or not np.array_equal(got, want):
        bad = int(np.sum(np.asarray(got).ravel() != np.asarray(want).ravel())) if got.shape == want.shape else -1
        raise FunctionalMismatch(name, level, f"{what} differs from the golden model ({bad} elements)")


def run_network(spec: NetworkSpec, opt: K.OptLevel, config: SimConfig | None = None):
    """Simulate one network at one level; returns verified CycleStats."""
    layers, x, states = spec.build()
    want, want_states = K.golden_network_q(layers, x, states)
    level = opt.level.value
    try:
        out = K.run_kernel(layers, opt, x, states, config)
    except Exception as e:
        raise type(e)(f"{spec.name} at level {level}: {e}") from e
    _check(spec.name, level, out.output, want, "output")
    for i, (h, c) in want_states.items():
        _check(spec.name, level, out.states[i][0], h, f"layer {i} h_t")
        _check(spec.name, level, out.states[i][1], c, f"layer {i} c_t")
    return out.stats


def _job(args):
    spec_d, level, tile_n, ifm_tile, hw_act, cfg_d = args
    opt = K.OptLevel(level, tile_n=tile_n, ifm_tile=ifm_tile, hw_act=hw_act)
    stats = run_network(NetworkSpec.from_dict(spec_d), opt, SimConfig.from_dict(cfg_d))
    return stats.to_dict()


def run_suite(specs, levels=("A", "B", "C", "D", "E"), config: SimConfig | None = None,
              tile_n: int = SUITE_TILE, ifm_tile: int = 2, hw_act: bool | None = None,
              jobs: int = 1, seed: int | None = None, clock_mhz: float | None = None) -> BenchReport:
    """Run every network at every level.

    ``seed`` overrides each network's own seed with ``seed + index``.
    ``jobs > 1`` fans the (network, level) pairs out over processes; the
    report is identical either way.
    """
    levels = sorted({K.Level(lv).value for lv in levels}, key="ABCDE".index)
    if "A" not in levels:
        raise ValueError("level A must be included as the speedup baseline")
    config = config or SimConfig()
    specs = list(specs)
    if seed is not None:
        specs = [NetworkSpec(s.name, s.layers, seed + i) for i, s in enumerate(specs)]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("network names must be unique")
    cfg_d = config.to_dict()
    work = [(s.to_dict(), lv, tile_n, ifm_tile, hw_act, cfg_d) for s in specs for lv in levels]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_job, work))
    else:
        results = [_job(w) for w in work]
    rep = BenchReport(levels, tile_n, ifm_tile, seed if seed is not None else 0, cfg_d,
                      clock_mhz=clock_mhz)
    it = iter(results)
    for s in specs:
        rep.networks.append(NetworkResult(
            s.name, s.macs, s.describe(), {lv: CycleStats.from_dict(next(it)) for lv in levels}))
    return rep


# -- rendering -------------------------------------------------------------------

def _k(v: int) -> str:
    return f"{v / 1000:.1f}"


def _markdown(rep: BenchReport) -> str:
    lines = []
    tops = {lv: rep.top_k(lv) for lv in rep.levels}
    main = {lv: [r for r in t if r[0] != "oth."] for lv, t in tops.items()}
    other = {lv: next((r for r in t if r[0] == "oth."), None) for lv, t in tops.items()}
    depth = max(len(m) for m in main.values())
    head, rule = [], []
    for lv in rep.levels:
        head += [f"{lv} instr", "kcycles", "kinstrs"]
        rule += ["---", "---:", "---:"]
    lines.append("| " + " | ".join(head) + " |")
    lines.append("| " + " | ".join(rule) + " |")
    # "oth." always sits on the row just above the totals
    for r in range(depth + 1):
        cells = []
        for lv in rep.levels:
            row = main[lv][r] if r < len(main[lv]) else other[lv] if r == depth else None
            cells += [row[0], _k(row[1]), _k(row[2])] if row else ["", "", ""]
        lines.append("| " + " | ".join(cells) + " |")
    totals = rep.totals
    cells = []
    for lv in rep.levels:
        cells += ["Σ", _k(totals[lv].total_cycles), _k(totals[lv].total_instrs)]
    lines.append("| " + " | ".join(cells) + " |")
    cells = []
    prev = None
    for lv in rep.levels:
        s = rep.speedup(lv)
        if lv == "A":
            txt = "baseline (1x)"
        elif prev is None:
            txt = f"{s:.1f}x"
        else:
            txt = f"{s:.1f}x ({totals[prev].total_cycles / totals[lv].total_cycles:.2f}x)"
        cells += ["Impr.", txt, ""]
        prev = lv
    lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    head = ["network", "MACs"] + [f"{lv} kcycles" for lv in rep.levels] + \
        [f"{lv} speedup" for lv in rep.levels if lv != "A"]
    lines.append("| " + " | ".join(head) + " |")
    lines.append("| " + " | ".join(["---"] + ["---:"] * (len(head) - 1)) + " |")
    for n in rep.networks:
        row = [n.name, str(n.macs)] + [_k(n.stats[lv].total_cycles) for lv in rep.levels]
        row += [f"{rep.network_speedup(n.name, lv):.2f}" for lv in rep.levels if lv != "A"]
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    mpc = ", ".join(f"{lv}: {rep.macs_per_cycle(lv):.3f}" for lv in rep.levels)
    lines.append(f"MACs/cycle: {mpc}")
    if rep.clock_mhz:
        mm = ", ".join(f"{lv}: {rep.macs_per_cycle(lv) * rep.clock_mhz:.0f}" for lv in rep.levels)
        lines.append(f"MMAC/s at {rep.clock_mhz:g} MHz: {mm}")
    return "\n".join(lines) + "\n"


def _csv(rep: BenchReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["network", "level", "mnemonic", "instrs", "cycles"])
    for n in rep.networks:
        for lv in rep.levels:
            st = n.stats[lv]
            for m in sorted(st.instrs):
                w.writerow([n.name, lv, m, st.instrs[m], st.cycles[m]])
    totals = rep.totals
    for lv in rep.levels:
        st = totals[lv]
        for m in sorted(st.instrs):
            w.writerow(["TOTAL", lv, m, st.instrs[m], st.cycles[m]])
        w.writerow(["TOTAL", lv, "*", st.total_instrs, st.total_cycles])
    return buf.getvalue()


def emit_report(rep: BenchReport, fmt: str = "json") -> str:
    if fmt == "json":
        d = rep.to_dict()
        schema.validate(d, "report")
        return json.dumps(d, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        return _csv(rep)
    if fmt in ("markdown", "md"):
        return _markdown(rep)
    raise ValueError(f"unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")

"""RISC-V RNN-extension toolkit.

Q3.12 arithmetic (:mod:`fixp`), piecewise-linear activations
(:mod:`activation`), an assembler for RV32IM + Xpulp + the RNN extension
(:mod:`isa`), a cycle-approximate simulator (:mod:`sim`), golden models
and kernel generators (:mod:`kernels`) and the benchmark harness
(:mod:`bench`).
"""
from . import activation, fixp, isa, sim

__version__ = "0.1.0"

__all__ = ["activation", "fixp", "isa", "sim", "kernels", "bench", "__version__"]


def __getattr__(name):
    # kernels/bench pull in more machinery; load them on first use
    if name in ("kernels", "bench"):
        import importlib
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(name)

"""Golden models and assembly generators for FC, LSTM and conv layers."""
from .golden import (GATES, ConvLayer, FcLayer, LstmLayer, golden_conv_float, golden_conv_q,
                     golden_fc_float, golden_fc_q, golden_lstm_float, golden_lstm_q, mac_count,
                     golden_network_q, random_q)
from .codegen import (DATA_BASE, STACK_TOP, Buffer, KernelError, KernelLayout, KernelRun, Level,
                      OptLevel, generate_kernel, generate_network, read_output, read_state,
                      run_kernel, run_program, write_input, write_state)

LEVELS = tuple(Level)

__all__ = [
    "GATES", "ConvLayer", "FcLayer", "LstmLayer", "golden_conv_float", "golden_conv_q",
    "golden_fc_float", "golden_fc_q", "golden_lstm_float", "golden_lstm_q", "mac_count",
    "golden_network_q", "random_q", "DATA_BASE", "STACK_TOP", "Buffer", "KernelError", "KernelLayout", "KernelRun",
    "Level", "LEVELS", "OptLevel", "generate_kernel", "generate_network", "read_output",
    "read_state", "run_kernel", "run_program", "write_input", "write_state",
]

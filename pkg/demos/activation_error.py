"""Tabulate PLA error against range and interval count.

Run: python3 demos/activation_error.py
"""
from rvrnn import activation

if __name__ == "__main__":
    print(f"{'func':5} {'range':>5} {'M':>4} {'mse':>10} {'max err':>10}")
    for func in activation.FUNCS:
        for p in activation.error_sweep(func, [2.0, 4.0, 8.0], [8, 32, 128]):
            print(f"{p.func:5} {p.range_bound:5g} {p.m_count:4d} {p.mse:10.3e} {p.max_abs_err:10.3e}")

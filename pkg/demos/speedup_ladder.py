"""Run the built-in network suite at every level and print the report.

Run: python3 demos/speedup_ladder.py [--jobs N]
"""
import argparse

from rvrnn import bench

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    rep = bench.run_suite(bench.default_suite(), jobs=args.jobs, clock_mhz=380)
    print(bench.emit_report(rep, "markdown"))
    for lv in rep.levels[1:]:
        print(f"{lv}: {rep.speedup(lv):.2f}x over the baseline")

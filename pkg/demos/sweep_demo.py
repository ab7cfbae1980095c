"""Small parameter sweep over segmentation settings.

    python demos/sweep_demo.py

Four synthetic cases (three with movers, one background only) are segmented
for every combination in a 2 x 2 x 2 grid.  Combos that fall below the IoU
threshold on three consecutive slices are dropped, the rest are ranked by
their mean case score, and the most frequent value of each parameter among
the best few is reported.
"""
from celltrack.config import parse_config
from celltrack.sweep import grid_search, synthetic_cases

BASE = """
filter.rho=1
filter.max_outer=1
filter.sor_omega=1.2
filter.sor_tol=1e-2
subsurf.max_steps=3
subsurf.sor_tol=1e-2
otsu.s=21
"""

GRID = {
    "filter.tau_f": ["0.1", "0.25"],
    "otsu.delta": ["0.3", "0.8"],
    "otsu.s": ["15", "31"],
}


def main():
    cases = synthetic_cases(frames=5, size=64)
    res = grid_search(GRID, cases, parse_config(BASE), top_n=3)
    print(f"{'combo':>5}  {'M':>6}  excluded  values")
    for r in res.results:
        vals = ", ".join(f"{k}={v}" for k, v in r.values.items())
        print(f"{r.index:>5}  {r.mean:6.3f}  {'yes' if r.excluded else 'no ':>8}  {vals}")
    print("\nmost frequent among the top 3:")
    for k, v in res.modes.items():
        print(f"  {k} = {v}   counts {res.frequencies[k]}")


if __name__ == "__main__":
    main()

"""Gap between a solution and its averaged-coefficient comparison function as the oscillation shrinks."""

import argparse

from ndphase import ProblemSpec, Region, make_field, make_kernel, solve_averaged_comparison, solve_dirichlet


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    ap.add_argument("--frequency", type=float, default=4.0)
    ap.add_argument("--n", type=int, default=272)
    args = ap.parse_args()
    spec = ProblemSpec(2, 3, 0.7, 0.4, lam=2)
    g = make_field({"name": "cosine", "amplitude": 0.3, "frequency": 0.25})
    print("delta,gap")
    for d in args.deltas:
        kernel = make_kernel({"name": "oscillating", "amplitude": d, "frequency": args.frequency}, "constant")
        u = solve_dirichlet(spec, kernel, 0.0, g, domain=Region((0.0,), 4.0), halfwidth=4.25, n=args.n).solution
        _, gap = solve_averaged_comparison(u, spec, kernel)
        print(f"{d:g},{gap:.6e}")


if __name__ == "__main__":
    main()

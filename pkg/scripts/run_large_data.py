"""Sweep the sample size for a fixed teacher and print the distance columns.

Usage: python3 scripts/run_large_data.py [--teacher T.json] [--out DIR] [--seed S]
"""
import argparse
from pathlib import Path

from krnet.experiments import ExperimentConfig, large_data_experiment
from krnet.io import read_measure

HERE = Path(__file__).resolve().parent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--teacher", default=str(HERE.parent / "tests" / "fixtures" / "teacher2.json"))
    ap.add_argument("--grid", type=int, nargs="+", default=[100, 400, 1600, 6400])
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/large_data")
    args = ap.parse_args(argv)
    cfg = ExperimentConfig(seed=args.seed, teacher=read_measure(args.teacher), N_grid=tuple(args.grid),
                           noise_std=args.noise, output_dir=args.out)
    rows = large_data_experiment(cfg)
    print(f"{'N':>6} {'beta':>10} {'kru_dist':>10} {'unif_err':>10} {'G(mu)':>10} {'G(teacher)':>10} atoms")
    for r in rows:
        print(f"{r['N']:>6} {r['beta']:>10.3e} {r['kru_distance_to_reference']:>10.4f} "
              f"{r['uniform_error_R']:>10.4f} {r['solution_norm']:>10.5f} {r['teacher_norm']:>10.5f} {r['atoms']}")
    print(f"wrote {Path(args.out) / 'large_data.csv'}")


if __name__ == "__main__":
    main()

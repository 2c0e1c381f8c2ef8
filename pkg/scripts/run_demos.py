"""Run every bundled demo, write its JSON report and print a one-line summary."""
import argparse
import time
from pathlib import Path

from krnet.demos import DEMOS
from krnet.io import write_json


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/demos")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, fn in DEMOS.items():
        t0 = time.perf_counter()
        report = fn()
        dt = time.perf_counter() - t0
        write_json(out / f"demo_{name}.json", report)
        print(f"{name:<12} ok in {dt:6.2f}s -> {out / f'demo_{name}.json'}")


if __name__ == "__main__":
    main()

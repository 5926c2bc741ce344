"""Write a synthetic corpus plus scripted doctor and evaluator fixtures.

    python3 scripts/make_synthetic_corpus.py --out demo --cases 6
"""

from __future__ import annotations

import argparse

from consult.synthetic import write_demo


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="demo")
    parser.add_argument("--cases", type=int, default=6)
    args = parser.parse_args()
    for name, path in write_demo(args.out, args.cases).items():
        print(f"{name:>10}: {path}")


if __name__ == "__main__":
    main()

"""Recompute F1 from the published recall/precision pairs of the comparison table.

Corpus-level F1 taken as the harmonic mean of corpus-level P and R
reproduces the reported F1 to rounding.
"""

from __future__ import annotations

from consult.evaluation import f1

ROWS = [
    ("GPT-3.5", 19.19, 37.39, 25.37),
    ("Wenxin-4.0", 22.03, 31.44, 25.91),
    ("GPT-4", 21.64, 50.26, 30.26),
    ("Deepseek-V3", 24.78, 50.21, 33.18),
    ("Qwen-Max", 22.42, 43.38, 29.56),
    ("Gated system (Deepseek-V3)", 31.68, 50.92, 39.06),
    ("Gated system (Qwen-Max)", 33.41, 50.61, 40.25),
    ("GPT-4+GT", 38.90, 58.97, 46.88),
]


def main() -> None:
    print(f"{'row':<26} {'R':>6} {'P':>6} {'F1 pub':>7} {'F1 calc':>8} {'diff':>6}")
    for name, r, p, published in ROWS:
        calc = f1(p, r)
        print(f"{name:<26} {r:>6.2f} {p:>6.2f} {published:>7.2f} {calc:>8.4f} {calc - published:>+6.3f}")


if __name__ == "__main__":
    main()

"""Brute-force reference computations, written independently of the package code."""

from __future__ import annotations

import math
import random
from fractions import Fraction

ALPHABET = "ABCDEF"


def random_corpus(rng: random.Random, max_cases: int = 10):
    """(predicted, truth) set pairs over a six-symbol alphabet; truth never empty."""
    cases = []
    for _ in range(rng.randint(1, max_cases)):
        pred = {c for c in ALPHABET if rng.random() < 0.4}
        truth = {c for c in ALPHABET if rng.random() < 0.4} or {rng.choice(ALPHABET)}
        cases.append((pred, truth))
    return cases


def brute_metrics(cases):
    """Micro and macro P/R/F1 by explicit element-wise counting."""
    hits = pred_total = truth_total = 0
    ps, rs, fs = [], [], []
    for pred, truth in cases:
        h = 0
        for sym in pred:
            if sym in truth:
                h += 1
        hits += h
        pred_total += len(pred)
        truth_total += len(truth)
        p = Fraction(h, len(pred)) if pred else Fraction(0)
        r = Fraction(h, len(truth))
        ps.append(p)
        rs.append(r)
        fs.append(Fraction(0) if p + r == 0 else 2 * p * r / (p + r))
    mp = Fraction(hits, pred_total) if pred_total else Fraction(0)
    mr = Fraction(hits, truth_total)
    mf = Fraction(0) if mp + mr == 0 else 2 * mp * mr / (mp + mr)
    n = len(cases)
    return {
        "micro_precision": float(mp), "micro_recall": float(mr), "micro_f1": float(mf),
        "macro_precision": float(sum(ps) / n), "macro_recall": float(sum(rs) / n),
        "macro_f1": float(sum(fs) / n),
    }


def brute_mean_stderr(values):
    """Mean and standard error of the mean from exact integer sums of x and x squared."""
    n = len(values)
    total = sum(values)
    mean = total / n
    if n == 1:
        return mean, 0.0
    # n * sum(x^2) - (sum x)^2 is an exact integer, so the variance has one rounding
    spread = n * sum(v * v for v in values) - total * total
    var = spread / (n * (n - 1))
    return mean, math.sqrt(var) / math.sqrt(n)

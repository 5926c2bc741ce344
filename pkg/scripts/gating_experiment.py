"""Turn-count shift caused by sub-goal gating, on scripted eager doctors.

An eager doctor tries to close the consultation as early as the FSM lets
it. With gating off it finishes almost at once; with gating on every
blocked attempt is bounced back until the mandatory categories are covered.
The thorough doctor is shown as a reference. Runs fully offline.

    python3 scripts/gating_experiment.py --cases 12 --out runs/gating
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from consult.backend import ScriptedBackend
from consult.evaluation import turn_histogram
from consult.harness import Backends, RunConfig, load_transcripts, run_benchmark
from consult.synthetic import eager_doctor_script, synthetic_cases, thorough_doctor_script

ARMS = {
    "eager, gating off": (eager_doctor_script, False),
    "eager, gating on": (eager_doctor_script, True),
    "thorough, gating on": (thorough_doctor_script, True),
}


def run_arm(records, script, gating: bool, out: Path) -> dict:
    def factory(record):
        return Backends(ScriptedBackend(script(record)))

    run_benchmark(RunConfig("synthetic", out_dir=str(out), gating=gating), factory, records=records)
    transcripts = list(load_transcripts(out).values())
    hist = turn_histogram(transcripts)
    hist["goal_unmet_turns"] = sum(r.goal_unmet for t in transcripts for r in t.turns)
    return hist


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cases", type=int, default=12)
    parser.add_argument("--out", default="runs/gating")
    args = parser.parse_args()

    records = synthetic_cases(args.cases)
    results = {}
    for i, (label, (script, gating)) in enumerate(ARMS.items()):
        results[label] = run_arm(records, script, gating, Path(args.out) / f"arm{i}")

    print(f"{'arm':<22} {'mode':>5} {'mean':>6} {'var':>6} {'blocked':>8}  histogram")
    for label, h in results.items():
        print(f"{label:<22} {h['mode']:>5} {h['mean']:>6.2f} {h['variance']:>6.2f} "
              f"{h['goal_unmet_turns']:>8}  {h['histogram']}")
    summary = Path(args.out) / "gating_summary.json"
    summary.write_text(json.dumps({k: {**v, "histogram": {str(t): c for t, c in v["histogram"].items()}}
                                   for k, v in results.items()}, indent=2) + "\n", encoding="utf-8")
    print(f"\nwritten {summary}")


if __name__ == "__main__":
    main()

"""Check that patient disruptions leave the consultation trajectory untouched.

Runs the same scripted doctors twice, with disruption rate 0 and rate 1,
and compares the applied actions, final phases and diagnostic results.

    python3 scripts/disruption_experiment.py --cases 6 --out runs/disruption
"""

from __future__ import annotations

import argparse
from pathlib import Path

from consult.agents import PatientPolicy
from consult.backend import ScriptedBackend
from consult.harness import Backends, RunConfig, load_transcripts, run_benchmark
from consult.synthetic import synthetic_cases, thorough_doctor_script


def run(records, rate: float, out: Path, seed: int):
    def factory(record):
        return Backends(ScriptedBackend(thorough_doctor_script(record, retrospective=True)))

    cfg = RunConfig("synthetic", out_dir=str(out), patient=PatientPolicy(True, rate, seed))
    run_benchmark(cfg, factory, records=records)
    return load_transcripts(out)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cases", type=int, default=6)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/disruption")
    args = parser.parse_args()

    records = synthetic_cases(args.cases)
    calm = run(records, 0.0, Path(args.out) / "rate0", args.seed)
    noisy = run(records, 1.0, Path(args.out) / "rate1", args.seed)
    same = 0
    for case_id, a in calm.items():
        b = noisy[case_id]
        identical = ([r.action for r in a.turns] == [r.action for r in b.turns]
                     and a.final_phase == b.final_phase
                     and a.report.diagnostic_results == b.report.diagnostic_results)
        changed = sum(x.observation != y.observation for x, y in zip(a.turns, b.turns))
        same += identical
        print(f"{case_id:<12} trajectory {'identical' if identical else 'DIFFERENT':<10} "
              f"observations changed: {changed}")
    print(f"\n{same}/{len(calm)} cases unaffected by disruptions")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Smoke test for the hetplan_py extension module.

Builds the cdylib if needed, imports it, and drives the main operations
end to end on the bundled fixtures: candidate proposal, cost-model
queries, dynamic bucketing, the minimax dispatch solver, deployment
planning, per-step dispatch, and a short simulation.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "hetplan" / "fixtures"


def build_and_import():
    so = ROOT / "target" / "release" / "libhetplan_py.so"
    if not so.exists():
        print("building hetplan-py (cargo build --release -p hetplan-py)...")
        subprocess.run(
            ["cargo", "build", "--release", "-p", "hetplan-py"],
            cwd=ROOT,
            check=True,
        )
    staging = Path(tempfile.mkdtemp(prefix="hetplan_py_"))
    shutil.copy(so, staging / "hetplan_py.so")
    sys.path.insert(0, str(staging))
    import hetplan_py

    return hetplan_py


def main():
    hp = build_and_import()
    failures = 0

    def check(name, ok, detail=""):
        nonlocal failures
        status = "PASS" if ok else "FAIL"
        print(f"{status} {name}{': ' + detail if detail else ''}")
        if not ok:
            failures += 1

    # Candidate proposal returns the per-group throughput winners.
    cands = hp.propose_candidates(str(FIXTURES / "throughput_table.csv"))
    pairs = {(c["tp"], c["pp"]) for c in cands}
    check(
        "propose_candidates",
        len(cands) == 8 and (2, 4) in pairs and (8, 1) in pairs,
        f"{len(cands)} candidates",
    )

    # Cost model anchors: ATB near the profiled throughputs.
    model = hp.CostModel.load(str(FIXTURES / "cost_profile.csv"))
    atb = model.atb(2, 4, 8192)
    check("cost_model_atb", abs(atb / 3.79 - 1.0) < 0.10, f"ATB(2,4 @8192)={atb:.3f}")
    t1 = model.micro_time(1, 1, 1, 2048)
    check(
        "cost_model_micro_time",
        abs(t1 / (2048 / 5.11) - 1.0) < 0.10,
        f"t(1,2048)={t1:.1f}s",
    )

    # Dynamic bucketing: one boundary per occupied band, zero cross padding.
    lengths = [100] * 5 + [1000]
    bounds, cross, intra = hp.dynamic_buckets(lengths, 2, grid_step=256, grid_max=2048)
    check("dynamic_buckets", bounds == [256, 1024] and cross == 0, f"{bounds}")

    # Minimax solver on a toy instance: two single-replica groups sharing
    # one bucket of 6 sequences with costs 1 and 2 -> split 4/2, time 4.
    sol = hp.solve_minimax(
        [
            {"replicas": 1, "pp_stages": 1, "unit_costs": [1.0], "chunk_sizes": [8]},
            {"replicas": 1, "pp_stages": 1, "unit_costs": [2.0], "chunk_sizes": [8]},
        ],
        [6],
    )
    check(
        "solve_minimax",
        sol["exact"] and math.isclose(sol["objective"], 4.0),
        f"objective={sol['objective']}",
    )

    # Deployment planning on the 16-GPU reference problem.
    plan = hp.plan_deployment(
        str(FIXTURES / "reference_profile.csv"),
        str(FIXTURES / "reference_workload.toml"),
        16,
        r=4,
        seed=7,
    )
    check(
        "plan_deployment",
        sorted(plan["plan"]) == [(1, 1, 4), (2, 1, 2), (8, 1, 1)],
        f"plan={plan['plan']} t={plan['objective']:.1f}s",
    )

    # Balanced dispatch beats length-based on the same sampled step.
    common = dict(seed=7, step=0, r=4)
    balanced = hp.dispatch(
        str(FIXTURES / "reference_profile.csv"),
        str(FIXTURES / "gap_workload.toml"),
        plan["plan"],
        mode="balanced",
        **common,
    )
    by_length = hp.dispatch(
        str(FIXTURES / "reference_profile.csv"),
        str(FIXTURES / "gap_workload.toml"),
        plan["plan"],
        mode="by-length",
        **common,
    )
    check(
        "dispatch_dominance",
        balanced["objective"] <= by_length["objective"],
        f"balanced {balanced['objective']:.1f} <= by-length {by_length['objective']:.1f}",
    )

    # Short simulation: deterministic and self-consistent.
    args = (
        str(FIXTURES / "reference_profile.csv"),
        str(FIXTURES / "gap_workload.toml"),
        16,
        "lobra",
    )
    rep1 = hp.simulate(*args, steps=5, seed=11, r=4)
    rep2 = hp.simulate(*args, steps=5, seed=11, r=4)
    total = sum(row[2] for row in rep1["steps"])
    check(
        "simulate_deterministic",
        rep1 == rep2 and math.isclose(total, rep1["total_gpu_seconds"]),
        f"total_gpu_seconds={rep1['total_gpu_seconds']:.1f}",
    )

    if failures:
        print(f"{failures} smoke checks FAILED")
        return 1
    print("all smoke checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())

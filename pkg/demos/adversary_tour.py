"""Run one epoch under each adversary behavior and print throughput and safety counters."""
from rspc.harness.config import ScenarioConfig
from rspc.harness.metrics import summarize
from rspc.harness.runner import simulate

BASE = ScenarioConfig(N=60, W=200, f=5, epochs=2)

for behavior in ("none", "crash", "silent", "equivocate", "join_leave"):
    cfg = BASE.replace(adversary=behavior, churn_rate=2 if behavior == "join_leave" else 0)
    result = simulate(cfg, seed=0)
    rep = summarize(result.epochs)
    c = rep.counters
    print(f"{behavior:>11}: decided {rep.decided:4d}/{rep.submitted:4d}  "
          f"{rep.throughput_tps:8.0f} tx/s  forks={c.forks} double_spends={c.double_spends} "
          f"migration={c.migration} union_mismatches={result.union_mismatches}")

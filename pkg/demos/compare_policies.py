"""Run every caching policy on the same demand and compare the outcome.

Uses the small config so the whole comparison takes a minute or two.  All
policies see identical request sets because demand is seeded per set.
"""
import dataclasses
from pathlib import Path

from vvcache import load_config, run_experiment

here = Path(__file__).parent
base = load_config(here / "configs" / "small.ini")

print(f"{'policy':>6}  {'Y-PSNR dB':>9}  {'hit ratio':>9}  {'backhaul GB':>11}  {'time s':>6}")
for policy in ("noop", "fifo", "lru", "lfu", "dqn", "oracle"):
    rec = run_experiment(dataclasses.replace(base, policy=policy))
    print(f"{policy:>6}  {rec.mean_psnr:9.3f}  {rec.hit_ratio:9.4f}  {rec.backhaul_gb:11.3f}  "
          f"{rec.runtime_s:6.1f}")

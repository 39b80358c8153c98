"""Hit ratio of LFU as video popularity becomes more skewed.

A larger Zipf exponent concentrates demand on fewer videos, so a cache of
fixed size serves a growing share of requests.
"""
from pathlib import Path

from vvcache import load_config, run_sweep

cfg = load_config(Path(__file__).parent / "configs" / "small.ini")
for value, rec in run_sweep(cfg, "eta_v", [0.5, 1.0, 1.5], policies=["lfu", "lru"]):
    print(f"eta_v={value:.1f} {rec.policy}: hit ratio {rec.hit_ratio:.4f}, "
          f"Y-PSNR {rec.mean_psnr:.3f} dB")

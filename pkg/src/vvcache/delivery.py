"""Per-GOP delivery under the display-deadline budget, and backhaul accounting.

Every tile costs ``size * delay`` seconds, where the delay is ``d_sbs`` for a
tile served from the SBS cache and ``d_mbs`` for one fetched over the MBS
backhaul.  The tiles delivered for one GOP must fit into ``t_disp``.  All
budget arithmetic is exact (rationals scaled to integers), so a request that
lands exactly on the deadline is admitted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable

from .content import ConfigError, Layer, LibraryConfig, TileKey, exact, layer_tile_size


@dataclass(frozen=True)
class DelayConfig:
    d_sbs: Fraction = Fraction(1, 6)  # s/Mbit, cache -> user
    d_mbs: Fraction = Fraction(1, 2)  # s/Mbit, backhaul -> user
    t_disp: Fraction = Fraction(1)  # s

    def __post_init__(self):
        for name in ("d_sbs", "d_mbs", "t_disp"):
            object.__setattr__(self, name, exact(getattr(self, name)))
        if not 0 < self.d_sbs < self.d_mbs:
            raise ConfigError("need 0 < d_sbs < d_mbs")
        if self.t_disp <= 0:
            raise ConfigError("t_disp must be positive")


@dataclass(frozen=True)
class DeliveryPlan:
    delivered: frozenset
    dropped: frozenset
    from_cache: frozenset  # delivered tiles that were served by the SBS cache
    backhaul_mbit: float
    elapsed: Fraction


class _Budget:
    """Tile costs and the deadline as integers on a common time unit."""

    def __init__(self, delay: DelayConfig, cfg: LibraryConfig):
        costs = {}
        for layer in (Layer.BASE, Layer.ENHANCEMENT):
            size = layer_tile_size(cfg, layer)
            costs[layer, True] = size * delay.d_sbs
            costs[layer, False] = size * delay.d_mbs
        denom = math.lcm(delay.t_disp.denominator,
                         *(c.denominator for c in costs.values()))
        self.denom = denom
        self.cost = {k: int(c * denom) for k, c in costs.items()}
        self.limit = int(delay.t_disp * denom)
        sizes = [layer_tile_size(cfg, layer) for layer in Layer]
        self.size_den = math.lcm(*(x.denominator for x in sizes))
        self.size_num = [int(x * self.size_den) for x in sizes]


_BUDGETS: dict = {}


def _budget(delay: DelayConfig, cfg: LibraryConfig) -> _Budget:
    # keyed by identity: hashing the Fraction fields on every GOP is slow
    hit = _BUDGETS.get((id(delay), id(cfg)))
    if hit is None or hit[0] is not delay or hit[1] is not cfg:
        if len(_BUDGETS) > 256:
            _BUDGETS.clear()
        hit = (delay, cfg, _Budget(delay, cfg))
        _BUDGETS[id(delay), id(cfg)] = hit
    return hit[2]


def schedule_gop_delivery(requested: Iterable[TileKey], cached, delay: DelayConfig,
                          cfg: LibraryConfig) -> DeliveryPlan:
    """Greedily admit the requested tiles of one GOP until the deadline.

    Admission order: base tiles before enhancement tiles; within a layer,
    cache-served before backhaul-served; then ascending tile index.  The first
    tile that would overrun ``t_disp`` is dropped together with every later
    tile.  Dropped tiles are never retried.

    Args:
      requested: tile keys of a single GOP.
      cached: predicate ``TileKey -> bool`` or a container of cached keys.
      delay: per-Mbit delays and the deadline.
      cfg: library config (tile sizes).
    """
    is_cached: Callable[[TileKey], bool] = cached if callable(cached) else cached.__contains__
    b = _budget(delay, cfg)
    order = sorted(((k.layer, not hit, k.tile, k, hit)
                    for k in requested for hit in (bool(is_cached(k)),)),
                   key=lambda t: t[:3])
    used = 0
    n = 0
    for layer, _, _, _, hit in order:
        c = b.cost[layer, hit]
        if used + c > b.limit:
            break
        used += c
        n += 1
    head = order[:n]
    n_remote = [0, 0]
    for t in head:
        if not t[4]:
            n_remote[t[0]] += 1
    backhaul = n_remote[0] * b.size_num[0] + n_remote[1] * b.size_num[1]
    return DeliveryPlan(delivered=frozenset(t[3] for t in head),
                        dropped=frozenset(t[3] for t in order[n:]),
                        from_cache=frozenset(t[3] for t in head if t[4]),
                        backhaul_mbit=backhaul / b.size_den,
                        elapsed=Fraction(used, b.denom))


def backhaul_fetch_size(tiles: Iterable[TileKey], cfg: LibraryConfig) -> float:
    """Total size in Mbit of ``tiles``."""
    return float(sum((layer_tile_size(cfg, k.layer) for k in tiles), Fraction(0)))

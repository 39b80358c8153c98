"""LFU / LRU / FIFO comparison schemes, plus test-only NoOp, random and oracle policies.

The three eviction baselines always admit a missed video.  Their victim is an
empty slot if one exists (lowest index first), otherwise the slot minimising
their bookkeeping key, ties to the lowest slot.  For a cached video they
rewrite the high-quality tiles to the predicted viewport: each fetched tile
replaces the first cached tile that lies outside the prediction.
"""
from __future__ import annotations

import numpy as np

from .cache import num_actions
from .env import TILE, VIDEO, DecisionContext, Policy


def follow_prediction(ctx: DecisionContext) -> int:
    """Tile action that moves the cached tiles towards the predicted viewport."""
    pred = set(ctx.predicted)
    vv = ctx.cache.vv[ctx.slot]
    for j, tile in enumerate(vv):
        if tile not in pred:
            return 1 + ctx.capacity + ctx.slot * ctx.k + j
    return 0


class EvictionBaseline(Policy):
    """Bookkeeping shared by the baselines; subclasses pick the victim key."""

    name = "baseline"

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.count = np.zeros(capacity, dtype=np.int64)  # requests while cached
        self.last_used = np.full(capacity, -1, dtype=np.int64)
        self.inserted = np.full(capacity, -1, dtype=np.int64)
        self._clock = 0

    def begin_set(self, env, req):
        self._clock = req.index
        slot = env.cache.slot_of(req.video)
        if slot is not None:
            self.count[slot] += 1
            self.last_used[slot] = req.index

    def victim_key(self) -> np.ndarray:
        raise NotImplementedError

    def choose_victim(self, videos: np.ndarray) -> int:
        empty = np.flatnonzero(videos < 0)
        if empty.size:
            return int(empty[0])
        return int(np.argmin(self.victim_key()))

    def decide(self, ctx: DecisionContext) -> int:
        if ctx.kind == TILE:
            return follow_prediction(ctx)
        slot = self.choose_victim(ctx.cache.videos)
        self.count[slot] = 1
        self.last_used[slot] = self._clock
        self.inserted[slot] = self._clock
        return 1 + slot


class LFUPolicy(EvictionBaseline):
    """Evicts the cached video with the fewest requests since it was cached."""
    name = "lfu"

    def victim_key(self):
        return self.count


class LRUPolicy(EvictionBaseline):
    """Evicts the cached video requested least recently."""
    name = "lru"

    def victim_key(self):
        return self.last_used


class FIFOPolicy(EvictionBaseline):
    """Evicts the video cached earliest; hits do not refresh its position."""
    name = "fifo"

    def victim_key(self):
        return self.inserted


class NoOpPolicy(Policy):
    name = "noop"

    def decide(self, ctx):
        return 0


class RandomPolicy(Policy):
    """Uniform over legal actions."""
    name = "random"

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def decide(self, ctx):
        if ctx.kind == VIDEO:
            return int(self.rng.integers(ctx.capacity + 1))
        j = int(self.rng.integers(ctx.k + 1))
        return 0 if j == 0 else ctx.capacity + ctx.slot * ctx.k + j


class OraclePolicy(Policy):
    """Caches the globally most requested videos and, per video, its most
    requested tiles, both counted offline over the full workload."""
    name = "oracle"

    def __init__(self, capacity: int, k: int, requests, cfg):
        from .cache import RequestHistory
        requests = list(requests)
        video_counts = np.bincount([r.video for r in requests], minlength=cfg.num_videos)
        order = np.lexsort((np.arange(cfg.num_videos), -video_counts))
        self.top_videos = set(int(v) for v in order[:capacity])
        marks = np.zeros((cfg.num_videos, cfg.num_tiles), dtype=np.int64)
        hist = RequestHistory(cfg, 1, 1)
        for r in requests:
            marks[r.video] += hist.tile_marks(r)
        self.top_tiles = {}
        for v in self.top_videos:
            tile_order = np.lexsort((np.arange(cfg.num_tiles), -marks[v]))
            self.top_tiles[v] = set(int(t) for t in tile_order[:k])
        self.n_actions = num_actions(capacity, k)

    def decide(self, ctx):
        videos = ctx.cache.videos
        if ctx.kind == VIDEO:
            if ctx.video not in self.top_videos:
                return 0
            for i, v in enumerate(videos):
                if v < 0 or int(v) not in self.top_videos:
                    return 1 + i
            return 0
        best = self.top_tiles.get(ctx.video)
        if best is None or ctx.candidate not in best:
            return 0
        for j, tile in enumerate(ctx.cache.vv[ctx.slot]):
            if int(tile) not in best:
                return 1 + ctx.capacity + ctx.slot * ctx.k + j
        return 0


def make_baseline(name: str, capacity: int) -> Policy:
    table = {"lfu": LFUPolicy, "lru": LRUPolicy, "fifo": FIFOPolicy}
    if name == "noop":
        return NoOpPolicy()
    try:
        return table[name](capacity)
    except KeyError:
        raise ValueError(f"unknown baseline {name!r}") from None


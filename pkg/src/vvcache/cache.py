"""SBS cache contents, request-history windows and MDP feature extraction.

The cache has ``C`` video slots.  A filled slot holds every base-layer tile of
one video and a virtual viewport of ``k`` high-quality tiles shared by all of
that video's GOPs.
"""
from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .content import LibraryConfig, VirtualViewport, viewport_tile_matrix
from .workload import RequestSet


class ContractViolation(RuntimeError):
    """An action or policy broke the caching environment's contract."""


# ---------------------------------------------------------------- actions

@dataclass(frozen=True)
class NoOp:
    pass


@dataclass(frozen=True)
class ReplaceVideo:
    slot: int


@dataclass(frozen=True)
class ReplaceTile:
    slot: int
    tile_slot: int


def num_actions(capacity: int, k: int) -> int:
    return 1 + capacity + k * capacity


def action_index(action, capacity: int, k: int) -> int:
    """Flat index: 0 NoOp, 1..C ReplaceVideo, C+1.. ReplaceTile row-major."""
    if isinstance(action, NoOp):
        return 0
    if isinstance(action, ReplaceVideo):
        return 1 + action.slot
    if isinstance(action, ReplaceTile):
        return 1 + capacity + action.slot * k + action.tile_slot
    raise TypeError(f"not an action: {action!r}")


def decode_action(index: int, capacity: int, k: int):
    if index == 0:
        return NoOp()
    if 1 <= index <= capacity:
        return ReplaceVideo(index - 1)
    if capacity < index < num_actions(capacity, k):
        slot, j = divmod(index - 1 - capacity, k)
        return ReplaceTile(slot, j)
    raise IndexError(f"action index {index} out of range")


# ------------------------------------------------------------ cache state

class CacheState:
    """Immutable snapshot of the cache.

    ``videos[i]`` is the video in slot ``i`` (-1 when empty) and ``vv[i]`` its
    virtual-viewport tiles by tile-slot.
    """

    __slots__ = ("videos", "vv", "_slot_of", "_gather")

    def __init__(self, videos, vv):
        self.videos = np.asarray(videos, dtype=np.int64)
        self.vv = np.asarray(vv, dtype=np.int64).reshape(len(self.videos), -1)
        self.videos.setflags(write=False)
        self.vv.setflags(write=False)
        self._slot_of = {int(v): i for i, v in enumerate(self.videos) if v >= 0}
        self._gather = None
        if len(self._slot_of) != int((self.videos >= 0).sum()):
            raise ContractViolation("a video occupies two slots")
        for i in self._slot_of.values():
            if len(set(self.vv[i].tolist())) != self.k or self.vv[i].min() < 0:
                raise ContractViolation(f"slot {i} needs {self.k} distinct tiles")

    @classmethod
    def _unchecked(cls, videos, vv, slot_of) -> CacheState:
        self = object.__new__(cls)
        videos.setflags(write=False)
        vv.setflags(write=False)
        self.videos, self.vv, self._slot_of = videos, vv, slot_of
        self._gather = None
        return self

    def gather_index(self, num_videos: int, num_tiles: int):
        """Row indices into per-video and flattened per-(video, tile) arrays.

        Empty slots point at the padding row ``num_videos``.
        """
        g = self._gather
        if g is None or g[0] != num_videos or g[1] != num_tiles:
            rows = np.where(self.videos >= 0, self.videos, num_videos)
            tiles = np.where(self.vv >= 0, self.vv, 0)
            flat = (rows[:, None] * num_tiles + tiles).ravel()
            g = self._gather = (num_videos, num_tiles, rows, flat)
        return g[2], g[3]

    @classmethod
    def empty(cls, capacity: int, k: int) -> CacheState:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        return cls(np.full(capacity, -1), np.full((capacity, k), -1))

    @property
    def capacity(self) -> int:
        return len(self.videos)

    @property
    def k(self) -> int:
        return self.vv.shape[1]

    @property
    def slots(self) -> list:
        return [None if v < 0 else (int(v), VirtualViewport(tuple(int(t) for t in self.vv[i])))
                for i, v in enumerate(self.videos)]

    def slot_of(self, video: int) -> int | None:
        return self._slot_of.get(video)

    def __contains__(self, video) -> bool:
        return video in self._slot_of

    def tiles_of(self, video: int) -> frozenset:
        s = self._slot_of.get(video)
        return frozenset() if s is None else frozenset(int(t) for t in self.vv[s])

    def __eq__(self, other):
        return (isinstance(other, CacheState) and np.array_equal(self.videos, other.videos)
                and np.array_equal(self.vv, other.vv))

    def __hash__(self):
        return hash((self.videos.tobytes(), self.vv.tobytes()))

    def __repr__(self):
        return f"CacheState({self.slots})"

    def to_json(self) -> str:
        return json.dumps([
            {"slot": i, "video": None if v < 0 else int(v),
             "vv_tiles": [] if v < 0 else [int(t) for t in self.vv[i]]}
            for i, v in enumerate(self.videos)])


class LookupKind(enum.Enum):
    NOT_CACHED = "not_cached"
    FULL_HIT = "full_hit"
    SOFT_HIT = "soft_hit"


@dataclass(frozen=True)
class Lookup:
    kind: LookupKind
    missing: frozenset = frozenset()


def lookup(cache: CacheState, video: int, predicted) -> Lookup:
    """Classify a request against the cache.

    ``predicted`` is a Viewport (or any iterable of tile indices).
    """
    tiles = frozenset(getattr(predicted, "tiles", predicted))
    if video not in cache:
        return Lookup(LookupKind.NOT_CACHED, tiles)
    missing = tiles - cache.tiles_of(video)
    return Lookup(LookupKind.SOFT_HIT if missing else LookupKind.FULL_HIT, frozenset(missing))


def apply_action(cache: CacheState, action, ctx) -> CacheState:
    """Return the cache after ``action``.

    ``ctx`` supplies ``video`` (the requested video), ``predicted`` (tile tuple
    of the triggering request's predicted viewport) and, for tile decisions,
    ``candidate`` (the fetched tile).
    """
    if isinstance(action, int):
        action = decode_action(action, cache.capacity, cache.k)
    if isinstance(action, NoOp):
        return cache
    if isinstance(action, ReplaceVideo):
        i = action.slot
        if not 0 <= i < cache.capacity:
            raise ContractViolation(f"slot {i} out of range")
        if ctx.video in cache:
            raise ContractViolation(f"video {ctx.video} is already cached")
        tiles = tuple(ctx.predicted)
        if len(tiles) != cache.k:
            raise ContractViolation("predicted viewport has the wrong size")
        videos = cache.videos.copy()
        vv = cache.vv.copy()
        slot_of = dict(cache._slot_of)
        if videos[i] >= 0:
            del slot_of[int(videos[i])]
        videos[i] = ctx.video
        vv[i] = tiles
        slot_of[int(ctx.video)] = i
        out = CacheState._unchecked(videos, vv, slot_of)
        g = cache._gather
        if g is not None:
            rows, flat = g[2].copy(), g[3].copy()
            rows[i] = ctx.video
            flat[i * cache.k:(i + 1) * cache.k] = ctx.video * g[1] + vv[i]
            out._gather = (g[0], g[1], rows, flat)
        return out
    if isinstance(action, ReplaceTile):
        i, j = action.slot, action.tile_slot
        if not (0 <= i < cache.capacity and 0 <= j < cache.k):
            raise ContractViolation(f"tile action ({i}, {j}) out of range")
        if cache.videos[i] != ctx.video:
            raise ContractViolation(f"slot {i} does not hold video {ctx.video}")
        if ctx.candidate in cache.vv[i]:
            raise ContractViolation(f"tile {ctx.candidate} already cached for video {ctx.video}")
        vv = cache.vv.copy()
        vv[i, j] = ctx.candidate
        out = CacheState._unchecked(cache.videos, vv, cache._slot_of)
        g = cache._gather
        if g is not None:
            flat = g[3].copy()
            flat[i * cache.k + j] = g[2][i] * g[1] + ctx.candidate
            out._gather = (g[0], g[1], g[2], flat)
        return out
    raise TypeError(f"not an action: {action!r}")


# ------------------------------------------------------------ history

class RequestHistory:
    """Sliding short and long windows over the most recent request sets.

    Counts are kept incrementally: per video (one per set) and per
    (video, tile) high-quality requests, where a tile counts once for every
    GOP whose requested viewport contains it.
    """

    def __init__(self, cfg: LibraryConfig, short: int = 300, long: int = 1000):
        if not 1 <= short <= long:
            raise ValueError("need 1 <= short window <= long window")
        self.cfg = cfg
        self.short = short
        self.long = long
        self.ring: deque = deque()
        V, M = cfg.num_videos, cfg.num_tiles
        # one extra all-zero row stands in for empty cache slots
        self._video = np.zeros((2, V + 1), dtype=np.int64)
        self._tile = np.zeros((2, (V + 1) * M), dtype=np.int64)
        self.video_short, self.video_long = self._video[0, :V], self._video[1, :V]
        self.tile_short = self._tile[0].reshape(V + 1, M)[:V]
        self.tile_long = self._tile[1].reshape(V + 1, M)[:V]
        self._vp_tiles = viewport_tile_matrix(cfg)

    def __len__(self):
        return len(self.ring)

    def tile_marks(self, req: RequestSet) -> np.ndarray:
        ids = np.asarray(req.viewports, dtype=np.int64)
        return self._vp_tiles[ids].sum(axis=0)

    def record(self, req: RequestSet) -> None:
        marks = self.tile_marks(req)
        v = req.video
        self.ring.append((v, req.viewports, marks))
        self.video_short[v] += 1
        self.video_long[v] += 1
        self.tile_short[v] += marks
        self.tile_long[v] += marks
        if len(self.ring) > self.short:
            old_v, _, old_marks = self.ring[-self.short - 1]
            self.video_short[old_v] -= 1
            self.tile_short[old_v] -= old_marks
        if len(self.ring) > self.long:
            old_v, _, old_marks = self.ring.popleft()
            self.video_long[old_v] -= 1
            self.tile_long[old_v] -= old_marks


def record_request_set(hist: RequestHistory, req: RequestSet) -> None:
    hist.record(req)


def feature_length(capacity: int, k: int) -> int:
    return 2 * capacity + 2 * k * capacity + 2


def feature_slices(capacity: int, k: int) -> dict:
    """Named slices of the layout [x_s | x_l | y_s | y_l | z_s | z_l]."""
    C, kc = capacity, k * capacity
    return {"x_s": slice(0, C), "x_l": slice(C, 2 * C),
            "y_s": slice(2 * C, 2 * C + kc), "y_l": slice(2 * C + kc, 2 * C + 2 * kc),
            "z_s": slice(2 * C + 2 * kc, 2 * C + 2 * kc + 1),
            "z_l": slice(2 * C + 2 * kc + 1, 2 * C + 2 * kc + 2)}


def extract_features(hist: RequestHistory, cache: CacheState, video: int,
                     tile: int | None = None) -> np.ndarray:
    """Observation for a pending decision, every entry in [0, 1].

    Video counts are divided by the window length; tile counts by window
    length times the number of GOPs (a tile can be requested once per GOP).
    The candidate is the video itself (``tile is None``) or one of its tiles.
    """
    C, k = cache.capacity, cache.k
    cfg = hist.cfg
    rows, flat = cache.gather_index(cfg.num_videos, cfg.num_tiles)
    hs, hl = float(hist.short), float(hist.long)
    ts, tl = hs * cfg.num_gops, hl * cfg.num_gops
    kc = k * C
    out = np.empty(feature_length(C, k))
    out[0:2 * C] = hist._video[:, rows].ravel()
    out[2 * C:2 * C + 2 * kc] = hist._tile[:, flat].ravel()
    if tile is None:
        out[-2] = hist.video_short[video]
        out[-1] = hist.video_long[video]
        scale = (hs, hl)
    else:
        out[-2] = hist.tile_short[video, tile]
        out[-1] = hist.tile_long[video, tile]
        scale = (ts, tl)
    out[0:C] /= hs
    out[C:2 * C] /= hl
    out[2 * C:2 * C + kc] /= ts
    out[2 * C + kc:2 * C + 2 * kc] /= tl
    out[-2] /= scale[0]
    out[-1] /= scale[1]
    return out

"""Online caching environment: decision points, delivery and delayed rewards.

One call to :meth:`CachingEnv.process_request_set` plays a whole request set:

1. the whole-video base request; if the video is not cached the policy may
   admit it (``ReplaceVideo``) or decline (``NoOp``);
2. every GOP in order: LSR prediction, deadline-constrained delivery, then one
   tile decision per predicted high-quality tile fetched over the backhaul,
   i.e. missing from the video's virtual viewport (only while the video is
   cached);
3. the set enters the request history;
4. its realised distortion reduction is booked;
5. transitions whose reward window has closed are settled and returned.

A transition's reward is the mean realised distortion reduction of the
``horizon`` request sets following the one in which the decision was made.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .cache import (CacheState, ContractViolation, RequestHistory, apply_action,
                    extract_features, num_actions)
from .content import Layer, LibraryConfig, TileKey, enumerate_viewports
from .delivery import DelayConfig, schedule_gop_delivery
from .workload import RequestSet, lsr_predict

VIDEO = "video"
TILE = "tile"


class DecisionContext:
    """A pending caching decision.

    ``gop`` is 0 for the whole-video decision.  ``features`` is computed on
    first access from the history and cache as they were when the context
    was created.
    """

    __slots__ = ("kind", "set_index", "video", "gop", "candidate", "predicted",
                 "slot", "capacity", "k", "_hist", "_cache", "_features")

    def __init__(self, kind, set_index, video, gop, predicted, cache, hist,
                 candidate=None):
        self.kind = kind
        self.set_index = set_index
        self.video = video
        self.gop = gop
        self.predicted = predicted
        self.candidate = candidate
        self.capacity = cache.capacity
        self.k = cache.k
        self.slot = cache.slot_of(video)
        self._cache = cache
        self._hist = hist
        self._features = None
        if kind == TILE and (self.slot is None or candidate in cache.vv[self.slot]):
            raise ContractViolation("tile decision needs a cached video and an uncached tile")

    @property
    def cache(self) -> CacheState:
        return self._cache

    @property
    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = extract_features(
                self._hist, self._cache, self.video,
                None if self.kind == VIDEO else self.candidate)
        return self._features

    @property
    def mask(self) -> np.ndarray:
        return legal_actions(self)

    def allows(self, a: int) -> bool:
        if a == 0:
            return True
        if self.kind == VIDEO:
            return 1 <= a <= self.capacity
        lo = 1 + self.capacity + self.slot * self.k
        return lo <= a < lo + self.k


def legal_actions(ctx: DecisionContext) -> np.ndarray:
    """Boolean mask over the flat action head for ``ctx``."""
    C, k = ctx.capacity, ctx.k
    mask = np.zeros(num_actions(C, k), dtype=bool)
    mask[0] = True
    if ctx.kind == VIDEO:
        mask[1:C + 1] = True
    else:
        lo = 1 + C + ctx.slot * k
        mask[lo:lo + k] = True
    return mask


@dataclass
class Transition:
    origin: int  # request-set index of the decision
    kind: str
    action: int
    state: np.ndarray | None
    settle_at: int
    next_state: np.ndarray | None = None
    next_mask: np.ndarray | None = None
    reward: float | None = None

    @property
    def complete(self) -> bool:
        return self.reward is not None and self.next_state is not None


@dataclass
class RewardLedger:
    """Realised per-set distortion reduction and transitions awaiting reward."""
    horizon: int
    deltas: list = field(default_factory=list)
    _prefix: list = field(default_factory=lambda: [0.0])
    pending: deque = field(default_factory=deque)

    def book(self, i: int, delta: float) -> None:
        if i != len(self.deltas):
            raise ContractViolation(f"set {i} booked out of order")
        self.deltas.append(delta)
        self._prefix.append(self._prefix[-1] + delta)

    def window_mean(self, origin: int) -> float:
        lo, hi = origin + 1, origin + self.horizon
        return (self._prefix[hi + 1] - self._prefix[lo]) / self.horizon


def settle_rewards(ledger: RewardLedger, i: int) -> list:
    """Assign rewards to every pending transition due at or before set ``i``."""
    out = []
    while ledger.pending and ledger.pending[0].settle_at <= i:
        t = ledger.pending.popleft()
        t.reward = ledger.window_mean(t.origin)
        out.append(t)
    return out


class Policy:
    """Interface shared by the baselines and the DQN agent."""

    learns = False  # learning policies receive feature snapshots and transitions

    def begin_set(self, env: CachingEnv, req: RequestSet) -> None:
        pass

    def decide(self, ctx: DecisionContext) -> int:
        raise NotImplementedError

    def observe(self, transitions: list) -> None:
        pass


class CachingEnv:
    """One SBS with its cache, request history and reward ledger."""

    def __init__(self, cfg: LibraryConfig, delay: DelayConfig, capacity: int,
                 short_window: int = 300, long_window: int = 1000, horizon: int = 1000):
        if horizon < 1:
            raise ValueError("reward horizon must be >= 1")
        self.cfg = cfg
        self.delay = delay
        self.cache = CacheState.empty(capacity, cfg.viewport_tiles)
        self.history = RequestHistory(cfg, short_window, long_window)
        self.ledger = RewardLedger(horizon)
        self._viewports = {vp.id: vp.tiles for vp in enumerate_viewports(cfg)}
        self._gain = {Layer.BASE: cfg.base_gain, Layer.ENHANCEMENT: cfg.enh_gain}
        self._last = None  # most recent transition, waiting for its next state
        self._orphans = []  # settled before their next state was observed

    @property
    def capacity(self) -> int:
        return self.cache.capacity

    @property
    def n_actions(self) -> int:
        return num_actions(self.capacity, self.cfg.viewport_tiles)

    def _decide(self, policy, ctx, events):
        if policy.learns:
            s = ctx.features
            if self._last is not None:
                self._last.next_state = s
                self._last.next_mask = ctx.mask
        a = int(policy.decide(ctx))
        if not ctx.allows(a):
            raise ContractViolation(f"policy chose masked-out action {a} for {ctx.kind} decision")
        self.cache = apply_action(self.cache, a, ctx)
        t = Transition(ctx.set_index, ctx.kind, a, ctx.features if policy.learns else None,
                       ctx.set_index + self.ledger.horizon)
        self.ledger.pending.append(t)
        if policy.learns:
            self._last = t
        events.append({"event": "decision", "set": ctx.set_index, "gop": ctx.gop,
                       "kind": ctx.kind, "video": ctx.video, "tile": ctx.candidate,
                       "action": a})
        return a

    def process_request_set(self, req: RequestSet, policy: Policy):
        """Play one request set against ``policy``.

        Returns:
          (transitions, events): settled transitions that are ready for
          learning, and the list of event dicts emitted during the set.
        """
        cfg = self.cfg
        i, v = req.index, req.video
        events: list = []
        policy.begin_set(self, req)
        cached_at_start = v in self.cache

        first_pred = self._viewports[lsr_predict(req, 1)]
        if not cached_at_start:
            ctx = DecisionContext(VIDEO, i, v, 0, first_pred, self.cache, self.history)
            self._decide(policy, ctx, events)

        delta = 0.0
        M = cfg.num_tiles
        for g in range(1, cfg.num_gops + 1):
            pred_id = lsr_predict(req, g)
            pred = self._viewports[pred_id]
            gi = g - 1
            requested = [TileKey(v, gi, Layer.BASE, m) for m in range(M)]
            requested += [TileKey(v, gi, Layer.ENHANCEMENT, m) for m in pred]
            if cached_at_start:
                vv = self.cache.tiles_of(v)
                plan = schedule_gop_delivery(
                    requested, lambda key: key.layer == Layer.BASE or key.tile in vv,
                    self.delay, cfg)
                enh_hits = sum(1 for m in pred if m in vv)
            else:
                plan = schedule_gop_delivery(requested, (), self.delay, cfg)
                enh_hits = 0
            gained = sum(self._gain[key.layer] for key in plan.delivered)
            delta += gained
            events.append({
                "event": "delivery", "set": i, "video": v, "gop": g,
                "requested_viewport": req.viewports[gi], "predicted_viewport": pred_id,
                "cached_at_start": cached_at_start, "plan": plan,
                "base_items": M, "enh_items": len(pred),
                "base_hits": M if cached_at_start else 0,
                "enh_hits": enh_hits,
                "distortion": gained,
            })
            slot = self.cache.slot_of(v)
            if slot is None:
                continue
            # every predicted tile missing from the cache was requested from the
            # MBS, whether or not it then made the deadline
            for m in pred:
                if m in self.cache.vv[slot]:
                    continue
                ctx = DecisionContext(TILE, i, v, g, pred, self.cache, self.history, m)
                self._decide(policy, ctx, events)

        self.history.record(req)
        self.ledger.book(i, delta)
        settled = settle_rewards(self.ledger, i)
        ready = []
        if self._orphans:
            still = []
            for t in self._orphans:
                (ready if t.next_state is not None else still).append(t)
            self._orphans = still
        for t in settled:
            events.append({"event": "settlement", "set": i, "origin": t.origin,
                           "kind": t.kind, "action": t.action, "reward": t.reward})
            if not policy.learns:
                continue
            if t.next_state is None:
                self._orphans.append(t)
            else:
                ready.append(t)
        return ready, events

    def delta(self, i: int) -> float:
        return self.ledger.deltas[i]



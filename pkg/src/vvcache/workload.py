"""Request-set generation (synthetic Zipf or trace replay) and LSR prediction."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .content import ConfigError, LibraryConfig, num_viewports


class IngestionError(ValueError):
    """A trace file or trajectory table cannot serve the configured library."""


@dataclass(frozen=True)
class RequestSet:
    """One user's demand for one video.

    ``viewports[g - 1]`` is the viewport id requested for GOP ``g``.  The
    whole-video base-layer demand is implicit and always present.
    """
    index: int
    video: int
    viewports: tuple[int, ...]


VIEWPORT_MODES = ("zipf", "selective", "trace", "weights")


@dataclass(frozen=True)
class ViewportDist:
    """How per-GOP viewports are drawn.

    ``weights`` is an explicit categorical distribution over viewport ids
    ``1..len(weights)``; the other modes follow their names.
    """
    mode: str = "zipf"
    eta_p: float = 1.0
    selective_id: int = 1
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.mode not in VIEWPORT_MODES:
            raise ConfigError(f"unknown viewport mode {self.mode!r}")
        if self.eta_p < 0:
            raise ConfigError("eta_p must be >= 0")
        if self.mode == "weights" and (not self.weights or min(self.weights) < 0
                                       or sum(self.weights) <= 0):
            raise ConfigError("weights mode needs non-negative weights with positive sum")


@dataclass(frozen=True)
class WorkloadConfig:
    eta_v: float = 1.0
    viewports: ViewportDist = field(default_factory=ViewportDist)
    total_sets: int = 10000
    seed: int = 0
    trace_path: str | None = None

    def __post_init__(self):
        if self.total_sets < 1:
            raise ConfigError("total_sets must be >= 1")
        if self.eta_v < 0:
            raise ConfigError("eta_v must be >= 0")


@lru_cache(maxsize=64)
def zipf_pmf(n: int, eta: float) -> np.ndarray:
    """Zipf probabilities over ranks 1..n."""
    w = 1.0 / np.arange(1, n + 1, dtype=float) ** eta
    p = w / w.sum()
    p.setflags(write=False)
    return p


@lru_cache(maxsize=64)
def _zipf_cdf(n: int, eta: float) -> np.ndarray:
    c = np.cumsum(zipf_pmf(n, eta))
    c[-1] = 1.0
    return c


def _draw(cdf: np.ndarray, rng: np.random.Generator, size=None):
    return np.searchsorted(cdf, rng.random(size), side="right")


def sample_video(eta_v: float, num_videos: int, rng: np.random.Generator) -> int:
    """Video index whose 1-based rank follows Zipf(eta_v)."""
    if num_videos < 1:
        raise ConfigError("num_videos must be >= 1")
    return int(_draw(_zipf_cdf(num_videos, float(eta_v)), rng))


def viewport_pmf(dist: ViewportDist, n_viewports: int) -> np.ndarray:
    """Probability of each viewport id, as an array indexed by ``id - 1``."""
    if dist.mode == "zipf":
        return zipf_pmf(n_viewports, float(dist.eta_p))
    if dist.mode == "selective":
        if not 1 <= dist.selective_id <= n_viewports:
            raise ConfigError(f"selective id {dist.selective_id} out of range")
        p = np.zeros(n_viewports)
        p[dist.selective_id - 1] = 1.0
        return p
    if dist.mode == "weights":
        if len(dist.weights) != n_viewports:
            raise ConfigError(f"expected {n_viewports} viewport weights")
        w = np.asarray(dist.weights, dtype=float)
        return w / w.sum()
    raise ValueError("trace workloads have no viewport distribution")


def sample_viewport(dist: ViewportDist, n_viewports: int, rng: np.random.Generator,
                    size=None):
    """Draw viewport id(s) from ``dist``; ids start at 1."""
    if dist.mode == "trace":
        raise ValueError("trace workloads replay trajectories; nothing to sample")
    if dist.mode == "selective":
        viewport_pmf(dist, n_viewports)  # range check
        if size is None:
            return dist.selective_id
        return np.full(size, dist.selective_id, dtype=np.int64)
    cdf = np.cumsum(viewport_pmf(dist, n_viewports))
    cdf[-1] = 1.0
    draw = _draw(cdf, rng, size) + 1
    return int(draw) if size is None else draw


@dataclass
class TrajectoryTable:
    """Per-GOP viewport trajectories and the library-video -> trajectory map."""
    trajectories: dict[tuple[str, str], tuple[int, ...]]
    assignment: dict[int, tuple[str, str]] = field(default_factory=dict)

    def for_video(self, video: int) -> tuple[int, ...]:
        try:
            return self.trajectories[self.assignment[video]]
        except KeyError:
            raise IngestionError(f"no trajectory mapped to video {video}") from None


def ingest_trajectories(path, cfg: LibraryConfig, seed: int = 0) -> TrajectoryTable:
    """Load a trace CSV and map every library video to one trajectory.

    The CSV has header ``dataset_video,trajectory,gop,viewport_id`` and one row
    per GOP in any order.  Trajectories longer than ``cfg.num_gops`` are
    truncated.  Each library video first draws a dataset video uniformly, then
    one of that video's trajectories uniformly.
    """
    n_vp = num_viewports(cfg)
    rows: dict[tuple[str, str], dict[int, int]] = defaultdict(dict)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["dataset_video", "trajectory", "gop", "viewport_id"]
        if reader.fieldnames != expected:
            raise IngestionError(f"{path}: header must be {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                key = (row["dataset_video"].strip(), row["trajectory"].strip())
                gop = int(row["gop"])
                vp = int(row["viewport_id"])
            except (TypeError, ValueError, AttributeError):
                raise IngestionError(f"{path}: malformed row {lineno}") from None
            if not key[0] or not key[1]:
                raise IngestionError(f"{path}: malformed row {lineno}")
            if not 1 <= vp <= n_vp:
                raise IngestionError(f"{path}: row {lineno}: viewport id {vp} out of range")
            if gop in rows[key]:
                raise IngestionError(f"{path}: row {lineno}: duplicate gop {gop} for {key}")
            rows[key][gop] = vp
    if not rows:
        raise IngestionError(f"{path}: no trajectories")
    trajectories = {}
    for key, gops in rows.items():
        if len(gops) < cfg.num_gops:
            raise IngestionError(
                f"{path}: trajectory {key} has {len(gops)} GOPs, need {cfg.num_gops}")
        trajectories[key] = tuple(gops[g] for g in sorted(gops))[:cfg.num_gops]

    by_video: dict[str, list[tuple[str, str]]] = defaultdict(list)
    for key in sorted(trajectories):
        by_video[key[0]].append(key)
    videos = sorted(by_video)
    rng = np.random.default_rng(seed)
    assignment = {}
    for v in range(cfg.num_videos):
        options = by_video[videos[rng.integers(len(videos))]]
        assignment[v] = options[rng.integers(len(options))]
    return TrajectoryTable(trajectories, assignment)


def generate_request_set(i: int, wl: WorkloadConfig, cfg: LibraryConfig,
                         rng: np.random.Generator,
                         traj: TrajectoryTable | None = None) -> RequestSet:
    """Draw request set ``i``: a Zipf video plus one viewport per GOP."""
    v = sample_video(wl.eta_v, cfg.num_videos, rng)
    if wl.viewports.mode == "trace":
        if traj is None:
            raise IngestionError("trace mode needs a trajectory table")
        vps = traj.for_video(v)
        if len(vps) < cfg.num_gops:
            raise IngestionError(f"trajectory for video {v} is shorter than {cfg.num_gops}")
        return RequestSet(i, v, tuple(vps[:cfg.num_gops]))
    vps = sample_viewport(wl.viewports, num_viewports(cfg), rng, size=cfg.num_gops)
    return RequestSet(i, v, tuple(int(x) for x in vps))


class RequestStream:
    """Deterministic sequence of request sets.

    Set ``i`` is drawn from its own generator seeded by ``(seed, i)``, so any
    set can be regenerated alone and two policies run on the same seed see
    identical demand.  A non-zero ``stream`` selects an independent sequence
    under the same seed (used for warm-up demand).
    """

    def __init__(self, wl: WorkloadConfig, cfg: LibraryConfig,
                 traj: TrajectoryTable | None = None, start: int = 0, stream: int = 0):
        if wl.viewports.mode == "trace" and traj is None:
            if wl.trace_path is None:
                raise IngestionError("trace mode needs trace_path or a trajectory table")
            traj = ingest_trajectories(wl.trace_path, cfg, seed=wl.seed)
        self.wl = wl
        self.cfg = cfg
        self.traj = traj
        self.start = start
        self.stream = stream

    def get(self, i: int) -> RequestSet:
        key = [self.wl.seed, i] if self.stream == 0 else [self.wl.seed, self.stream, i]
        rng = np.random.default_rng(key)
        return generate_request_set(i, self.wl, self.cfg, rng, self.traj)

    def __len__(self):
        return self.wl.total_sets

    def __iter__(self):
        for i in range(self.start, self.start + self.wl.total_sets):
            yield self.get(i)


def lsr_predict(req: RequestSet, g: int) -> int:
    """Last-sample-replication prediction for 1-based GOP ``g``.

    The first GOP is predicted correctly; later GOPs repeat the previous
    GOP's requested viewport.
    """
    if not 1 <= g <= len(req.viewports):
        raise IndexError(f"gop {g} outside 1..{len(req.viewports)}")
    return req.viewports[0] if g == 1 else req.viewports[g - 2]

"""Experiment runner: configuration, metrics, sweeps and CSV output."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import OraclePolicy, make_baseline
from .cache import CacheState
from .content import ConfigError, Layer, LibraryConfig, TileKey, enumerate_viewports
from .delivery import DelayConfig
from .dqn import DQNAgent, TrainerConfig, offline_phase
from .env import CachingEnv, Policy
from .workload import RequestStream, ViewportDist, WorkloadConfig

POLICIES = ("lfu", "lru", "fifo", "dqn", "noop", "oracle")
SWEEP_AXES = ("cache", "eta_v", "eta_p")
WARMUP_STREAM = 1  # request-stream id for the DQN's historic demand


@dataclass
class ExperimentConfig:
    library: LibraryConfig = field(default_factory=LibraryConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    delay: DelayConfig = field(default_factory=DelayConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    policy: str = "dqn"
    cache_fraction: float = 0.10
    capacity_override: int | None = None
    short_window: int = 300
    long_window: int = 1000
    horizon: int = 1000
    sweep_axis: str | None = None
    sweep_values: tuple = ()
    out_dir: str = "out"
    write_events: bool = False

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {', '.join(POLICIES)}")
        if self.capacity < 1:
            raise ConfigError("cache capacity must be at least one video")
        if self.capacity > self.library.num_videos:
            raise ConfigError("cache capacity exceeds the library size")
        if self.sweep_axis is not None:
            if self.sweep_axis not in SWEEP_AXES:
                raise ConfigError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}")
            if not self.sweep_values:
                raise ConfigError("sweep values must be non-empty")

    @property
    def capacity(self) -> int:
        if self.capacity_override is not None:
            return self.capacity_override
        return int(round(self.cache_fraction * self.library.num_videos))

    @property
    def seed(self) -> int:
        return self.workload.seed

    def with_seed(self, seed: int) -> ExperimentConfig:
        return dataclasses.replace(self, workload=dataclasses.replace(self.workload, seed=seed))

    def with_axis(self, axis: str, value: float) -> ExperimentConfig:
        """Copy with one sweep coordinate applied (cache values are percent of V)."""
        if axis == "cache":
            return dataclasses.replace(self, cache_fraction=float(value) / 100.0,
                                       capacity_override=None)
        if axis == "eta_v":
            return dataclasses.replace(
                self, workload=dataclasses.replace(self.workload, eta_v=float(value)))
        if axis == "eta_p":
            vp = dataclasses.replace(self.workload.viewports, eta_p=float(value))
            return dataclasses.replace(
                self, workload=dataclasses.replace(self.workload, viewports=vp))
        raise ConfigError(f"unknown sweep axis {axis!r}")


# ------------------------------------------------------------ config files

# (section, key) -> (sub-config, field, parser)
_KEYS = {
    ("library", "videos"): ("library", "num_videos", int),
    ("library", "gops"): ("library", "num_gops", int),
    ("library", "tiles"): ("library", "num_tiles", int),
    ("library", "grid_cols"): ("library", "grid_cols", int),
    ("library", "grid_rows"): ("library", "grid_rows", int),
    ("library", "viewport_tiles"): ("library", "viewport_tiles", int),
    ("library", "viewport_cols"): ("library", "viewport_cols", int),
    ("library", "viewport_rows"): ("library", "viewport_rows", int),
    ("library", "base_bitrate_mbps"): ("library", "base_bitrate", float),
    ("library", "enh_bitrate_mbps"): ("library", "enh_bitrate", float),
    ("library", "gop_duration_s"): ("library", "gop_duration", float),
    ("library", "base_gain_db"): ("library", "base_gain", float),
    ("library", "enh_gain_db"): ("library", "enh_gain", float),
    ("workload", "eta_v"): ("workload", "eta_v", float),
    ("workload", "request_sets"): ("workload", "total_sets", int),
    ("workload", "seed"): ("workload", "seed", int),
    ("workload", "trace_path"): ("workload", "trace_path", str),
    ("workload", "viewport_mode"): ("viewports", "mode", str),
    ("workload", "eta_p"): ("viewports", "eta_p", float),
    ("workload", "selective_id"): ("viewports", "selective_id", int),
    ("workload", "viewport_weights"): (
        "viewports", "weights", lambda s: tuple(float(x) for x in s.split(","))),
    ("delay", "d_sbs_s_per_mbit"): ("delay", "d_sbs", str),
    ("delay", "d_mbs_s_per_mbit"): ("delay", "d_mbs", str),
    ("delay", "t_disp_s"): ("delay", "t_disp", str),
    ("cache", "cache_fraction"): ("experiment", "cache_fraction", float),
    ("cache", "capacity"): ("experiment", "capacity_override", int),
    ("cache", "short_window"): ("experiment", "short_window", int),
    ("cache", "long_window"): ("experiment", "long_window", int),
    ("cache", "reward_horizon"): ("experiment", "horizon", int),
    ("experiment", "policy"): ("experiment", "policy", str),
    ("experiment", "out_dir"): ("experiment", "out_dir", str),
    ("experiment", "events"): ("experiment", "write_events", lambda s: s.lower() in ("1", "true", "yes")),
    ("experiment", "sweep_axis"): ("experiment", "sweep_axis", str),
    ("experiment", "sweep_values"): (
        "experiment", "sweep_values", lambda s: tuple(float(x) for x in s.split(","))),
}
for _f in dataclasses.fields(TrainerConfig):
    _KEYS["trainer", _f.name] = ("trainer", _f.name, int if _f.type == "int" else float)


def config_from_mapping(sections: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from ``{section: {key: str}}``; unknown keys raise."""
    parts: dict[str, dict] = {k: {} for k in
                              ("library", "workload", "viewports", "delay", "trainer", "experiment")}
    for section, items in sections.items():
        for key, raw in items.items():
            spec = _KEYS.get((section, key))
            if spec is None:
                raise ConfigError(f"unknown config key [{section}] {key}")
            target, name, parse = spec
            try:
                parts[target][name] = parse(str(raw).strip())
            except ValueError:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from None
    workload = WorkloadConfig(viewports=ViewportDist(**parts["viewports"]), **parts["workload"])
    return ExperimentConfig(library=LibraryConfig(**parts["library"]), workload=workload,
                            delay=DelayConfig(**parts["delay"]),
                            trainer=TrainerConfig(**parts["trainer"]), **parts["experiment"])


def load_config(path) -> ExperimentConfig:
    """Read an INI-style file with [library], [workload], [delay], [cache],
    [trainer] and [experiment] sections.  Relative trace paths resolve
    against the config file's directory."""
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with path.open(encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    sections = {s: dict(parser[s]) for s in parser.sections()}
    trace = sections.get("workload", {}).get("trace_path")
    if trace and not Path(trace).is_absolute():
        sections["workload"]["trace_path"] = str(path.parent / trace)
    return config_from_mapping(sections)


# ------------------------------------------------------------------ metrics

def compute_viewport_psnr(delivered, viewport, video: int, gop: int, cfg: LibraryConfig) -> float:
    """Mean per-tile quality of the requested viewport for one GOP.

    Args:
      delivered: TileKeys delivered on time for this GOP.
      viewport: the requested viewport (Viewport or tile indices).
      video, gop: which GOP; ``gop`` is the 0-based index used in TileKeys.
      cfg: library config supplying the layer gains.
    """
    tiles = tuple(getattr(viewport, "tiles", viewport))
    total = 0.0
    for m in tiles:
        if TileKey(video, gop, Layer.BASE, m) in delivered:
            total += cfg.base_gain
        if TileKey(video, gop, Layer.ENHANCEMENT, m) in delivered:
            total += cfg.enh_gain
    return total / len(tiles)


def compute_hit_ratio(events) -> float:
    """Cache-served requested items over all requested items (tile granularity)."""
    hits = items = 0
    for e in events:
        if e["event"] == "delivery":
            hits += e["base_hits"] + e["enh_hits"]
            items += e["base_items"] + e["enh_items"]
    return hits / items if items else 0.0


def tile_popularity_report(events, cfg: LibraryConfig):
    """Requested-viewport counts by id and the implied high-quality requests per tile."""
    vps = enumerate_viewports(cfg)
    vp_counts = {vp.id: 0 for vp in vps}
    for e in events:
        if e["event"] == "delivery":
            vp_counts[e["requested_viewport"]] += 1
    tile_counts = np.zeros(cfg.num_tiles, dtype=np.int64)
    for vp in vps:
        tile_counts[list(vp.tiles)] += vp_counts[vp.id]
    return vp_counts, tile_counts


@dataclass
class MetricsRecord:
    policy: str
    capacity: int
    seed: int
    sets: int
    mean_psnr: float  # dB
    hit_ratio: float
    backhaul_gb: float
    mean_delta: float  # dB per request set
    viewport_counts: dict
    tile_counts: np.ndarray
    losses: list = field(default_factory=list)  # (phase, epoch_or_step, loss)
    final_cache: CacheState | None = None
    runtime_s: float = 0.0


class MetricsCollector:
    """Streaming aggregation of delivery events into run-level metrics."""

    def __init__(self, cfg: LibraryConfig):
        self.cfg = cfg
        self.tiles = {vp.id: vp.tiles for vp in enumerate_viewports(cfg)}
        self.psnr_sum = 0.0
        self.gops = 0
        self.hits = 0
        self.items = 0
        self.backhaul_mbit = 0.0
        self.vp_counts = {i: 0 for i in self.tiles}

    def __call__(self, events) -> None:
        cfg = self.cfg
        for e in events:
            if e["event"] != "delivery":
                continue
            plan = e["plan"]
            self.psnr_sum += compute_viewport_psnr(plan.delivered, self.tiles[e["requested_viewport"]],
                                                   e["video"], e["gop"] - 1, cfg)
            self.gops += 1
            self.hits += e["base_hits"] + e["enh_hits"]
            self.items += e["base_items"] + e["enh_items"]
            self.backhaul_mbit += plan.backhaul_mbit
            self.vp_counts[e["requested_viewport"]] += 1

    @property
    def mean_psnr(self) -> float:
        return self.psnr_sum / self.gops if self.gops else 0.0

    @property
    def hit_ratio(self) -> float:
        return self.hits / self.items if self.items else 0.0

    @property
    def backhaul_gb(self) -> float:
        return self.backhaul_mbit / 8000.0

    def tile_counts(self) -> np.ndarray:
        counts = np.zeros(self.cfg.num_tiles, dtype=np.int64)
        for i, tiles in self.tiles.items():
            counts[list(tiles)] += self.vp_counts[i]
        return counts


# ------------------------------------------------------------------ running

def make_env(cfg: ExperimentConfig) -> CachingEnv:
    return CachingEnv(cfg.library, cfg.delay, cfg.capacity, cfg.short_window,
                      cfg.long_window, cfg.horizon)


def make_policy(cfg: ExperimentConfig, requests=None) -> Policy:
    """Construct (and for the DQN, pre-train) the configured policy."""
    C, k = cfg.capacity, cfg.library.viewport_tiles
    if cfg.policy == "dqn":
        agent = DQNAgent(C, k, cfg.trainer, seed=[cfg.seed, 2])
        warm_wl = dataclasses.replace(cfg.workload, total_sets=cfg.trainer.warmup_sets)
        warm = RequestStream(warm_wl, cfg.library, stream=WARMUP_STREAM)
        offline_phase(lambda: make_env(cfg), warm, agent)
        return agent
    if cfg.policy == "oracle":
        if requests is None:
            raise ConfigError("the oracle policy needs the full request list")
        return OraclePolicy(C, k, requests, cfg.library)
    return make_baseline(cfg.policy, C)


def event_to_json(e: dict) -> dict:
    """JSON-safe copy of an event (delivery plans become tile lists)."""
    if e["event"] != "delivery":
        return dict(e)
    out = {k: v for k, v in e.items() if k != "plan"}
    plan = e["plan"]
    as_list = lambda keys: sorted([int(t.layer), int(t.tile)] for t in keys)
    out.update(delivered=as_list(plan.delivered), dropped=as_list(plan.dropped),
               from_cache=as_list(plan.from_cache), backhaul_mbit=plan.backhaul_mbit,
               elapsed_s=str(plan.elapsed))
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None, sink=None,
                   sweep_point=("none", "")) -> MetricsRecord:
    """Run one policy over the configured workload.

    Args:
      cfg: experiment configuration; the workload seed seeds everything.
      out_dir: if given, the five CSVs (plus cache.json, and checkpoint.json
        for the DQN) are written there.
      sink: optional callable receiving each request set's event list.
      sweep_point: (axis, value) recorded in the run's sweep.csv row.
    """
    t0 = time.perf_counter()
    stream = RequestStream(cfg.workload, cfg.library)
    requests = list(stream) if cfg.policy == "oracle" else None
    policy = make_policy(cfg, requests)
    env = make_env(cfg)
    metrics = MetricsCollector(cfg.library)
    event_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.write_events:
            event_fh = (out_dir / "events.jsonl").open("w", encoding="utf-8")
    try:
        for req in (requests if requests is not None else stream):
            transitions, events = env.process_request_set(req, policy)
            if transitions:
                policy.observe(transitions)
            metrics(events)
            if sink is not None:
                sink(events)
            if event_fh is not None:
                for e in events:
                    event_fh.write(json.dumps(event_to_json(e)) + "\n")
    finally:
        if event_fh is not None:
            event_fh.close()
    record = MetricsRecord(
        policy=cfg.policy, capacity=cfg.capacity, seed=cfg.seed, sets=cfg.workload.total_sets,
        mean_psnr=metrics.mean_psnr, hit_ratio=metrics.hit_ratio, backhaul_gb=metrics.backhaul_gb,
        mean_delta=float(np.mean(env.ledger.deltas)), viewport_counts=dict(metrics.vp_counts),
        tile_counts=metrics.tile_counts(), losses=list(getattr(policy, "losses", [])),
        final_cache=env.cache, runtime_s=time.perf_counter() - t0)
    if out_dir is not None:
        write_outputs(record, cfg, out_dir, *sweep_point)
        if isinstance(policy, DQNAgent):
            policy.net.save(out_dir / "checkpoint.json")
    return record


SUMMARY_HEADER = ["policy", "capacity", "cache_fraction", "eta_v", "viewport_mode", "eta_p",
                  "seed", "sets", "mean_psnr_db", "hit_ratio", "backhaul_gb", "mean_delta_db"]
SWEEP_HEADER = ["axis", "value", "policy", "seed", "mean_psnr_db", "hit_ratio", "backhaul_gb"]


def _summary_row(rec: MetricsRecord, cfg: ExperimentConfig) -> list:
    return [rec.policy, rec.capacity, repr(cfg.capacity / cfg.library.num_videos),
            repr(cfg.workload.eta_v), cfg.workload.viewports.mode,
            repr(cfg.workload.viewports.eta_p), rec.seed, rec.sets, repr(rec.mean_psnr),
            repr(rec.hit_ratio), repr(rec.backhaul_gb), repr(rec.mean_delta)]


def _write_csv(path: Path, header, rows) -> None:
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_outputs(rec: MetricsRecord, cfg: ExperimentConfig, out_dir: Path,
                  axis: str = "none", value="") -> None:
    out_dir = Path(out_dir)
    _write_csv(out_dir / "summary.csv", SUMMARY_HEADER, [_summary_row(rec, cfg)])
    _write_csv(out_dir / "sweep.csv", SWEEP_HEADER,
               [[axis, value, rec.policy, rec.seed, repr(rec.mean_psnr), repr(rec.hit_ratio),
                 repr(rec.backhaul_gb)]])
    _write_csv(out_dir / "viewport_hist.csv", ["viewport_id", "requests"],
               sorted(rec.viewport_counts.items()))
    _write_csv(out_dir / "tile_hist.csv", ["tile", "hq_requests"],
               [[m, int(c)] for m, c in enumerate(rec.tile_counts)])
    _write_csv(out_dir / "loss.csv", ["phase", "epoch_or_step", "loss"],
               [[p, s, repr(v)] for p, s, v in rec.losses])
    if rec.final_cache is not None:
        (out_dir / "cache.json").write_text(rec.final_cache.to_json() + "\n", encoding="utf-8")


def _sweep_job(args):
    cfg, out_dir, axis, value = args
    return run_experiment(cfg, out_dir, sweep_point=(axis, repr(float(value))))


def run_sweep(cfg: ExperimentConfig, axis: str, values, policies=None, out_dir=None,
              jobs: int = 1) -> list:
    """Run every (value, policy) point on matched seeds.

    Points are independent; with ``jobs > 1`` they run in worker processes and
    are merged back in (value, policy) order.  Writes ``sweep.csv`` at the top
    of ``out_dir`` with one row per point.
    """
    values = list(values)
    if not values:
        raise ConfigError("sweep values must be non-empty")
    policies = list(policies or [cfg.policy])
    tasks = []
    for value in values:
        for policy in policies:
            point = dataclasses.replace(cfg.with_axis(axis, value), policy=policy,
                                        sweep_axis=None, sweep_values=())
            sub = None if out_dir is None else Path(out_dir) / f"{axis}={value:g}" / policy
            tasks.append((point, sub, axis, value))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_sweep_job, tasks))
    else:
        records = [_sweep_job(t) for t in tasks]
    if out_dir is not None:
        _write_csv(Path(out_dir) / "sweep.csv", SWEEP_HEADER,
                   [[axis, repr(float(t[3])), r.policy, r.seed, repr(r.mean_psnr),
                     repr(r.hit_ratio), repr(r.backhaul_gb)] for t, r in zip(tasks, records)])
    return list(zip([t[3] for t in tasks], records))


def report(in_dir) -> Path:
    """Merge every summary.csv under ``in_dir`` into ``report.csv``; returns its path."""
    in_dir = Path(in_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"no such directory: {in_dir}")
    rows = []
    for path in sorted(in_dir.rglob("summary.csv")):
        with path.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                rel = path.parent.relative_to(in_dir).as_posix()
                rows.append([rel or "."] + [row[h] for h in SUMMARY_HEADER])
    if not rows:
        raise FileNotFoundError(f"no summary.csv found under {in_dir}")
    out = in_dir / "report.csv"
    _write_csv(out, ["run"] + SUMMARY_HEADER, rows)
    return out

import csv
import dataclasses
import json

import numpy as np
import pytest

from vvcache import cli
from vvcache.content import ConfigError, Layer, LibraryConfig, TileKey, enumerate_viewports
from vvcache.dqn import QNetwork, TrainerConfig
from vvcache.harness import (ExperimentConfig, compute_hit_ratio, compute_viewport_psnr,
                             config_from_mapping, load_config, report, run_experiment, run_sweep,
                             tile_popularity_report)
from vvcache.workload import ViewportDist, WorkloadConfig

FILES = ("summary.csv", "sweep.csv", "viewport_hist.csv", "tile_hist.csv", "loss.csv")


def tiny(policy="lfu", sets=100, seed=0, **wl):
    return ExperimentConfig(
        library=LibraryConfig(num_videos=20, num_gops=4), policy=policy, cache_fraction=0.1,
        workload=WorkloadConfig(total_sets=sets, seed=seed, **wl),
        trainer=TrainerConfig(warmup_sets=60, offline_epochs=3, batch_size=8, train_period=10,
                              target_period=10, buffer_size=200),
        short_window=10, long_window=30, horizon=5)


# ------------------------------------------------------------------ metrics

def test_viewport_psnr_examples(cfg):
    vp = (0, 1, 4, 5)
    full = {TileKey(0, 2, layer, m) for layer in Layer for m in vp}
    assert compute_viewport_psnr(full, vp, 0, 2, cfg) == 40
    base = {TileKey(0, 2, Layer.BASE, m) for m in vp}
    assert compute_viewport_psnr(base, vp, 0, 2, cfg) == 30
    assert compute_viewport_psnr(set(), vp, 0, 2, cfg) == 0
    # tiles of another GOP or video do not count
    assert compute_viewport_psnr(full, vp, 0, 3, cfg) == 0


def _delivery(base_hits, enh_hits, M=12, k=4, vp=1):
    return {"event": "delivery", "base_hits": base_hits, "enh_hits": enh_hits,
            "base_items": M, "enh_items": k, "requested_viewport": vp}


def test_hit_ratio_examples():
    assert compute_hit_ratio([_delivery(0, 0)] * 5) == 0
    assert compute_hit_ratio([_delivery(12, 4)] * 5) == 1
    assert compute_hit_ratio([_delivery(12, 2)] * 30) == pytest.approx(14 / 16)
    assert compute_hit_ratio([]) == 0


def test_tile_report_identity(cfg):
    rng = np.random.default_rng(0)
    events = [_delivery(0, 0, vp=int(v)) for v in rng.integers(1, 9, 500)]
    vp_counts, tiles = tile_popularity_report(events, cfg)
    for m in range(12):
        assert tiles[m] == sum(c for vp in enumerate_viewports(cfg) if m in vp.tiles
                               for c in [vp_counts[vp.id]])


def test_selective_histogram_is_point_mass():
    rec = run_experiment(tiny(sets=30, viewports=ViewportDist("selective", selective_id=3)))
    assert {k: v for k, v in rec.viewport_counts.items() if v} == {3: 30 * 4}


def test_uniform_viewports_spread_by_membership():
    """Each tile's share is the fraction of viewports containing it: columns
    are symmetric under wraparound, rows are not (the middle row sits in
    every viewport placement that the top or bottom row does)."""
    cfg = dataclasses.replace(tiny("noop", sets=2000, viewports=ViewportDist("zipf", eta_p=0.0)),
                              library=LibraryConfig(num_videos=20, num_gops=30))
    rec = run_experiment(cfg)
    total = sum(rec.viewport_counts.values())
    vps = enumerate_viewports(cfg.library)
    member = np.array([sum(m in vp.tiles for vp in vps) for m in range(12)])
    assert member.tolist() == [2] * 4 + [4] * 4 + [2] * 4
    expected = total * member / len(vps)
    assert np.all(np.abs(rec.tile_counts / expected - 1) < 0.03)
    # within a row every column gets the same share
    for row in rec.tile_counts.reshape(3, 4):
        assert np.all(np.abs(row / row.mean() - 1) < 0.03)


# ------------------------------------------------------------------ running

def _read(path):
    return path.read_bytes()


def test_run_writes_all_outputs(tmp_path):
    rec = run_experiment(tiny(), tmp_path)
    for name in FILES + ("cache.json",):
        assert (tmp_path / name).exists(), name
    with (tmp_path / "summary.csv").open() as fh:
        row = next(csv.DictReader(fh))
    assert row["policy"] == "lfu" and int(row["sets"]) == 100
    assert 0 <= rec.hit_ratio <= 1 and rec.backhaul_gb >= 0
    snap = json.loads((tmp_path / "cache.json").read_text())
    assert len(snap) == 2 and all({"slot", "video", "vv_tiles"} <= set(s) for s in snap)


@pytest.mark.parametrize("policy", ["lfu", "dqn"])
def test_same_seed_gives_identical_files(tmp_path, policy):
    run_experiment(dataclasses.replace(tiny(policy), write_events=True), tmp_path / "a")
    run_experiment(dataclasses.replace(tiny(policy), write_events=True), tmp_path / "b")
    names = FILES + ("cache.json", "events.jsonl") + (("checkpoint.json",) if policy == "dqn" else ())
    for name in names:
        assert _read(tmp_path / "a" / name) == _read(tmp_path / "b" / name), name


def test_dqn_checkpoint_and_loss(tmp_path):
    run_experiment(tiny("dqn"), tmp_path)
    net = QNetwork.load(tmp_path / "checkpoint.json")
    assert net.widths == (22, 11, 11, 11)
    with (tmp_path / "loss.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["epoch_or_step"] for r in rows if r["phase"] == "offline"] == ["1", "2", "3"]


def test_event_stream_schema(tmp_path):
    run_experiment(dataclasses.replace(tiny(sets=20), write_events=True), tmp_path)
    kinds = set()
    with (tmp_path / "events.jsonl").open() as fh:
        for line in fh:
            e = json.loads(line)
            kinds.add(e["event"])
            if e["event"] == "delivery":
                assert {"delivered", "dropped", "backhaul_mbit", "elapsed_s"} <= set(e)
    assert kinds == {"decision", "delivery", "settlement"}


def test_cache_sweep_rows(tmp_path):
    base = tiny(sets=30)
    base = dataclasses.replace(base, library=LibraryConfig(num_videos=40, num_gops=3))
    results = run_sweep(base, "cache", [5, 10, 15, 20, 25], ["lfu", "fifo"], tmp_path)
    assert len(results) == 10
    with (tmp_path / "sweep.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    for policy in ("lfu", "fifo"):
        assert [float(r["value"]) for r in rows if r["policy"] == policy] == [5, 10, 15, 20, 25]
    assert [rec.capacity for v, rec in results[::2]] == [2, 4, 6, 8, 10]
    out = report(tmp_path)
    with out.open() as fh:
        assert len(list(csv.DictReader(fh))) == 10


def test_parallel_sweep_matches_serial(tmp_path):
    base = tiny(sets=20)
    a = run_sweep(base, "eta_v", [0.8, 1.2], ["lru"], tmp_path / "s", jobs=1)
    b = run_sweep(base, "eta_v", [0.8, 1.2], ["lru"], tmp_path / "p", jobs=2)
    assert [r.mean_psnr for _, r in a] == [r.mean_psnr for _, r in b]
    assert _read(tmp_path / "s" / "sweep.csv") == _read(tmp_path / "p" / "sweep.csv")


# ------------------------------------------------------------------ configs

CONFIG = """\
[library]
videos = 20
gops = 4

[workload]
eta_v = 1.2
viewport_mode = zipf
eta_p = 1.5
request_sets = 40
seed = 3

[delay]
d_sbs_s_per_mbit = 1/6
d_mbs_s_per_mbit = 0.5

[cache]
cache_fraction = 0.1
short_window = 10
long_window = 20
reward_horizon = 5

[trainer]
warmup_sets = 50
offline_epochs = 2
batch_size = 8

[experiment]
policy = lru
"""


def test_load_config(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(CONFIG)
    cfg = load_config(path)
    assert cfg.library.num_videos == 20 and cfg.workload.eta_v == 1.2
    assert cfg.workload.viewports.eta_p == 1.5 and cfg.capacity == 2
    assert cfg.trainer.offline_epochs == 2 and cfg.trainer.learning_rate == 1e-3
    assert cfg.delay.d_mbs == 0.5 and cfg.horizon == 5 and cfg.policy == "lru"


@pytest.mark.parametrize("sections, match", [
    ({"library": {"colour": "1"}}, "unknown"),
    ({"workload": {"eta_v": "abc"}}, "bad value"),
    ({"experiment": {"policy": "arc"}}, "unknown policy"),
    ({"cache": {"cache_fraction": "0.0001"}}, "at least one"),
    ({"workload": {"viewport_mode": "spiral"}}, "viewport mode"),
    ({"experiment": {"sweep_axis": "cache"}}, "non-empty"),
])
def test_config_errors(sections, match):
    with pytest.raises(ConfigError, match=match):
        config_from_mapping(sections)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


# ---------------------------------------------------------------------- CLI

def test_cli_run_sweep_report(tmp_path, capsys):
    path = tmp_path / "c.ini"
    path.write_text(CONFIG)
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(path), "--policy", "fifo", "--seed", "4",
                     "--out", str(out), "--events"]) == 0
    assert all((out / f).exists() for f in FILES + ("events.jsonl",))
    with (out / "summary.csv").open() as fh:
        row = next(csv.DictReader(fh))
    assert row["policy"] == "fifo" and row["seed"] == "4"
    sweep = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", str(path), "--axis", "eta_p", "--values", "0.5,2.5",
                     "--policy", "lfu,lru", "--out", str(sweep)]) == 0
    with (sweep / "sweep.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 4
    assert cli.main(["report", "--in", str(sweep)]) == 0
    assert (sweep / "report.csv").exists()
    assert "report.csv" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    assert "cannot read config" in capsys.readouterr().err
    assert cli.main(["report", "--in", str(tmp_path / "none")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["sweep", "--config", "x", "--axis", "size", "--values", "1"])

"""Proactive edge caching of tiled, layered 360-degree video.

A simulator of one small-cell base station that caches whole videos in base
quality plus a per-video "virtual viewport" of high-quality tiles, together
with a deep Q-network caching policy and LFU/LRU/FIFO baselines.
"""
from .baselines import FIFOPolicy, LFUPolicy, LRUPolicy, NoOpPolicy, OraclePolicy, make_baseline
from .cache import CacheState, RequestHistory, extract_features
from .content import ConfigError, Layer, LibraryConfig, TileKey, Viewport, enumerate_viewports
from .delivery import DelayConfig, DeliveryPlan, schedule_gop_delivery
from .dqn import DQNAgent, QNetwork, TrainerConfig
from .env import CachingEnv, Policy
from .harness import ExperimentConfig, MetricsRecord, load_config, run_experiment, run_sweep
from .workload import RequestSet, RequestStream, ViewportDist, WorkloadConfig

__version__ = "0.1.0"

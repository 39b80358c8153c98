"""Video catalogue, tile addressing and viewport geometry.

Videos are split into GOPs; every GOP is encoded as ``num_tiles`` tiles in a
base and one enhancement layer.  Tiles are laid out row-major on a
``grid_cols`` x ``grid_rows`` grid.  Requestable viewports are contiguous
rectangles of ``viewport_tiles`` tiles that may wrap around horizontally.

Viewport ids are 1-based (``1..num_viewports``); tile, GOP and video indices
are 0-based.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np


class ConfigError(ValueError):
    """Raised for an inconsistent configuration."""


class Layer(enum.IntEnum):
    BASE = 0
    ENHANCEMENT = 1


class TileKey(NamedTuple):
    video: int
    gop: int
    layer: Layer
    tile: int


def exact(value) -> Fraction:
    """Return ``value`` as a Fraction.

    Floats are snapped to the nearest fraction with a denominator below 1e9,
    so ``1/6`` typed as ``0.1666...`` becomes exactly ``Fraction(1, 6)``.
    Strings such as ``"1/6"`` are parsed directly.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    return Fraction(float(value)).limit_denominator(10**9)


@dataclass(frozen=True)
class LibraryConfig:
    num_videos: int = 500
    num_gops: int = 30
    num_tiles: int = 12
    num_layers: int = 2
    viewport_tiles: int = 4
    base_bitrate: float = 2.0  # Mbit/s
    enh_bitrate: float = 12.0  # Mbit/s
    gop_duration: float = 1.0  # s
    base_gain: float = 30.0  # dB
    enh_gain: float = 10.0  # dB
    grid_cols: int = 4
    grid_rows: int = 3
    # Optional explicit viewport rectangle; chosen automatically when None.
    viewport_cols: int | None = None
    viewport_rows: int | None = None

    def __post_init__(self):
        if self.num_videos < 1 or self.num_gops < 1:
            raise ConfigError("need at least one video and one GOP")
        if self.num_layers != 2:
            raise ConfigError("only a base and one enhancement layer are supported")
        if self.grid_cols * self.grid_rows != self.num_tiles:
            raise ConfigError(
                f"grid {self.grid_cols}x{self.grid_rows} does not hold {self.num_tiles} tiles")
        if not 1 <= self.viewport_tiles <= self.num_tiles:
            raise ConfigError("viewport_tiles must be in [1, num_tiles]")
        for name in ("base_bitrate", "enh_bitrate", "gop_duration"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("base_gain", "enh_gain"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @property
    def max_set_distortion(self) -> float:
        """Distortion reduction of one request set with every tile delivered."""
        return self.num_gops * (self.num_tiles * self.base_gain
                                + self.viewport_tiles * self.enh_gain)


@dataclass(frozen=True)
class Viewport:
    id: int
    tiles: tuple[int, ...]


@dataclass(frozen=True)
class VirtualViewport:
    """k cached high-quality tiles of one video, indexed by tile-slot."""
    tiles: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.tiles)) != len(self.tiles):
            raise ValueError(f"duplicate tiles in virtual viewport {self.tiles}")


def check_key(cfg: LibraryConfig, key: TileKey) -> None:
    if not 0 <= key.video < cfg.num_videos:
        raise IndexError(f"video {key.video} out of range")
    if not 0 <= key.gop < cfg.num_gops:
        raise IndexError(f"gop {key.gop} out of range")
    if key.layer not in (Layer.BASE, Layer.ENHANCEMENT):
        raise IndexError(f"layer {key.layer} out of range")
    if not 0 <= key.tile < cfg.num_tiles:
        raise IndexError(f"tile {key.tile} out of range")


def layer_tile_size(cfg: LibraryConfig, layer: Layer) -> Fraction:
    """Exact size in Mbit of one tile of ``layer``."""
    rate = cfg.base_bitrate if layer == Layer.BASE else cfg.enh_bitrate
    return exact(rate) * exact(cfg.gop_duration) / cfg.num_tiles


def tile_size(cfg: LibraryConfig, key: TileKey) -> float:
    """Size of one tile in Mbit; the layer bitrate is split evenly over the tiles."""
    check_key(cfg, key)
    return float(layer_tile_size(cfg, key.layer))


def distortion_gain(cfg: LibraryConfig, layer: Layer) -> float:
    """Distortion reduction in dB from receiving one tile of ``layer``."""
    return cfg.base_gain if layer == Layer.BASE else cfg.enh_gain


def viewport_shape(cfg: LibraryConfig) -> tuple[int, int]:
    """(cols, rows) of the viewport rectangle.

    Among the factorisations of ``viewport_tiles`` that fit the grid, the most
    square one is used, preferring wide over tall.
    """
    k = cfg.viewport_tiles
    if cfg.viewport_cols is not None or cfg.viewport_rows is not None:
        cols = cfg.viewport_cols or k // (cfg.viewport_rows or 1)
        rows = cfg.viewport_rows or k // cols
        if cols * rows != k or cols > cfg.grid_cols or rows > cfg.grid_rows:
            raise ConfigError(f"viewport {cols}x{rows} does not fit k={k} on the grid")
        return cols, rows
    shapes = [(c, k // c) for c in range(1, k + 1)
              if k % c == 0 and c <= cfg.grid_cols and k // c <= cfg.grid_rows]
    if not shapes:
        raise ConfigError(
            f"k={k} is not a rectangle on a {cfg.grid_cols}x{cfg.grid_rows} grid")
    return min(shapes, key=lambda s: (abs(s[0] - s[1]), -s[0]))


@lru_cache(maxsize=None)
def enumerate_viewports(cfg: LibraryConfig) -> tuple[Viewport, ...]:
    """All requestable viewports, ids assigned row-major starting at 1.

    Rectangles slide over every row offset that fits and every column offset
    with horizontal wraparound; placements with identical tile sets are kept
    once.
    """
    cols, rows = viewport_shape(cfg)
    seen = set()
    out = []
    for r0 in range(cfg.grid_rows - rows + 1):
        for c0 in range(cfg.grid_cols):
            tiles = tuple(sorted(
                (r0 + dr) * cfg.grid_cols + (c0 + dc) % cfg.grid_cols
                for dr in range(rows) for dc in range(cols)))
            if tiles in seen:
                continue
            seen.add(tiles)
            out.append(Viewport(id=len(out) + 1, tiles=tiles))
    return tuple(out)


def num_viewports(cfg: LibraryConfig) -> int:
    return len(enumerate_viewports(cfg))


@lru_cache(maxsize=None)
def viewport_tile_matrix(cfg: LibraryConfig) -> np.ndarray:
    """0/1 matrix of shape (num_viewports + 1, num_tiles); row ``id`` marks the tiles
    of viewport ``id`` and row 0 is all zero."""
    vps = enumerate_viewports(cfg)
    mat = np.zeros((len(vps) + 1, cfg.num_tiles), dtype=np.int64)
    for vp in vps:
        mat[vp.id, list(vp.tiles)] = 1
    mat.setflags(write=False)
    return mat


def viewport_overlap(a, b) -> int:
    """Number of tiles shared by two (virtual) viewports."""
    return len(set(a.tiles) & set(b.tiles))

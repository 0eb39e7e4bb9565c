"""Signal strength, cross-instance consistency and misalignment sensitivity reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, InsufficientInstances, SelfAligningSkin
from .magnetics import N_CHANNELS, N_SENSORS, MagnetometerGrid, SensorReading, sample_grid
from .skins import PRESET_NAMES, SkinInstance, generate_instance, preset

SELF_ALIGNING = "self-aligning"
# Aligned placement first, then 1 unit toward each side.
PLACEMENTS = ((0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0))


def _as_values(readings) -> np.ndarray:
    if isinstance(readings, np.ndarray):
        v = readings.reshape(-1, N_CHANNELS)
    else:
        v = np.array([r.values if isinstance(r, SensorReading) else r for r in readings], dtype=float)
        v = v.reshape(-1, N_CHANNELS)
    if v.shape[0] == 0:
        raise EmptyInput("no readings")
    return v


def _groups(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = values.reshape(-1, N_SENSORS, 3)
    return v[:, :, :2].reshape(len(v), -1), v[:, :, 2]


def signal_strength(readings) -> tuple[float, float]:
    """Mean |B| over every x/y channel and over every z channel, in uT."""
    xy, z = _groups(_as_values(readings))
    return float(np.abs(xy).mean()), float(np.abs(z).mean())


def normalized_std(values) -> tuple[float, float]:
    """Per-channel std across rows, averaged within the xy and z groups, over the group's mean |B|.

    Population std (ddof=0). A group whose mean |B| is zero has no spread to
    report and yields 0.
    """
    xy, z = _groups(_as_values(values))
    out = []
    for g in (xy, z):
        # shifting by the first row keeps identical rows at exactly zero spread
        spread = (g - g[0]).std(axis=0).mean()
        scale = np.abs(g).mean()
        out.append(float(spread / scale) if scale > 0 else 0.0)
    return out[0], out[1]


def cross_instance_std(instances: Sequence[SkinInstance], grid: MagnetometerGrid) -> tuple[float, float]:
    if len(instances) < 2:
        raise InsufficientInstances(f"need at least 2 instances, got {len(instances)}")
    ids = {inst.config_id for inst in instances}
    if len(ids) > 1:
        raise ValueError(f"instances mix configs: {sorted(ids)}")
    return normalized_std(np.stack([sample_grid(i.positions, i.moments, grid) for i in instances]))


def misalignment_values(instance: SkinInstance, grid: MagnetometerGrid, offset_mm: float = 1.0,
                        background_ut=None) -> np.ndarray:
    """Readings for the aligned placement and a shift of ``offset_mm`` toward each side."""
    shifts = np.array([[dx, dy, 0.0] for dx, dy in PLACEMENTS]) * offset_mm * 1e-3
    values = sample_grid(instance.positions[None] + shifts[:, None, :], instance.moments, grid)
    if background_ut is not None:
        values = values + np.tile(np.asarray(background_ut, dtype=float).reshape(3), N_SENSORS)
    return values


def misalignment_std(instance: SkinInstance, grid: MagnetometerGrid, offset_mm: float = 1.0,
                     background_ut=None) -> tuple[float, float]:
    if instance.config.alignment == "self_aligning":
        raise SelfAligningSkin(f"{instance.config_id} is self-aligning; misalignment is not defined")
    if not offset_mm > 0:
        raise ValueError("offset must be positive")
    return normalized_std(misalignment_values(instance, grid, offset_mm, background_ut))


@dataclass(frozen=True)
class ConsistencyRow:
    preset: str
    mean_bxy_ut: float
    mean_bz_ut: float
    norm_std_xy: float
    norm_std_z: float
    misalign_std_xy: float | None  # None for self-aligning skins
    misalign_std_z: float | None

    @property
    def self_aligning(self) -> bool:
        return self.misalign_std_xy is None


CSV_COLUMNS = tuple(f.name for f in fields(ConsistencyRow))


@dataclass(frozen=True)
class ConsistencyReport:
    rows: tuple[ConsistencyRow, ...]
    n_instances: int
    seed: int

    def row(self, preset_name: str) -> ConsistencyRow:
        for r in self.rows:
            if r.preset == preset_name:
                return r
        raise KeyError(preset_name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.preset] + [SELF_ALIGNING if v is None else repr(float(v))
                                     for v in (r.mean_bxy_ut, r.mean_bz_ut, r.norm_std_xy, r.norm_std_z,
                                               r.misalign_std_xy, r.misalign_std_z)])
        return buf.getvalue()

    @staticmethod
    def rows_from_csv(text: str) -> tuple[ConsistencyRow, ...]:
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        rows = []
        for rec in reader:
            vals = [None if v == SELF_ALIGNING else float(v) for v in rec[1:]]
            rows.append(ConsistencyRow(rec[0], *vals))
        return tuple(rows)

    def to_markdown(self) -> str:
        lines = ["| preset | mean Bxy (uT) | mean Bz (uT) | cross-instance std xy | cross-instance std z"
                 " | 1 mm misalignment std xy | 1 mm misalignment std z |",
                 "|---|---:|---:|---:|---:|---:|---:|"]
        for r in self.rows:
            mis = ([SELF_ALIGNING] * 2 if r.self_aligning
                   else [f"{r.misalign_std_xy:.3f}", f"{r.misalign_std_z:.3f}"])
            lines.append(f"| {r.preset} | {r.mean_bxy_ut:.1f} | {r.mean_bz_ut:.1f} | {r.norm_std_xy:.3f}"
                         f" | {r.norm_std_z:.3f} | {mis[0]} | {mis[1]} |")
        return "\n".join(lines) + "\n"


def instance_seeds(seed: int, n_instances: int) -> list[int]:
    return [seed * 1000 + k for k in range(n_instances)]


def report_row(name: str, grid: MagnetometerGrid, n_instances: int = 5, seed: int = 0,
               config=None) -> ConsistencyRow:
    cfg = config if config is not None else preset(name)
    insts = [generate_instance(cfg, s) for s in instance_seeds(seed, n_instances)]
    base = np.stack([sample_grid(i.positions, i.moments, grid) for i in insts])
    bxy, bz = signal_strength(base)
    sxy, sz = normalized_std(base)
    if cfg.alignment == "self_aligning":
        mxy = mz = None
    else:
        mxy, mz = misalignment_std(insts[0], grid)
    return ConsistencyRow(name, bxy, bz, sxy, sz, mxy, mz)


def table_report(presets: Iterable[str] = PRESET_NAMES, n_instances: int = 5, seed: int = 0,
                 grid: MagnetometerGrid | None = None) -> ConsistencyReport:
    """One row per preset over ``n_instances`` skins drawn from ``seed``."""
    if n_instances < 2:
        raise InsufficientInstances("n_instances must be >= 2")
    grid = grid or MagnetometerGrid.default()
    rows = tuple(report_row(p, grid, n_instances, seed) for p in presets)
    return ConsistencyReport(rows, n_instances, seed)

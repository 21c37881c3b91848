"""Propagation of rig calibration error into gaze-label deviation.

The environment is the simulator default: camera at the CCS origin, true
extrinsics ``R = I, T = 0``, a 50 x 30 cm screen and a constant gaze origin
60 cm in front of it.  Deviation ``E_g`` is the angle between the gaze
computed with the true and with the perturbed extrinsics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import seeding
from .geometry import angular_error, euler_to_rotation_batch, gaze_direction, screen_to_camera
from .simulator import CALIB_FIELDS, DEFAULT_ORIGIN_MEAN, DEFAULT_SCREEN

GRID_SHAPE = (21, 13)
_CHUNK = 1024


def target_grid(screen=DEFAULT_SCREEN, shape=GRID_SHAPE) -> np.ndarray:
    """Uniform ``nu x nv`` grid of screen targets, ``(nu * nv, 2)`` cm."""
    u0, u1, v0, v1 = screen
    uu, vv = np.meshgrid(np.linspace(u0, u1, shape[0]), np.linspace(v0, v1, shape[1]))
    return np.column_stack([uu.ravel(), vv.ravel()])


@dataclass
class SensitivityConfig:
    grid: Sequence[float] = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
    n_targets: int = GRID_SHAPE[0] * GRID_SHAPE[1]
    n_systems: int = 10_000
    tau: float = 1.0
    mu: float = 0.0
    seed: int = 0
    screen: tuple = DEFAULT_SCREEN
    origin: tuple = DEFAULT_ORIGIN_MEAN

    def __post_init__(self):
        if self.n_targets < 1 or self.n_systems < 1:
            raise ValueError("n_targets and n_systems must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")

    def targets(self) -> np.ndarray:
        grid = target_grid(self.screen)
        if self.n_targets == len(grid):
            return grid
        # Non-default sizes fall back to a near-square grid of that many points.
        nu = max(1, int(round(math.sqrt(self.n_targets * 5 / 3))))
        nv = max(1, int(math.ceil(self.n_targets / nu)))
        return target_grid(self.screen, (nu, nv))[: self.n_targets]


@dataclass
class DeviationRow:
    key: object  # variable name, or tau for sweeps
    offset: float
    mean_deg: float
    std_deg: float


@dataclass
class DeviationTable:
    rows: list = field(default_factory=list)

    def means(self) -> np.ndarray:
        return np.array([r.mean_deg for r in self.rows])

    def lookup(self, key, offset) -> DeviationRow:
        for r in self.rows:
            if r.key == key and np.isclose(r.offset, offset):
                return r
        raise KeyError((key, offset))

    def write_sensitivity_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "offset", "mean_deg", "std_deg"])
            for r in self.rows:
                w.writerow([r.key, fmt(r.offset), fmt(r.mean_deg), fmt(r.std_deg)])

    def write_sweep_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau", "mean_deg", "std_deg"])
            for r in self.rows:
                w.writerow([fmt(r.key), fmt(r.mean_deg), fmt(r.std_deg)])


def fmt(x) -> str:
    """Six significant digits, no negative zero."""
    s = f"{float(x):.6g}"
    return "0" if s == "-0" else s


def deviation_per_system(errors, targets, origin=DEFAULT_ORIGIN_MEAN) -> np.ndarray:
    """Mean ``E_g`` over ``targets`` for each row of an ``(n, 6)`` error array.

    Error rows are ``(pitch, yaw, roll, x, y, z)`` in degrees and cm on top of
    identity true extrinsics.
    """
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    origin = np.asarray(origin, dtype=float)
    t_true = screen_to_camera(targets, np.eye(3), np.zeros(3))
    g_true = gaze_direction(origin, t_true)
    out = np.empty(len(errors))
    for s in range(0, len(errors), _CHUNK):
        e = errors[s:s + _CHUNK]
        rot = euler_to_rotation_batch(e[:, :3])
        t_rec = np.einsum("nij,kj->nki", rot, t_true) + e[:, None, 3:]
        out[s:s + _CHUNK] = angular_error(gaze_direction(origin, t_rec), g_true[None]).mean(axis=1)
    return out


def single_variable_sensitivity(cfg: SensitivityConfig) -> DeviationTable:
    """Deviation when exactly one calibration variable is offset.

    ``std_deg`` is the spread of ``E_g`` across targets.
    """
    targets = cfg.targets()
    origin = np.asarray(cfg.origin, dtype=float)
    t_true = screen_to_camera(targets, np.eye(3), np.zeros(3))
    g_true = gaze_direction(origin, t_true)
    table = DeviationTable()
    for k, name in enumerate(CALIB_FIELDS):
        for off in cfg.grid:
            e = np.zeros((1, 6))
            e[0, k] = off
            rot = euler_to_rotation_batch(e[:, :3])[0]
            t_rec = t_true @ rot.T + e[0, 3:]
            eg = angular_error(gaze_direction(origin, t_rec), g_true)
            table.rows.append(DeviationRow(name, float(off), float(eg.mean()), float(eg.std())))
    return table


def _standard_draws(cfg: SensitivityConfig) -> np.ndarray:
    return seeding.stream(cfg.seed, seeding.ANALYSIS).standard_normal((cfg.n_systems, 6))


def monte_carlo_deviation(cfg: SensitivityConfig, draws=None) -> tuple:
    """Grand mean and across-system std of ``E_g`` for coupled Gaussian errors.

    Every variable of every simulated rig is drawn from ``N(mu, tau**2)``.
    The same standard-normal draws are reused for any ``tau`` with the same
    seed, so sweeps use common random numbers.
    """
    if draws is None:
        draws = _standard_draws(cfg)
    per_system = deviation_per_system(cfg.mu + cfg.tau * draws, cfg.targets(), cfg.origin)
    mean = math.fsum(per_system) / len(per_system)
    std = float(np.std(per_system))
    return mean, std


def scaling_sweep(taus, cfg: SensitivityConfig) -> DeviationTable:
    if len(taus) == 0:
        raise ValueError("taus must be non-empty")
    if any(t < 0 for t in taus):
        raise ValueError("taus must be non-negative")
    draws = _standard_draws(cfg)
    table = DeviationTable()
    for tau in taus:
        sub = SensitivityConfig(cfg.grid, cfg.n_targets, cfg.n_systems, float(tau), cfg.mu, cfg.seed, cfg.screen, cfg.origin)
        mean, std = monte_carlo_deviation(sub, draws)
        table.rows.append(DeviationRow(float(tau), float(tau), mean, std))
    return table


def fit_through_origin(x, y) -> tuple:
    """Least-squares slope of ``y = k x`` and R^2 against the mean of ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = float(x @ y / (x @ x))
    ss_res = float(np.sum((y - k * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return k, 1.0 - ss_res / ss_tot


def fit_line(x, y) -> tuple:
    """Ordinary least-squares ``y = a x + b``; returns ``(a, b, r2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a, b = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (a * x + b)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(a), float(b), 1.0 - ss_res / ss_tot

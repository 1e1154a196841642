"""Grid localisation MDP over a floor instrumented with BLE beacons.

Cells are addressed ``(row, col)``; rows grow southward and columns grow
eastward. Metric coordinates put the origin at the north-west corner of the
floor with ``x`` pointing east and ``y`` pointing south, so the centre of cell
``(r, c)`` sits at ``((c + 0.5) * cell_size, (r + 0.5) * cell_size)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .features import RSSI_MAX, RSSI_MIN, SENTINEL, FeatureConfig, featurize_array

READINGS_PER_SAMPLE = 3

# Table of moves: index -> (name, d_row, d_col)
ACTIONS = (
    ("W", 0, -1),
    ("E", 0, 1),
    ("N", -1, 0),
    ("S", 1, 0),
    ("NW", -1, -1),
    ("NE", -1, 1),
    ("SW", 1, -1),
    ("SE", 1, 1),
)
N_ACTIONS = len(ACTIONS)


class DatasetError(ValueError):
    pass


def default_beacons(rows: int, cols: int, cell_size: float = 3.048, seed: int = 0):
    """13 beacons on a jittered 4x4 lattice with three corners removed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    width, height = cols * cell_size, rows * cell_size
    sx, sy = width / 4.0, height / 4.0
    dropped = {(0, 3), (3, 0), (3, 3)}
    out = []
    for i in range(4):
        for j in range(4):
            if (i, j) in dropped:
                continue
            jx, jy = rng.uniform(-0.15, 0.15, size=2)
            out.append(((j + 0.5 + jx) * sx, (i + 0.5 + jy) * sy))
    return tuple(out)


@dataclass(frozen=True)
class GridWorld:
    rows: int = 8
    cols: int = 8
    cell_size: float = 3.048
    beacons: tuple = ()
    pathloss_n: float = 2.0
    offset_a: float = -60.0
    noise_sigma: float = 2.0
    delta: float = 3.0
    hearing_radius: float = 25.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")
        if not self.beacons:
            object.__setattr__(self, "beacons", default_beacons(self.rows, self.cols, self.cell_size))
        object.__setattr__(self, "beacons", tuple((float(x), float(y)) for x, y in self.beacons))
        if self.pathloss_n <= 0:
            raise ValueError("pathloss_n must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def n_beacons(self) -> int:
        return len(self.beacons)

    @property
    def width(self) -> float:
        return self.cols * self.cell_size

    @property
    def height(self) -> float:
        return self.rows * self.cell_size

    def cell_center(self, cell):
        r, c = cell
        return ((c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size)

    def cell_index(self, cell) -> int:
        return cell[0] * self.cols + cell[1]

    def index_cell(self, index: int):
        return divmod(int(index), self.cols)

    def contains(self, cell) -> bool:
        return 0 <= cell[0] < self.rows and 0 <= cell[1] < self.cols

    def cell_distance(self, a, b) -> float:
        """Centre-to-centre distance in metres."""
        return self.cell_size * math.hypot(a[0] - b[0], a[1] - b[1])

    def cap_reward(self) -> float:
        return 1.0 / (self.cell_size / 2.0)

    def with_noise(self, sigma: float) -> "GridWorld":
        return replace(self, noise_sigma=sigma)


def synth_rssi(world: GridWorld, pos, rng=None, noise: bool = True) -> np.ndarray:
    """Log-distance path-loss reading from every beacon at metric ``pos``.

    Without ``rng`` (or with ``noise=False``) the reading is noiseless.
    """
    x, y = float(pos[0]), float(pos[1])
    if not (0.0 <= x <= world.width and 0.0 <= y <= world.height):
        raise ValueError(f"position {pos} lies outside the {world.width} x {world.height} m floor")
    return synth_rssi_many(world, np.array([[x, y]]), rng, noise)[0]


def synth_rssi_many(world: GridWorld, positions, rng=None, noise: bool = True) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    beacons = np.asarray(world.beacons)
    d = np.linalg.norm(positions[:, None, :] - beacons[None, :, :], axis=-1)
    rssi = -10.0 * world.pathloss_n * np.log10(np.maximum(d, 0.1)) + world.offset_a
    if noise and rng is not None and world.noise_sigma > 0:
        rssi = rssi + rng.normal(0.0, world.noise_sigma, size=rssi.shape)
    rssi = np.clip(rssi, RSSI_MIN, RSSI_MAX)
    rssi[d > world.hearing_radius] = SENTINEL
    return rssi


def apply_action(world: GridWorld, position, action: int):
    """Move one cell; moves off the grid clamp to the boundary."""
    if isinstance(action, bool) or not isinstance(action, (int, np.integer)) or not 0 <= action < N_ACTIONS:
        raise ValueError(f"action must be an integer in 0..{N_ACTIONS - 1}, got {action!r}")
    _, dr, dc = ACTIONS[action]
    r = min(max(position[0] + dr, 0), world.rows - 1)
    c = min(max(position[1] + dc, 0), world.cols - 1)
    return (int(r), int(c))


def reward(world: GridWorld, observed, target) -> float:
    """Reciprocal distance inside ``delta``, negative distance beyond it.

    Distance zero would be singular; it returns the reward at half a cell.
    """
    dist = world.cell_distance(observed, target)
    if dist == 0.0:
        return world.cap_reward()
    if dist <= world.delta:
        return 1.0 / dist
    return -dist


@dataclass(frozen=True, eq=True)
class FingerprintSample:
    readings: np.ndarray  # (3, n_beacons)
    label: Optional[tuple] = None
    position: Optional[tuple] = field(default=None, compare=False)  # synthetic ground truth

    def __post_init__(self):
        readings = np.array(self.readings, dtype=np.float64)
        if readings.ndim != 2 or readings.shape[0] != READINGS_PER_SAMPLE:
            raise DatasetError(f"a sample needs {READINGS_PER_SAMPLE} readings, got shape {readings.shape}")
        ok = ((readings >= RSSI_MIN) & (readings <= RSSI_MAX)) | (readings == SENTINEL)
        if not np.all(ok):
            raise DatasetError("RSSI readings must lie in [-100, 0] or equal -200")
        readings.setflags(write=False)
        object.__setattr__(self, "readings", readings)
        if self.label is not None:
            object.__setattr__(self, "label", (int(self.label[0]), int(self.label[1])))

    @property
    def labeled(self) -> bool:
        return self.label is not None

    def __eq__(self, other):
        if not isinstance(other, FingerprintSample):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.readings, other.readings)


@dataclass
class AgentState:
    position: tuple
    observation: np.ndarray  # (3, feature_dim)
    target: Optional[tuple] = None
    step_index: int = 0
    horizon: int = 10
    terminal: bool = False


@dataclass
class StepResult:
    next_state: AgentState
    reward: float
    terminal: bool
    reached: bool = False  # terminal because the goal cell was reached


def reset(world: GridWorld, sample: FingerprintSample, rng, feature_config=None, horizon: int = 10) -> AgentState:
    """Start an episode for ``sample`` from a uniformly random cell."""
    if not isinstance(sample, FingerprintSample):
        raise DatasetError("reset needs a FingerprintSample")
    feature_config = feature_config or FeatureConfig(n_beacons=world.n_beacons)
    if sample.readings.shape != (READINGS_PER_SAMPLE, world.n_beacons):
        raise DatasetError(
            f"sample readings {sample.readings.shape} do not match {world.n_beacons} beacons"
        )
    if sample.label is not None and not world.contains(sample.label):
        raise DatasetError(f"label {sample.label} outside the {world.rows}x{world.cols} grid")
    start = world.index_cell(rng.integers(world.n_cells))
    obs = featurize_array(feature_config, sample.readings)
    return AgentState(position=start, observation=obs, target=sample.label, horizon=horizon)


def step(world: GridWorld, state: AgentState, action: int, inferred=None) -> StepResult:
    """Advance one move. Unlabeled episodes pass the agent's inferred cell."""
    if state.terminal:
        raise RuntimeError("episode already terminated")
    goal = state.target if state.target is not None else inferred
    if goal is None:
        raise ValueError("unlabeled episode needs an inferred target cell")
    position = apply_action(world, state.position, action)
    r = reward(world, position, goal)
    reached = position == tuple(goal)
    step_index = state.step_index + 1
    terminal = reached or step_index >= state.horizon
    nxt = replace(state, position=position, step_index=step_index, terminal=terminal)
    return StepResult(nxt, r, terminal, reached)


def generate_dataset(world: GridWorld, labeled_per_cell: int, unlabeled_total: int, rng) -> list:
    """Labeled bundles at every cell centre, unlabeled ones at random points."""
    if labeled_per_cell < 0 or unlabeled_total < 0:
        raise ValueError("counts must be non-negative")
    samples = []
    for r in range(world.rows):
        for c in range(world.cols):
            center = world.cell_center((r, c))
            for _ in range(labeled_per_cell):
                pos = np.tile(center, (READINGS_PER_SAMPLE, 1))
                samples.append(FingerprintSample(synth_rssi_many(world, pos, rng), (r, c), center))
    for _ in range(unlabeled_total):
        pos = (rng.uniform(0.0, world.width), rng.uniform(0.0, world.height))
        rssi = synth_rssi_many(world, np.tile(pos, (READINGS_PER_SAMPLE, 1)), rng)
        samples.append(FingerprintSample(rssi, None, pos))
    return samples


def dataset_header(n_beacons: int = 13):
    return ["row", "col"] + [f"rssi_{i + 1}" for i in range(n_beacons)]


def save_dataset(path, samples) -> None:
    samples = list(samples)
    n_beacons = samples[0].readings.shape[1] if samples else 13
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset_header(n_beacons))
        for s in samples:
            row, col = ("", "") if s.label is None else s.label
            for reading in s.readings:
                writer.writerow([row, col] + [repr(float(v)) for v in reading])


def load_dataset(path, n_beacons: int = 13) -> list:
    """Read the scan CSV and bundle consecutive scans of the same cell in threes.

    Unlabeled rows (empty ``row``/``col``) form their own stream. Incomplete
    trailing bundles are dropped.
    """
    header = dataset_header(n_beacons)
    pending: dict = {}
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != header:
            raise DatasetError(f"{path}:1: expected header {','.join(header)}")
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
            row, col = fields[0].strip(), fields[1].strip()
            if (row == "") != (col == ""):
                raise DatasetError(f"{path}:{lineno}: row and col must both be set or both empty")
            try:
                label = None if row == "" else (int(row), int(col))
                values = [float(v) for v in fields[2:]]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if label is not None and (label[0] < 0 or label[1] < 0):
                raise DatasetError(f"{path}:{lineno}: negative cell index")
            for v in values:
                if not (RSSI_MIN <= v <= RSSI_MAX or v == SENTINEL):
                    raise DatasetError(f"{path}:{lineno}: RSSI {v} outside [-100, 0] and not -200")
            bucket = pending.setdefault(label, [])
            bucket.append(values)
            if len(bucket) == READINGS_PER_SAMPLE:
                samples.append(FingerprintSample(np.array(bucket), label))
                pending[label] = []
    return samples

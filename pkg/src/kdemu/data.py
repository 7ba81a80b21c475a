"""Data model shared by every learner: parameter vectors, time grids,
trajectories, normalization, sampling, the train/test protocol and the
error metric.

All values are stored in fixed conventions: the distribution coefficient
as its natural log, calcium concentration as log10 molar, surface areas
as log10 cm^2/g. Raw Kd appears only at I/O boundaries.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

PARAM_NAMES = ("ilsoh", "smsoh", "ph", "ca", "smectite", "illite", "calcite")

# Per-dimension sampling box. The pH interval is stored low-to-high.
PARAM_MIN = np.array([3.0, 3.0, 7.0, -3.0, 0.3, 0.01, 0.01])
PARAM_MAX = np.array([6.0, 6.0, 9.0, -1.0, 0.95, 0.2, 0.03])

# Nominal mid-case used in docs and tests. The published illite fraction
# (1e-4) sits below the sampling range floor and is clipped to it.
REFERENCE_PARAMS = (5.0, 5.0, 7.96, -1.66, 0.92, 0.01, 0.01)

_PARAM_MID = (PARAM_MIN + PARAM_MAX) / 2.0
_PARAM_HALF = (PARAM_MAX - PARAM_MIN) / 2.0


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class BoundsError(DataError):
    """A parameter lies outside its sampling box; carries the field name."""

    def __init__(self, name: str, value: float, lo: float, hi: float):
        self.field = name
        super().__init__(f"parameter '{name}'={value!r} outside bounds [{lo}, {hi}]")


@dataclass(frozen=True)
class ParameterVector:
    """The seven hydrological/geochemical inputs, physical units."""

    ilsoh: float
    smsoh: float
    ph: float
    ca: float
    smectite: float
    illite: float
    calcite: float

    def __post_init__(self):
        for i, name in enumerate(PARAM_NAMES):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < PARAM_MIN[i] or v > PARAM_MAX[i]:
                raise BoundsError(name, v, PARAM_MIN[i], PARAM_MAX[i])

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES])

    @classmethod
    def from_array(cls, values) -> "ParameterVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise DataError(f"expected 7 parameters, got shape {values.shape}")
        return cls(*(float(v) for v in values))


def reference_parameters() -> ParameterVector:
    return ParameterVector(*REFERENCE_PARAMS)


@dataclass(frozen=True)
class RescaledParameters:
    """Parameters mapped dimension-wise onto [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (7,):
            raise DataError(f"expected 7 rescaled values, got shape {v.shape}")
        if np.any(np.abs(v) > 1.0 + 1e-12):
            raise DataError("rescaled parameters must lie in [-1, 1]")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def rescale(p: ParameterVector) -> RescaledParameters:
    """Affine map per dimension sending [min, max] onto [-1, 1].

    The map is anchored at the fixed sampling box, not at data extremes,
    so train and test share one map.
    """
    return RescaledParameters((p.as_array() - _PARAM_MID) / _PARAM_HALF)


def unrescale(r: RescaledParameters) -> ParameterVector:
    return ParameterVector.from_array(np.asarray(r.values) * _PARAM_HALF + _PARAM_MID)


def rescale_array(params: np.ndarray) -> np.ndarray:
    """Vectorized `rescale` for an (n, 7) or (7,) array of raw parameters."""
    return (np.asarray(params, dtype=float) - _PARAM_MID) / _PARAM_HALF


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing, log-uniform observation times in years."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise DataError("time grid needs at least two points")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise DataError("times must be positive and strictly increasing")
        logs = np.log(t)
        steps = np.diff(logs)
        if np.any(np.abs(steps - steps[0]) > 1e-9 * abs(steps[0])):
            raise DataError("times must be log-uniform")
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "times", t)

    @classmethod
    def log_uniform(cls, m: int = 50, t_min: float = 1e3, t_max: float = 1e5) -> "TimeGrid":
        if m < 2:
            raise DataError("grid needs m >= 2")
        return cls(np.logspace(np.log10(t_min), np.log10(t_max), m))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def log10_times(self) -> np.ndarray:
        return np.log10(self.times)

    def rescaled_log_times(self) -> np.ndarray:
        """log10 t mapped affinely onto [-1, 1]; the time feature fed to learners."""
        lo, hi = np.log10(self.times[0]), np.log10(self.times[-1])
        return 2.0 * (self.log10_times - lo) / (hi - lo) - 1.0


@dataclass(frozen=True)
class Trajectory:
    """One sample: ln Kd plus the two simulated predictor series on a grid.

    gamma1 is pore-water pH, gamma2 is log10 calcium concentration.
    """

    params: ParameterVector
    grid: TimeGrid
    ln_kd: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray

    def __post_init__(self):
        m = len(self.grid)
        for name in ("ln_kd", "gamma1", "gamma2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (m,):
                raise DataError(f"{name} must have length {m}, got shape {arr.shape}")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(self.ln_kd)):
            raise DataError("ln_kd must be finite (Kd strictly positive)")


def is_valid_trajectory(traj: Trajectory) -> bool:
    """False-run filter: finite series and physically meaningful pH."""
    if not (np.all(np.isfinite(traj.gamma1)) and np.all(np.isfinite(traj.gamma2))):
        return False
    return bool(np.all(traj.gamma1 >= 0.0) and np.all(traj.gamma1 <= 14.0))


@dataclass(frozen=True)
class TrainTestSplit:
    train: tuple[int, ...]
    test: tuple[int, ...]


@dataclass(frozen=True)
class Dataset:
    """A fixed collection of trajectories with an optional train/test split."""

    samples: tuple[Trajectory, ...]
    split: TrainTestSplit | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen = set()
        for traj in self.samples:
            key = tuple(traj.params.as_array())
            if key in seen:
                raise DataError(f"duplicate parameter vector {key}")
            seen.add(key)
        if self.split is not None:
            tr, te = set(self.split.train), set(self.split.test)
            if tr & te:
                raise DataError("train and test indices overlap")
            if tr | te != set(range(len(self.samples))):
                raise DataError("split does not cover all samples")

    def __len__(self) -> int:
        return len(self.samples)

    def train_indices(self) -> tuple[int, ...]:
        """Indices used for training; every sample when no split is set."""
        if self.split is None:
            return tuple(range(len(self.samples)))
        return self.split.train

    def test_indices(self) -> tuple[int, ...]:
        if self.split is None:
            return ()
        return self.split.test

    def train_samples(self) -> list[Trajectory]:
        return [self.samples[i] for i in self.train_indices()]

    def test_samples(self) -> list[Trajectory]:
        return [self.samples[i] for i in self.test_indices()]


@dataclass(frozen=True)
class NormalizationMaps:
    """Affine parameter maps plus per-sample initial predictor values."""

    param_offset: np.ndarray = field(default_factory=lambda: _PARAM_MID.copy())
    param_scale: np.ndarray = field(default_factory=lambda: _PARAM_HALF.copy())
    gamma_refs: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if np.any(np.asarray(self.param_scale) == 0.0):
            raise DataError("normalization scales must be nonzero")
        for g1, g2 in self.gamma_refs:
            if g1 == 0.0 or g2 == 0.0:
                raise DataError("predictor reference values must be nonzero")


def sample_parameters(
    levels_per_dim: int, seed: int, perturbation: float = 0.0
) -> list[ParameterVector]:
    """Full-factorial sample pool on the per-dimension level grid.

    With the default four levels the grid per dimension is
    {min, (2 min + max)/3, (min + 2 max)/3, max}. Each component is
    optionally jittered by uniform(-perturbation, +perturbation) times the
    dimension range and clipped back into the box.
    """
    if levels_per_dim < 2:
        raise DataError("levels_per_dim must be >= 2")
    if not (0.0 <= perturbation < 0.5):
        raise DataError("perturbation must lie in [0, 0.5)")
    levels = [
        np.linspace(PARAM_MIN[i], PARAM_MAX[i], levels_per_dim) for i in range(7)
    ]
    grid = np.array(list(itertools.product(*levels)))
    if perturbation > 0.0:
        rng = np.random.default_rng(seed)
        jitter = rng.uniform(-perturbation, perturbation, size=grid.shape)
        grid = grid + jitter * (PARAM_MAX - PARAM_MIN)
        grid = np.clip(grid, PARAM_MIN, PARAM_MAX)
    return [ParameterVector.from_array(row) for row in grid]


def normalize_predictors(traj: Trajectory):
    """Divide each predictor series by its own first value.

    Returns the two normalized series and the (gamma1(t1), gamma2(t1))
    reference pair needed to invert the map.
    """
    g1_0 = float(traj.gamma1[0])
    g2_0 = float(traj.gamma2[0])
    if g1_0 == 0.0 or g2_0 == 0.0:
        raise DataError("initial predictor value is zero; cannot normalize")
    return traj.gamma1 / g1_0, traj.gamma2 / g2_0, (g1_0, g2_0)


def split_train_test(ds: Dataset, n_test: int, seed: int) -> Dataset:
    """Draw the test set uniformly without replacement and shuffle the rest."""
    n = len(ds)
    if not 0 < n_test < n:
        raise DataError(f"n_test must lie in (0, {n}), got {n_test}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    test = tuple(int(i) for i in sorted(order[:n_test]))
    train_pool = [int(i) for i in order[n_test:]]
    train = tuple(int(i) for i in rng.permutation(train_pool))
    return Dataset(ds.samples, TrainTestSplit(train=train, test=test))


def relative_error(truth: np.ndarray, prediction: np.ndarray) -> float:
    """Relative L2 mismatch: sqrt(sum (truth-pred)^2 / sum truth^2)."""
    truth = np.asarray(truth, dtype=float)
    prediction = np.asarray(prediction, dtype=float)
    if truth.shape != prediction.shape:
        raise DataError("truth and prediction must have equal length")
    denom = float(np.sum(truth**2))
    if denom == 0.0:
        raise DataError("truth series has zero norm")
    return float(np.sqrt(np.sum((truth - prediction) ** 2) / denom))

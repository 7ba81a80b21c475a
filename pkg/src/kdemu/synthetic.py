"""Synthetic stand-in for the reactive-transport corpus.

Produces ln Kd histories with the three observed shape families
(gaussian hump, monotone increase, early high then decay) plus smooth
pH/calcium predictor series correlated with ln Kd. Everything is a pure
function of the parameter vector and a seed.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import (
    PARAM_MAX,
    PARAM_MIN,
    DataError,
    Dataset,
    ParameterVector,
    TimeGrid,
    Trajectory,
    is_valid_trajectory,
    rescale,
)


class Regime(str, Enum):
    GAUSSIAN = "gaussian"
    INCREASING = "increasing"
    EARLY_HIGH = "early_high"


# Fixed decision thresholds in physical units. The clustering module must
# rediscover this structure; nothing below is exported to the learners.
PH_EARLY_HIGH_MAX = 7.2  # lower tenth of the pH range
SMSOH_INCREASING_MIN = 5.0  # upper third of the smsoh range, exclusive
PH_INCREASING_BAND = (7.3, 8.7)

# Shape coefficient table. Each entry is (intercept, slope, parameter name);
# the slope multiplies the rescaled parameter in [-1, 1]. Chosen so pH
# carries the largest share of output variance, then smsoh, then ca.
BASELINE_CONST = 4.0
BASELINE_TERMS = ((-0.6, "ph"), (0.3, "smsoh"), (-0.2, "ca"))
GAUSS_AMP = (1.2, 0.25, "ilsoh")
GAUSS_CENTER = (4.0, 0.45, "ph")
GAUSS_WIDTH = (0.45, 0.10, "smectite")
INCR_AMP = (3.0, 0.3, "smsoh")
INCR_CENTER = (3.55, 0.15, "ph")
INCR_WIDTH = (0.40, 0.08, "illite")
EARLY_AMP = (2.0, -0.5, "ph")
EARLY_WIDTH = (0.50, 0.15, "calcite")
GAMMA1_TARGET = {Regime.GAUSSIAN: 7.9, Regime.INCREASING: 8.4, Regime.EARLY_HIGH: 7.3}
GAMMA2_DRIFT = {Regime.GAUSSIAN: -0.4, Regime.INCREASING: 0.4, Regime.EARLY_HIGH: -0.2}
GAMMA1_SHAPE_COUPLING = 0.35
GAMMA2_SHAPE_COUPLING = 0.15

# Upper bound on |d ln Kd / d log10 t| over the whole box, noise off.
LN_KD_SLOPE_BOUND = 8.0

_PARAM_INDEX = {"ilsoh": 0, "smsoh": 1, "ph": 2, "ca": 3, "smectite": 4, "illite": 5, "calcite": 6}


@dataclass(frozen=True)
class RegimeMix:
    """Target regime fractions for dataset generation."""

    gaussian: float = 0.60
    increasing: float = 0.28
    early_high: float = 0.12

    def __post_init__(self):
        fracs = (self.gaussian, self.increasing, self.early_high)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise DataError("regime fractions must be nonnegative and sum to 1")

    def as_dict(self) -> dict[Regime, float]:
        return {
            Regime.GAUSSIAN: self.gaussian,
            Regime.INCREASING: self.increasing,
            Regime.EARLY_HIGH: self.early_high,
        }


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    noise_std: float = 0.05
    grid: TimeGrid = field(default_factory=TimeGrid.log_uniform)
    perturbation: float = 0.05

    def __post_init__(self):
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        if not (0.0 <= self.perturbation < 0.5):
            raise DataError("perturbation must lie in [0, 0.5)")


def classify_regime(p: ParameterVector) -> Regime:
    """Shape family implied by the parameters; fixed thresholds above."""
    if p.ph < PH_EARLY_HIGH_MAX:
        return Regime.EARLY_HIGH
    lo, hi = PH_INCREASING_BAND
    if p.smsoh > SMSOH_INCREASING_MIN and lo <= p.ph <= hi:
        return Regime.INCREASING
    return Regime.GAUSSIAN


def _coef(spec, u: np.ndarray) -> float:
    intercept, slope, name = spec
    return intercept + slope * u[_PARAM_INDEX[name]]


def _baseline(u: np.ndarray) -> float:
    return BASELINE_CONST + sum(c * u[_PARAM_INDEX[name]] for c, name in BASELINE_TERMS)


def _bump(p: ParameterVector, regime: Regime, x: np.ndarray) -> np.ndarray:
    """Regime-specific shape term added to the flat baseline."""
    u = rescale(p).values
    if regime is Regime.GAUSSIAN:
        amp = _coef(GAUSS_AMP, u)
        center = _coef(GAUSS_CENTER, u)
        width = _coef(GAUSS_WIDTH, u)
        return amp * np.exp(-((x - center) ** 2) / width**2)
    if regime is Regime.INCREASING:
        amp = _coef(INCR_AMP, u)
        center = _coef(INCR_CENTER, u)
        width = _coef(INCR_WIDTH, u)
        return amp / (1.0 + np.exp(-(x - center) / width))
    amp = _coef(EARLY_AMP, u)
    width = _coef(EARLY_WIDTH, u)
    return amp * np.exp(-(x - x[0]) / width)


def _trajectory_rng(p: ParameterVector, seed: int) -> np.random.Generator:
    # Noise stream is a pure function of (p, seed) so that generation order
    # and dataset membership cannot change a trajectory.
    digest = hashlib.sha256(p.as_array().tobytes() + struct.pack("<q", seed)).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def generate_trajectory(p: ParameterVector, cfg: GeneratorConfig) -> Trajectory:
    regime = classify_regime(p)
    u = rescale(p).values
    x = cfg.grid.log10_times
    ramp = (x - x[0]) / (x[-1] - x[0])
    bump = _bump(p, regime, x)
    ln_kd = _baseline(u) + bump
    gamma1 = p.ph + (GAMMA1_TARGET[regime] - p.ph) * ramp + GAMMA1_SHAPE_COUPLING * bump
    gamma2 = p.ca + GAMMA2_DRIFT[regime] * ramp + GAMMA2_SHAPE_COUPLING * bump
    if cfg.noise_std > 0:
        ln_kd = ln_kd + _trajectory_rng(p, cfg.seed).normal(0.0, cfg.noise_std, x.size)
    return Trajectory(params=p, grid=cfg.grid, ln_kd=ln_kd, gamma1=gamma1, gamma2=gamma2)


def _quota(n: int, mix: RegimeMix) -> dict[Regime, int]:
    fracs = mix.as_dict()
    counts = {r: int(np.floor(n * f)) for r, f in fracs.items()}
    remainders = sorted(
        fracs, key=lambda r: (n * fracs[r]) - counts[r], reverse=True
    )
    for r in remainders[: n - sum(counts.values())]:
        counts[r] += 1
    return counts


def _draw_parameters(rng: np.random.Generator, perturbation: float) -> ParameterVector:
    levels = rng.integers(0, 4, size=7)
    base = PARAM_MIN + levels * (PARAM_MAX - PARAM_MIN) / 3.0
    if perturbation > 0:
        base = base + rng.uniform(-perturbation, perturbation, 7) * (PARAM_MAX - PARAM_MIN)
        base = np.clip(base, PARAM_MIN, PARAM_MAX)
    return ParameterVector.from_array(base)


def generate_dataset(n: int, cfg: GeneratorConfig, mix: RegimeMix | None = None) -> Dataset:
    """Rejection-sample parameters until each regime quota is filled.

    Candidates come from the four-level sampling grid with jitter; a
    candidate counts only toward an unfilled regime quota and duplicate
    parameter vectors are rejected.
    """
    mix = mix or RegimeMix()
    if n == 0:
        return Dataset(())
    needed = _quota(n, mix)
    rng = np.random.default_rng(cfg.seed)
    seen: set[tuple] = set()
    samples: list[Trajectory] = []
    attempts = 0
    max_attempts = max(1000, 400 * n)
    while sum(needed.values()) > 0:
        attempts += 1
        if attempts > max_attempts:
            unfilled = {r.value: c for r, c in needed.items() if c > 0}
            raise DataError(
                f"regime mix infeasible after {max_attempts} draws; unfilled: {unfilled}"
            )
        p = _draw_parameters(rng, cfg.perturbation)
        regime = classify_regime(p)
        if needed[regime] <= 0:
            continue
        key = tuple(p.as_array())
        if key in seen:
            continue
        traj = generate_trajectory(p, cfg)
        if not is_valid_trajectory(traj):
            continue
        seen.add(key)
        samples.append(traj)
        needed[regime] -= 1
    return Dataset(tuple(samples))

"""Regularity diagnostics for the area measure dA.

Frostman b-energies with a subsample-stability proxy for finiteness, a
correlation-integral dimension estimator against the theoretical
omega_minus / (-alpha), and the Fourier pair diagnostic behind the absolute
continuity criterion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .area import AreaProfile
from .cumulant import CumulantModel
from .errors import DegenerateSampleError, DomainError, InsufficientSamplesError

_BLOCK = 512


@dataclass
class LeafSample:
    """Area-weighted leaf lifetimes; weights sum to one after normalization."""

    lifetimes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.lifetimes = np.asarray(self.lifetimes, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0.0) or w.sum() <= 0.0:
            raise DomainError("weights must be nonnegative with positive total")
        if np.any(self.lifetimes < 0.0):
            raise DomainError("lifetimes must be >= 0")
        self.weights = w / w.sum()

    @property
    def count(self) -> int:
        return int(self.lifetimes.size)

    @classmethod
    def from_profiles(cls, profiles: Sequence[AreaProfile]) -> "LeafSample":
        """Pool atoms across replicas; global normalization applies the
        total-mass weighting that defines the area-biased leaf law."""
        locs = np.concatenate([p.locations for p in profiles])
        masses = np.concatenate([p.masses for p in profiles])
        return cls(lifetimes=locs, weights=masses)

    @classmethod
    def from_values(cls, values, weights=None) -> "LeafSample":
        values = np.asarray(values, dtype=float)
        if weights is None:
            weights = np.full(values.size, 1.0 / values.size)
        return cls(lifetimes=values, weights=weights)

    def resample(self, n: int, seed) -> "LeafSample":
        """Weighted resample with replacement, returned with uniform weights."""
        rng = np.random.default_rng(seed)
        idx = rng.choice(self.count, size=n, p=self.weights)
        return LeafSample.from_values(self.lifetimes[idx])

    def subsample(self, n: int, seed) -> "LeafSample":
        """Weighted draw without replacement (for stability diagnostics)."""
        if n > self.count:
            raise InsufficientSamplesError(f"cannot draw {n} of {self.count} points")
        rng = np.random.default_rng(seed)
        idx = rng.choice(self.count, size=n, replace=False, p=self.weights)
        return LeafSample.from_values(self.lifetimes[idx])


class EnergyValue(NamedTuple):
    value: float
    clamped_pairs: int


def b_energy(sample: LeafSample, b: float, clamp: float = 1e-12) -> EnergyValue:
    """Weighted b-energy sum_{i != j} w_i w_j / |z_i - z_j|^b.

    Pair gaps below `clamp` are clamped (count reported); refining the clamp
    can only increase the value.
    """
    if not (0.0 < b <= 1.0):
        raise DomainError("b must lie in (0, 1]")
    if sample.count < 100:
        raise InsufficientSamplesError(f"need >= 100 points, got {sample.count}")
    z = sample.lifetimes
    w = sample.weights
    if np.ptp(z) == 0.0:
        raise DegenerateSampleError("all lifetimes equal: energy undefined")
    total = 0.0
    clamped = 0
    n = sample.count
    for start in range(0, n, _BLOCK):
        blk = slice(start, min(start + _BLOCK, n))
        d = np.abs(z[blk, None] - z[None, :])
        mask = np.ones_like(d, dtype=bool)
        mask[np.arange(blk.stop - blk.start), np.arange(start, blk.stop)] = False
        small = (d < clamp) & mask
        clamped += int(small.sum())
        d = np.maximum(d, clamp)
        total += float(((w[blk, None] * w[None, :]) * d ** (-b))[mask].sum())
    return EnergyValue(value=total, clamped_pairs=clamped)


@dataclass
class EnergyReport:
    """b-grid of energies with subsample-doubling stability diagnostics."""

    b_grid: np.ndarray
    values: np.ndarray
    sub_values: np.ndarray   # at n points
    sub_values_2n: np.ndarray
    stable: np.ndarray       # agreement within rel_tol
    rel_tol: float
    n_sub: int


def b_energy_report(sample: LeafSample, b_grid: Sequence[float], n_sub: int,
                    seed, rel_tol: float = 0.25) -> EnergyReport:
    """Operational finiteness proxy: I_b at n and 2n points must agree.

    A finite sample never proves divergence; blow-up under doubling flags an
    infinite energy at desk scale.
    """
    b_grid = np.asarray(list(b_grid), dtype=float)
    ss = np.random.SeedSequence(seed)
    s1, s2 = ss.spawn(2)
    sub1 = sample.subsample(n_sub, s1)
    sub2 = sample.subsample(min(2 * n_sub, sample.count), s2)
    vals = np.array([b_energy(sample, b).value for b in b_grid])
    v1 = np.array([b_energy(sub1, b).value for b in b_grid])
    v2 = np.array([b_energy(sub2, b).value for b in b_grid])
    stable = np.abs(v2 - v1) <= rel_tol * np.abs(v1)
    return EnergyReport(b_grid=b_grid, values=vals, sub_values=v1, sub_values_2n=v2,
                        stable=stable, rel_tol=rel_tol, n_sub=n_sub)


@dataclass
class DimensionEstimate:
    """Correlation-integral slope with its fit window and theoretical target."""

    slope: float              # clipped to [0, 1]
    slope_raw: float
    stderr: float
    window: tuple[float, float]
    r_grid: np.ndarray
    c_values: np.ndarray
    reference: Optional[float]


def correlation_dimension(sample: LeafSample, r_grid: Sequence[float],
                          fit_window: Optional[tuple[float, float]] = None,
                          model: Optional[CumulantModel] = None) -> DimensionEstimate:
    """Slope of log C(r) over the middle decade, C(r) = sum_{i!=j} w_i w_j 1{|dz|<r}.

    Weighted samples from dA are used directly, with no binning artifacts;
    small r is truncation-polluted and large r saturates, hence the default
    middle-decade window.
    """
    if sample.count < 1000:
        raise InsufficientSamplesError(f"need >= 1000 points, got {sample.count}")
    r_grid = np.asarray(sorted(r_grid), dtype=float)
    span = math.log10(r_grid[-1] / r_grid[0])
    if span < 2.0 - 1e-9:
        raise DomainError("r_grid must span at least two decades")
    z = sample.lifetimes
    w = sample.weights
    if np.ptp(z) == 0.0:
        raise DegenerateSampleError("all lifetimes equal: no spread")

    c = np.zeros(r_grid.size)
    n = sample.count
    for start in range(0, n, _BLOCK):
        blk = slice(start, min(start + _BLOCK, n))
        d = np.abs(z[blk, None] - z[None, :])
        ww = w[blk, None] * w[None, :]
        rows = np.arange(blk.stop - blk.start)
        ww[rows, np.arange(start, blk.stop)] = 0.0
        for k, r in enumerate(r_grid):
            c[k] += float((ww * (d < r)).sum())

    if fit_window is None:
        mid = 0.5 * (math.log10(r_grid[0]) + math.log10(r_grid[-1]))
        fit_window = (10.0 ** (mid - 0.5), 10.0 ** (mid + 0.5))
    lo, hi = fit_window
    sel = (r_grid >= lo) & (r_grid <= hi) & (c > 0.0)
    if sel.sum() < 3:
        raise InsufficientSamplesError("fewer than 3 usable points in the fit window")
    fit = sps.linregress(np.log(r_grid[sel]), np.log(c[sel]))
    raw = float(fit.slope)
    reference = None
    if model is not None:
        regime = model.regime()
        if regime.regime == "SingularDimKnown":
            reference = regime.predicted_dimension
    return DimensionEstimate(slope=float(np.clip(raw, 0.0, 1.0)), slope_raw=raw,
                             stderr=float(fit.stderr), window=(float(lo), float(hi)),
                             r_grid=r_grid, c_values=c, reference=reference)


def pair_gap_sample(profiles: Sequence[AreaProfile], n_pairs: int, seed) -> np.ndarray:
    """Gaps zeta - zeta' of two leaves tagged independently within one replica.

    Replicas are chosen proportionally to total mass squared, matching the
    pair measure under which the proof identity makes E e^{i theta gap} the
    squared modulus of the normalized Fourier transform of dA.
    """
    rng = np.random.default_rng(seed)
    w2 = np.array([p.total_mass ** 2 for p in profiles])
    w2 = w2 / w2.sum()
    gaps = np.empty(n_pairs)
    picks = rng.choice(len(profiles), size=n_pairs, p=w2)
    for k, j in enumerate(picks):
        prof = profiles[j]
        pw = prof.masses / prof.total_mass
        i1, i2 = rng.choice(prof.masses.size, size=2, p=pw)
        gaps[k] = prof.locations[i1] - prof.locations[i2]
    return gaps


def fourier_pair_diagnostic(profiles: Sequence[AreaProfile], theta_grid: Sequence[float],
                            n_pairs: int, seed) -> dict:
    """Empirical characteristic function of leaf-lifetime gaps on a theta grid."""
    theta = np.asarray(list(theta_grid), dtype=float)
    gaps = pair_gap_sample(profiles, n_pairs, seed)
    phase = theta[:, None] * gaps[None, :]
    re = np.cos(phase).mean(axis=1)
    im = np.sin(phase).mean(axis=1)
    im_se = np.sin(phase).std(axis=1, ddof=1) / math.sqrt(n_pairs)
    top = float(np.abs(theta).max())
    re_top = float(re[np.argmax(np.abs(theta))])
    return {"theta": theta.tolist(), "re": re.tolist(), "im": im.tolist(),
            "im_se": im_se.tolist(), "n_pairs": n_pairs,
            "decay": {"theta_max": top, "re_at_theta_max": re_top,
                      "re_at_zero": float(re[np.argmin(np.abs(theta))])
                      if np.any(theta == 0.0) else None}}


def regime_report(model: CumulantModel,
                  dim_estimate: Optional[DimensionEstimate] = None,
                  energy: Optional[EnergyReport] = None,
                  profile_rows=None,
                  n_trend: Optional[dict] = None,
                  fourier: Optional[dict] = None) -> dict:
    """Consolidated verdict: theoretical prediction next to the evidence."""
    regime = model.regime()
    out = {
        "prediction": {
            "regime": regime.regime,
            "alpha": regime.alpha,
            "omega_minus": regime.omega_minus,
            "omega_plus": regime.omega_plus if math.isfinite(regime.omega_plus) else "inf",
            "dimension": regime.predicted_dimension,
            "dimension_lower_bound": regime.dimension_lower_bound,
            "lower_bound_note": regime.lower_bound_note,
        },
        "evidence": {},
    }
    if dim_estimate is not None:
        out["evidence"]["correlation_dimension"] = {
            "slope": dim_estimate.slope, "stderr": dim_estimate.stderr,
            "window": dim_estimate.window, "reference": dim_estimate.reference}
    if energy is not None:
        out["evidence"]["energy_stability"] = {
            "b": energy.b_grid.tolist(), "value": energy.values.tolist(),
            "stable": energy.stable.tolist()}
    if profile_rows is not None:
        out["evidence"]["profile"] = [
            {"t": r.t, "slope_M": r.slope_M, "slope_N": r.slope_N,
             "a_hat": r.a_hat, "a_tilde": r.a_tilde, "ratio": r.ratio,
             "converged": r.converged}
            for r in profile_rows]
    if n_trend is not None:
        out["evidence"]["fragment_count_trend"] = n_trend
    if fourier is not None:
        out["evidence"]["fourier"] = fourier
    return out

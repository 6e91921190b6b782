"""Lévy triplets, Laplace exponents, and jump-adapted path sampling.

The driving process xi has characteristics (drift b, gaussian_var sigma^2,
jump measure Lambda).  Finite-activity measures use the uncompensated
convention psi(q) = b q + sigma^2 q^2 / 2 + sum lam_i (e^{q y_i} - 1), so
toy models have closed-form exponents; density measures use the standard
truncation-compensated form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate

from .errors import (
    DomainError,
    ModelValidationError,
    QuadratureError,
)

_QUAD_LIMIT = 200
_QUAD_TOL = 1e-10


@dataclass(frozen=True)
class FiniteAtoms:
    """Finite-activity jump measure: atoms (location y != 0, rate > 0)."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        norm = tuple((float(y), float(lam)) for y, lam in self.atoms)
        object.__setattr__(self, "atoms", norm)
        for y, lam in self.atoms:
            if y == 0.0 or not math.isfinite(y):
                raise ModelValidationError(f"atom location must be finite and nonzero, got {y}")
            if lam <= 0.0 or not math.isfinite(lam):
                raise ModelValidationError(f"atom rate must be finite and positive, got {lam}")

    @property
    def total_rate(self) -> float:
        return sum(lam for _, lam in self.atoms)

    def negative_atoms(self) -> list[tuple[float, float]]:
        return [(y, lam) for y, lam in self.atoms if y < 0.0]

    def positive_atoms(self) -> list[tuple[float, float]]:
        return [(y, lam) for y, lam in self.atoms if y > 0.0]

    @property
    def negative_rate(self) -> float:
        return sum(lam for y, lam in self.atoms if y < 0.0)


@dataclass
class JumpDensity:
    """Absolutely continuous jump measure lambda(y) dy.

    `p` is the declared exponent with int_1^inf e^{py} Lambda(dy) < infty;
    jumps with |y| < delta are dropped and replaced by a Gaussian with
    matched variance when sampling (small-jump compensation).
    """

    density: Callable[[float], float]
    p: float
    delta: float = 1e-3
    tail_cut: float = 1e-12  # relative mass ignored beyond the tabulated range
    _sampler: Optional[dict] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.p <= 0.0:
            raise ModelValidationError("integrability exponent p must be > 0")
        if self.delta <= 0.0:
            raise ModelValidationError("small-jump threshold delta must be > 0")


JumpMeasure = Union[FiniteAtoms, JumpDensity]

NO_JUMPS = FiniteAtoms(atoms=())


@dataclass(frozen=True)
class LevyTriplet:
    """Characteristics (b, sigma^2, Lambda) of the driving Lévy process."""

    drift: float
    gaussian_var: float
    jumps: JumpMeasure = NO_JUMPS

    def __post_init__(self):
        if self.gaussian_var < 0.0:
            raise ModelValidationError("gaussian_var must be >= 0")


def reference_dyadic() -> LevyTriplet:
    """Built-in test model: b=-3, sigma^2=2, single atom at -ln 2 with rate 1.

    Its cumulant has the closed form kappa(q) = -3q + q^2 + 2^{1-q} - 1.
    """
    return LevyTriplet(drift=-3.0, gaussian_var=2.0,
                       jumps=FiniteAtoms(atoms=((-math.log(2.0), 1.0),)))


BUILTIN_TRIPLETS: dict[str, Callable[[], LevyTriplet]] = {
    "reference_dyadic": reference_dyadic,
}


def _quad(fn, a, b, points=None) -> float:
    val, err = integrate.quad(fn, a, b, limit=_QUAD_LIMIT, points=points)
    if not math.isfinite(val) or err > max(_QUAD_TOL, 1e-8 * abs(val)):
        raise QuadratureError(f"quadrature on [{a}, {b}] did not converge (err={err:.3g})")
    return val


def _density_charges(dens: Callable[[float], float], sign: int) -> bool:
    # probe on a log grid away from the origin; infinite activity near 0 is fine
    probes = sign * np.concatenate([np.geomspace(1e-6, 1.0, 25), np.linspace(1.0, 30.0, 30)])
    return any(dens(float(y)) > 0.0 for y in probes)


def validate_model(triplet: LevyTriplet) -> None:
    """Check the structural requirements for a growth-fragmentation driver.

    Raises ModelValidationError unless the jump measure charges (-inf, 0)
    (otherwise there are no children), the process is not the negative of a
    subordinator, and psi'(0+) < 0 so the size process is absorbed at 0.
    """
    jumps = triplet.jumps
    if isinstance(jumps, FiniteAtoms):
        has_negative = jumps.negative_rate > 0.0
        has_positive = len(jumps.positive_atoms()) > 0
    else:
        has_negative = _density_charges(jumps.density, -1)
        has_positive = _density_charges(jumps.density, +1)
    if not has_negative:
        raise ModelValidationError("jump measure assigns no rate to (-inf, 0): no children")
    monotone = (triplet.gaussian_var == 0.0 and not has_positive and triplet.drift <= 0.0)
    if monotone:
        raise ModelValidationError("triplet is the negative of a subordinator")
    mu = psi_prime(triplet, 0.0)
    if not mu < 0.0:
        raise ModelValidationError(
            f"psi'(0+) = {mu:.6g} must be negative so that the size process is absorbed at 0")


def laplace_exponent(triplet: LevyTriplet, q: float) -> float:
    """psi(q) = log E exp(q xi(1))."""
    q = float(q)
    out = triplet.drift * q + 0.5 * triplet.gaussian_var * q * q
    jumps = triplet.jumps
    if isinstance(jumps, FiniteAtoms):
        for y, lam in jumps.atoms:
            out += lam * math.expm1(q * y)
        return out
    if q > jumps.p:
        raise DomainError(f"q={q} exceeds declared integrability exponent p={jumps.p}")
    if q == 0.0:
        return out

    def integrand(y):
        comp = q * y if abs(y) < 1.0 else 0.0
        return (math.expm1(q * y) - comp) * jumps.density(y)

    out += _quad(integrand, -np.inf, 0.0, points=[-1.0])
    out += _quad(integrand, 0.0, np.inf, points=[1.0])
    return out


def psi_prime(triplet: LevyTriplet, q: float) -> float:
    """Derivative of the Laplace exponent (compensation-adjusted for densities)."""
    q = float(q)
    out = triplet.drift + triplet.gaussian_var * q
    jumps = triplet.jumps
    if isinstance(jumps, FiniteAtoms):
        for y, lam in jumps.atoms:
            out += lam * y * math.exp(q * y)
        return out
    if q > jumps.p:
        raise DomainError(f"q={q} exceeds declared integrability exponent p={jumps.p}")

    def integrand(y):
        comp = 1.0 if abs(y) < 1.0 else 0.0
        return y * (math.exp(q * y) - comp) * jumps.density(y)

    out += _quad(integrand, -np.inf, 0.0, points=[-1.0])
    out += _quad(integrand, 0.0, np.inf, points=[1.0])
    return out


def drift_sign(triplet: LevyTriplet) -> str:
    """Sign of psi'(0+): 'negative' certifies xi -> -inf (absorption at 0)."""
    mu = psi_prime(triplet, 0.0)
    if mu < 0.0:
        return "negative"
    if mu > 0.0:
        return "positive"
    return "zero"


@dataclass
class PathGrid:
    """One sampled xi path on a jump-adapted grid.

    Jump epochs appear as duplicated times; jump_marks holds (index of the
    post-jump node, signed jump size), where the size is defined as the
    recorded value discontinuity so the bookkeeping is exact by construction.
    """

    times: np.ndarray
    values: np.ndarray
    jump_marks: list[tuple[int, float]]

    def negative_jump_marks(self) -> list[tuple[int, float]]:
        return [(i, dy) for i, dy in self.jump_marks if dy < 0.0]


class XiSampler:
    """Incrementally extends one xi path (used for absorption-driven horizons).

    The grid holds values at all jump epochs plus regular mesh points of
    spacing <= max_step; between grid nodes the path is treated as linear.
    """

    def __init__(self, triplet: LevyTriplet, rng: np.random.Generator, max_step: float):
        if max_step <= 0.0:
            raise DomainError("max_step must be > 0")
        self.triplet = triplet
        self.rng = rng
        self.max_step = float(max_step)
        self._tchunks = [np.array([0.0])]
        self._vchunks = [np.array([0.0])]
        self._n_nodes = 1
        self._v_last = 0.0
        self.jump_marks: list[tuple[int, float]] = []
        self._horizon = 0.0
        self._setup_jump_engine()

    def _setup_jump_engine(self):
        jumps = self.triplet.jumps
        self._extra_var = 0.0
        self._drift = self.triplet.drift
        if isinstance(jumps, FiniteAtoms):
            self._rate = jumps.total_rate
            locs = np.array([y for y, _ in jumps.atoms])
            probs = (np.array([lam for _, lam in jumps.atoms]) / self._rate
                     if self._rate > 0 else None)
            self._draw_sizes = lambda n: locs[self.rng.choice(len(locs), size=n, p=probs)]
        else:
            tab = _density_tables(jumps)
            self._rate = tab["rate"]
            self._extra_var = tab["small_var"]
            self._drift = self.triplet.drift - tab["compensator"]
            self._draw_sizes = lambda n: _sample_from_tables(tab, self.rng, n)

    @property
    def horizon(self) -> float:
        return self._horizon

    def extend(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Append the path over (horizon, horizon + dt]; returns the new nodes."""
        if dt <= 0.0:
            return np.empty(0), np.empty(0)
        t0, t1 = self._horizon, self._horizon + dt
        n_jumps = int(self.rng.poisson(self._rate * dt)) if self._rate > 0 else 0
        if n_jumps:
            jump_times = np.sort(self.rng.uniform(t0, t1, size=n_jumps))
            jump_sizes = self._draw_sizes(n_jumps)
        else:
            jump_times = np.empty(0)
            jump_sizes = np.empty(0)

        n_mesh = max(1, math.ceil(dt / self.max_step))
        mesh = np.linspace(t0, t1, n_mesh + 1)[1:]
        grid = np.unique(np.concatenate([mesh, jump_times]))

        sig2 = self.triplet.gaussian_var + self._extra_var
        steps = np.diff(np.concatenate([[t0], grid]))
        incr = self._drift * steps
        if sig2 > 0.0:
            incr = incr + np.sqrt(sig2 * steps) * self.rng.standard_normal(len(steps))
        cont = self._v_last + np.cumsum(incr)

        carry = np.zeros(len(grid))
        if n_jumps:
            np.add.at(carry, np.searchsorted(grid, jump_times), jump_sizes)
        post = cont + np.cumsum(carry)
        pre = post - carry
        is_jump = carry != 0.0

        counts = 1 + is_jump.astype(np.int64)
        offsets = np.cumsum(counts) - counts
        out_len = int(offsets[-1] + counts[-1])
        out_t = np.empty(out_len)
        out_v = np.empty(out_len)
        out_t[offsets] = grid
        out_v[offsets] = pre
        jslots = offsets[is_jump] + 1
        out_t[jslots] = grid[is_jump]
        out_v[jslots] = post[is_jump]

        base = self._n_nodes
        for slot in jslots:
            self.jump_marks.append((base + int(slot), float(out_v[slot] - out_v[slot - 1])))

        self._tchunks.append(out_t)
        self._vchunks.append(out_v)
        self._n_nodes += out_len
        self._v_last = float(out_v[-1])
        self._horizon = t1
        return out_t, out_v

    def to_grid(self) -> PathGrid:
        return PathGrid(times=np.concatenate(self._tchunks),
                        values=np.concatenate(self._vchunks),
                        jump_marks=list(self.jump_marks))


def sample_path(triplet: LevyTriplet, horizon: float, max_step: float, seed) -> PathGrid:
    """Sample one xi path on [0, horizon]; deterministic given the seed."""
    if horizon < 0.0:
        raise DomainError("horizon must be >= 0")
    sampler = XiSampler(triplet, np.random.default_rng(seed), max_step)
    sampler.extend(horizon)
    return sampler.to_grid()


# --- density-measure sampling machinery -------------------------------------

def _density_tables(jumps: JumpDensity) -> dict:
    """Tabulated inverse CDF of the delta-thinned measure plus compensators."""
    if jumps._sampler is not None:
        return jumps._sampler
    dens = jumps.density
    delta = jumps.delta

    def side_tables(lo: float, hi: float) -> tuple[np.ndarray, np.ndarray, float]:
        ys = np.linspace(lo, hi, 4097)
        vals = np.array([max(dens(float(y)), 0.0) for y in ys])
        cdf = np.concatenate([[0.0], np.cumsum((vals[1:] + vals[:-1]) * 0.5 * np.diff(ys))])
        return ys, cdf, float(cdf[-1])

    def tail_bound(sign: int) -> float:
        # grow the tabulation range until the discarded tail is negligible
        L = 4.0
        for _ in range(40):
            tail = _quad(lambda y: dens(sign * y), L, 2 * L)
            body = _quad(lambda y: dens(sign * y), delta, L)
            if tail < jumps.tail_cut * max(body, 1e-300):
                return L
            L *= 2.0
        raise QuadratureError("jump density tail does not decay on the scanned range")

    ys_n, cdf_n, rate_n = side_tables(-tail_bound(-1), -delta)
    ys_p, cdf_p, rate_p = side_tables(delta, tail_bound(+1))

    small_var = _quad(lambda y: y * y * dens(y), -delta, 0.0) + \
        _quad(lambda y: y * y * dens(y), 0.0, delta)
    comp = 0.0  # compensator of sampled jumps with |y| < 1 (compensated convention)
    if delta < 1.0:
        comp = _quad(lambda y: y * dens(y), -1.0, -delta) + \
            _quad(lambda y: y * dens(y), delta, 1.0)

    tab = {"rate": rate_n + rate_p, "rate_neg": rate_n,
           "ys_neg": ys_n, "cdf_neg": cdf_n, "ys_pos": ys_p, "cdf_pos": cdf_p,
           "small_var": small_var, "compensator": comp}
    jumps._sampler = tab
    return tab


def _sample_from_tables(tab: dict, rng: np.random.Generator, n: int) -> np.ndarray:
    u = rng.uniform(0.0, tab["rate"], size=n)
    out = np.empty(n)
    neg = u < tab["rate_neg"]
    out[neg] = np.interp(u[neg], tab["cdf_neg"], tab["ys_neg"])
    out[~neg] = np.interp(u[~neg] - tab["rate_neg"], tab["cdf_pos"], tab["ys_pos"])
    return out

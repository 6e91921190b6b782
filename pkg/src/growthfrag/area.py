"""Intrinsic area profiles, fragment statistics, and area-tagged leaves.

Every terminal lineage of a truncated system carries one atom of mass
(terminal size)^{omega_minus}: frozen children at their birth, expanded cells
at their final recorded size (residual dust below the path floor, or the size
at a time cut).  The intrinsic martingale has mean one, so each atom's mass
is exactly the conditional expectation of its unexplored subtree's area and
profile totals stay unbiased under truncation.

Two atom-placement modes:
  freeze        atom at the height where the lineage stops (left-biased)
  spine_extend  adds an independent residual lifetime size^{-alpha} * I,
                which makes atom locations exact in law by the spinal
                decomposition (default for profile work)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from .cellsystem import (
    STATUS_ABSORBED,
    STATUS_TIME,
    CellSystem,
    Label,
    TruncationPolicy,
    build_system,
    fragments_at,
)
from .cumulant import CumulantModel
from .errors import DomainError
from .lamperti import sample_exp_functional
from .levy import FiniteAtoms

MODE_FREEZE = "freeze"
MODE_SPINE_EXTEND = "spine_extend"


@dataclass
class AreaProfile:
    """Atoms of the simulated intrinsic area, sorted by location."""

    locations: np.ndarray
    masses: np.ndarray
    labels: list[Label]
    mode: str
    total_mass: float = field(init=False)
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._cum = np.cumsum(self.masses)
        self.total_mass = float(self._cum[-1]) if self.masses.size else 0.0

    def evaluate(self, t: float) -> float:
        """A(t): total atom mass at heights <= t."""
        idx = int(np.searchsorted(self.locations, t, side="right"))
        return float(self._cum[idx - 1]) if idx else 0.0

    def evaluate_many(self, ts: Sequence[float]) -> np.ndarray:
        idx = np.searchsorted(self.locations, np.asarray(ts), side="right")
        cum = np.concatenate([[0.0], self._cum])
        return cum[idx]


def area_profile(system: CellSystem, mode: str = MODE_SPINE_EXTEND,
                 seed=0) -> AreaProfile:
    """Build the atom list of the system's intrinsic area; deterministic given seed."""
    if mode not in (MODE_FREEZE, MODE_SPINE_EXTEND):
        raise DomainError(f"unknown area mode {mode!r}")
    model = system.model
    w = model.omega_minus
    alpha = model.alpha

    jumps = model.triplet.jumps if model.triplet is not None else None
    fragmentation_free = isinstance(jumps, FiniteAtoms) and jumps.negative_rate == 0.0

    pending = []  # (height_canon, terminal_size_canon, mass_abs, extend, label, timescale)
    for label in sorted(system.records, key=lambda u: (len(u), u)):
        rec = system.records[label]
        if not rec.expanded:
            s = rec.size_canon
            pending.append((rec.birth_canon, s, rec.initial_size ** w, True,
                            label, rec.timescale))
        elif fragmentation_free and rec.status == STATUS_ABSORBED:
            # a cell that can shed no mass keeps all of it; its atom sits at the
            # realized death height (single-branch degenerate demo models)
            h = rec.birth_canon + rec.death_canon
            pending.append((h, None, rec.initial_size ** w, False, label, rec.timescale))
        else:
            # terminal residue: the cell's unexplored continuation below the
            # path floor (dust) or past a time cut, priced at its current size
            h = rec.birth_canon + rec.death_canon
            s = float(rec.sizes_canon[-1])
            extend = rec.status in (STATUS_ABSORBED, STATUS_TIME)
            pending.append((h, s, rec.terminal_size ** w, extend, label, rec.timescale))

    extend_mode = mode == MODE_SPINE_EXTEND
    residuals = None
    if extend_mode:
        n_ext = sum(1 for item in pending if item[3])
        if n_ext:
            spine = model.spine_triplet()
            residuals = sample_exp_functional(spine, alpha, n_ext, seed).values

    locs = np.empty(len(pending))
    masses = np.empty(len(pending))
    labels: list[Label] = []
    k = 0
    for i, (h, s, mass, extend, label, timescale) in enumerate(pending):
        if extend_mode and extend:
            h = h + np.power(s, -alpha) * residuals[k]
            k += 1
        locs[i] = timescale * h
        masses[i] = mass
        labels.append(label)

    order = np.argsort(locs, kind="stable")
    return AreaProfile(locations=locs[order], masses=masses[order],
                       labels=[labels[i] for i in order], mode=mode)


@dataclass
class FragmentStats:
    """M(t, eps) and N(t, eps) matrices over a (t, eps) grid.

    M is defined through one cumulative sum of the sorted fragment masses, so
    the partition identity M(t, eps) + sum_{X > eps} X^w = sum X^w holds
    exactly, float for float.
    """

    t_grid: np.ndarray
    eps_grid: np.ndarray
    M: np.ndarray          # mass of fragments <= eps
    N: np.ndarray          # count of fragments > eps
    tail: np.ndarray       # mass of fragments > eps
    total: np.ndarray      # all-fragment mass per t
    max_size: np.ndarray   # largest fragment per t
    size_floor: float
    n_rep: int = 1


def fragment_stats(system: CellSystem, t_grid: Sequence[float],
                   eps_grid: Sequence[float]) -> FragmentStats:
    """Small-fragment mass and large-fragment counts from fragments_at."""
    t_grid = np.asarray(list(t_grid), dtype=float)
    eps_grid = np.asarray(list(eps_grid), dtype=float)
    if t_grid.size == 0 or eps_grid.size == 0:
        raise DomainError("grids must be nonempty")
    w = system.model.omega_minus
    M = np.zeros((t_grid.size, eps_grid.size))
    N = np.zeros((t_grid.size, eps_grid.size))
    tail = np.zeros_like(M)
    total = np.zeros(t_grid.size)
    max_size = np.zeros(t_grid.size)
    for i, t in enumerate(t_grid):
        x = fragments_at(system, float(t))  # nonincreasing
        if x.size == 0:
            continue
        max_size[i] = x[0]
        masses = x ** w
        cum = np.cumsum(masses)          # prefix sums over fragments > threshold
        total[i] = cum[-1]
        counts = np.searchsorted(-x, -eps_grid, side="left")  # fragments > eps
        N[i] = counts
        tail[i] = np.where(counts > 0, cum[np.maximum(counts - 1, 0)], 0.0)
        M[i] = total[i] - tail[i]
    return FragmentStats(t_grid=t_grid, eps_grid=eps_grid, M=M, N=N, tail=tail,
                         total=total, max_size=max_size,
                         size_floor=system.policy.size_floor)


def aggregate_fragment_stats(stats_list: Sequence[FragmentStats]) -> FragmentStats:
    """Replica mean of fragment statistics (same grids required)."""
    first = stats_list[0]
    n = len(stats_list)
    return FragmentStats(
        t_grid=first.t_grid, eps_grid=first.eps_grid,
        M=np.mean([s.M for s in stats_list], axis=0),
        N=np.mean([s.N for s in stats_list], axis=0),
        tail=np.mean([s.tail for s in stats_list], axis=0),
        total=np.mean([s.total for s in stats_list], axis=0),
        max_size=np.mean([s.max_size for s in stats_list], axis=0),
        size_floor=first.size_floor, n_rep=n * first.n_rep)


@dataclass
class ProfileEstimateRow:
    t: float
    slope_M: Optional[float]
    slope_N: Optional[float]
    a_hat: Optional[float]    # from small-fragment mass: alpha kappa'(w-) eps^alpha M
    a_tilde: Optional[float]  # from large-fragment counts
    ratio: Optional[float]
    window: tuple[float, float]
    n_points: int
    converged: bool


def profile_estimate(stats: FragmentStats, model: CumulantModel,
                     window: Optional[tuple[float, float]] = None) -> list[ProfileEstimateRow]:
    """Density estimates from the two fragment limit laws, per time point.

    Fits run over the stable window [10 * size_floor, max_size / 10] unless
    overridden: below that, truncation depletes fragments; above it, counts
    are too small.  Outside the absolutely continuous regime the numbers are
    still produced but flagged non-convergent.
    """
    w = model.omega_minus
    alpha = model.alpha
    kp = model.kprime_minus
    converged = alpha > -w
    rows = []
    for i, t in enumerate(stats.t_grid):
        lo, hi = window if window is not None else (10.0 * stats.size_floor,
                                                    stats.max_size[i] / 10.0)
        sel = (stats.eps_grid >= lo) & (stats.eps_grid <= hi)
        eps = stats.eps_grid[sel]
        M = stats.M[i, sel]
        N = stats.N[i, sel]
        ok_M = M > 0.0
        ok_N = N > 0.0
        slope_M = a_hat = slope_N = a_tilde = ratio = None
        if ok_M.sum() >= 3:
            fit = sps.linregress(np.log(eps[ok_M]), np.log(M[ok_M]))
            slope_M = float(fit.slope)
            a_hat = float(alpha * kp * np.median(eps[ok_M] ** alpha * M[ok_M]))
        if ok_N.sum() >= 3:
            fit = sps.linregress(np.log(eps[ok_N]), np.log(N[ok_N]))
            slope_N = float(fit.slope)
            a_tilde = float((w + alpha) * abs(kp) * np.median(eps[ok_N] ** (w + alpha) * N[ok_N]))
        if a_hat is not None and a_tilde not in (None, 0.0):
            ratio = a_hat / a_tilde
        rows.append(ProfileEstimateRow(t=float(t), slope_M=slope_M, slope_N=slope_N,
                                       a_hat=a_hat, a_tilde=a_tilde, ratio=ratio,
                                       window=(float(lo), float(hi)),
                                       n_points=int(ok_M.sum()), converged=converged))
    return rows


@dataclass
class TaggedLeaf:
    """One leaf drawn proportionally to the intrinsic area of its system."""

    label: Label
    lifetime: float
    segments: list[tuple[Label, float, float]]  # (cell, entry height, exit height)


def tag_leaf(system: CellSystem, profile: AreaProfile, seed) -> TaggedLeaf:
    """Descend from the root, choosing subtrees proportionally to area mass.

    At each cell the options are its own terminal atom and its children's
    subtrees; the walk ends at an atom, whose height is the leaf lifetime.
    """
    atom_of = {lab: (float(profile.locations[i]), float(profile.masses[i]))
               for i, lab in enumerate(profile.labels)}
    subtree: dict[Label, float] = {}
    for label in sorted(system.records, key=lambda u: (-len(u), u)):
        rec = system.records[label]
        m = atom_of.get(label, (0.0, 0.0))[1]
        for child in rec.children:
            m += subtree[child.label]
        subtree[label] = m

    rng = np.random.default_rng(seed)
    roots = system.roots
    segments: list[tuple[Label, float, float]] = []

    def pick(options: list[tuple[float, object]]):
        total = sum(m for m, _ in options)
        r = rng.random() * total
        acc = 0.0
        for m, payload in options:
            acc += m
            if r < acc:
                return payload
        return options[-1][1]

    label = pick([(subtree[r], r) for r in roots]) if len(roots) > 1 else roots[0]
    while True:
        rec = system.records[label]
        own = atom_of.get(label)
        options: list[tuple[float, object]] = []
        if own is not None:
            options.append((own[1], ("atom", own[0])))
        for child in rec.children:
            options.append((subtree[child.label], ("cell", child.label)))
        kind, payload = pick(options)
        if kind == "atom":
            segments.append((label, rec.birth_time, payload))
            return TaggedLeaf(label=label, lifetime=float(payload), segments=segments)
        child_rec = system.records[payload]
        segments.append((label, rec.birth_time, child_rec.birth_time))
        label = payload


def branching_identity_check(model: CumulantModel, policy: TruncationPolicy,
                             t: float, s: float, n_rep: int, seed,
                             mode: str = MODE_SPINE_EXTEND,
                             ks_threshold: float = 0.08) -> dict:
    """Distributional check of A(t+s) - A(t) against the fragment composition.

    Left side: direct profile increments.  Right side: fragments at t, each
    continued by an independent unit-size copy evaluated at s X^alpha and
    scaled by X^{omega_minus}.
    """
    w = model.omega_minus
    alpha = model.alpha
    ss = np.random.SeedSequence(seed)
    reps = ss.spawn(2 * n_rep)
    if s == 0.0:
        return {"ks": 0.0, "threshold": ks_threshold, "passed": True, "n_rep": n_rep,
                "note": "s=0: both sides identically zero"}

    lhs = np.empty(n_rep)
    for i in range(n_rep):
        sys_seed, prof_seed = reps[i].spawn(2)
        system = build_system(1.0, model, policy, sys_seed)
        prof = area_profile(system, mode=mode, seed=prof_seed)
        lhs[i] = prof.evaluate(t + s) - prof.evaluate(t)

    rhs = np.empty(n_rep)
    for i in range(n_rep):
        base = reps[n_rep + i]
        sys_seed, prof_stream = base.spawn(2)
        system = build_system(1.0, model, policy, sys_seed)
        frags = fragments_at(system, t)
        val = 0.0
        if frags.size:
            frag_seeds = prof_stream.spawn(2 * frags.size)
            for j, x in enumerate(frags):
                sub = build_system(1.0, model, policy, frag_seeds[2 * j])
                sub_prof = area_profile(sub, mode=mode, seed=frag_seeds[2 * j + 1])
                val += x ** w * sub_prof.evaluate(s * x ** alpha)
        rhs[i] = val

    ks = float(sps.ks_2samp(lhs, rhs).statistic)
    return {"ks": ks, "threshold": ks_threshold, "passed": ks < ks_threshold,
            "n_rep": n_rep, "lhs_mean": float(lhs.mean()), "rhs_mean": float(rhs.mean())}


def small_time_check(model: CumulantModel, policy: TruncationPolicy,
                     eps_grid: Sequence[float], n_rep: int, seed,
                     mode: str = MODE_SPINE_EXTEND) -> dict:
    """Monte Carlo means of A(eps)/eps; the ratio must fall as eps decreases."""
    eps = np.asarray(sorted(eps_grid, reverse=True), dtype=float)
    ss = np.random.SeedSequence(seed)
    reps = ss.spawn(n_rep)
    acc = np.zeros(eps.size)
    for i in range(n_rep):
        sys_seed, prof_seed = reps[i].spawn(2)
        system = build_system(1.0, model, policy, sys_seed)
        prof = area_profile(system, mode=mode, seed=prof_seed)
        acc += prof.evaluate_many(eps)
    means = acc / n_rep
    ratios = means / eps
    decreasing = bool(np.all(np.diff(ratios) < 0.0))  # eps sorted descending
    out = {"eps": eps.tolist(), "mean_A": means.tolist(), "ratio": ratios.tolist(),
           "decreasing_toward_zero": decreasing, "n_rep": n_rep}
    if n_rep < 100:
        out["flag"] = "LowPower"
    return out

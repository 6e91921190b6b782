"""Cell-system genealogies: Eve cell, negative-jump births, truncated recursion.

Records are simulated in canonical units (root size 1) and carry their root's
scale; absolute sizes and times are produced by a single final multiplication
(sizes by x, times by x^{-alpha}).  Because per-cell seeds depend only on the
label, a system started from x equals the unit system with every size scaled
by x and every time by x^{-alpha}, exactly, float for float.
"""
from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .cumulant import CumulantModel
from .errors import DomainError, PathTooShortError
from .lamperti import PssmpPath, _ClockAccumulator
from .levy import XiSampler, psi_prime

Label = tuple[int, ...]

STATUS_ABSORBED = "Absorbed"
STATUS_SIZE = "TruncatedSize"
STATUS_GENERATION = "TruncatedGeneration"
STATUS_TIME = "TruncatedTime"
STATUS_BUDGET = "TruncatedBudget"
FROZEN_STATUSES = (STATUS_SIZE, STATUS_GENERATION, STATUS_TIME, STATUS_BUDGET)


def label_rng(master_seed, label: Label) -> np.random.Generator:
    """Stable per-label stream: mixes (master seed, label) via SeedSequence keys.

    Order-independent and budget-extension-stable: a cell's stream never
    depends on how many other cells were simulated before it.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=label))


def label_str(label: Label) -> str:
    return ".".join(str(i) for i in label) if label else "-"


class ChildLink(NamedTuple):
    age_canon: float
    size_canon: float
    label: Label


@dataclass(frozen=True)
class TruncationPolicy:
    """Caps that make the infinite cell system finitely simulable."""

    size_floor: float = 1e-4
    generation_cap: int = 30
    time_horizon: float = math.inf
    cell_budget: int = 10_000_000
    max_step: float = 0.05
    path_size_floor: float = 1e-9  # a cell's own path stops below this size
    checkpoint_age: Optional[float] = None  # thin stored path nodes to this spacing

    def __post_init__(self):
        if self.size_floor <= 0.0:
            raise DomainError("size_floor must be > 0")
        if self.generation_cap < 0:
            raise DomainError("generation_cap must be >= 0")
        if self.time_horizon <= 0.0:
            raise DomainError("time_horizon must be > 0")
        if self.cell_budget < 1:
            raise DomainError("cell_budget must be >= 1")
        if not (0.0 < self.path_size_floor <= self.size_floor):
            raise DomainError("need 0 < path_size_floor <= size_floor")
        active = (self.size_floor > 0.0 or math.isfinite(self.time_horizon)
                  or self.generation_cap < 10 ** 9 or self.cell_budget < 10 ** 12)
        if not active:
            raise DomainError("at least one truncation cap must be active")

    def scaled(self, factor: float, alpha: float) -> "TruncationPolicy":
        """The policy covariant with scaling sizes by `factor`.

        Size caps scale by factor, the horizon by factor^{-alpha}; under the
        scaled policy a system from factor * x is the system from x with all
        sizes multiplied by factor and all times by factor^{-alpha}.
        """
        horizon = (self.time_horizon * float(np.power(factor, -alpha))
                   if math.isfinite(self.time_horizon) else math.inf)
        return TruncationPolicy(size_floor=self.size_floor * factor,
                                generation_cap=self.generation_cap,
                                time_horizon=horizon,
                                cell_budget=self.cell_budget,
                                max_step=self.max_step,
                                path_size_floor=self.path_size_floor * factor,
                                checkpoint_age=self.checkpoint_age)


@dataclass
class CellRecord:
    """One cell: canonical path data plus the root scale it is read through."""

    label: Label
    status: str
    expanded: bool
    scale: float
    timescale: float  # scale ** (-alpha)
    birth_canon: float
    size_canon: float
    death_canon: float
    ages_canon: np.ndarray
    sizes_canon: np.ndarray
    children: list[ChildLink] = field(default_factory=list)

    @property
    def birth_time(self) -> float:
        return self.timescale * self.birth_canon

    @property
    def initial_size(self) -> float:
        return self.scale * self.size_canon

    @property
    def death_age(self) -> float:
        return self.timescale * self.death_canon

    @property
    def ages(self) -> np.ndarray:
        return self.timescale * self.ages_canon

    @property
    def sizes(self) -> np.ndarray:
        return self.scale * self.sizes_canon

    @property
    def terminal_size(self) -> float:
        return self.scale * float(self.sizes_canon[-1])

    def children_abs(self) -> list[tuple[float, float, Label]]:
        return [(self.timescale * a, self.scale * s, lab) for a, s, lab in self.children]

    @property
    def path(self) -> PssmpPath:
        absorbed = self.death_age if self.status == STATUS_ABSORBED else None
        return PssmpPath(times=self.ages, sizes=self.sizes, absorption_time=absorbed,
                         alpha=None, origin=self.initial_size)

    def size_at_age_canon(self, age: float) -> float:
        idx = int(np.searchsorted(self.ages_canon, age, side="right")) - 1
        return float(self.sizes_canon[max(idx, 0)])


def _simulate_core(size0: float, model: CumulantModel, policy: TruncationPolicy,
                   rng: np.random.Generator, floor_canon: float, max_age: float,
                   max_chunks: int = 64):
    """Simulate one cell's pssMp path in canonical units from initial size size0.

    Stops when the size falls below the path floor (Absorbed) or the local
    clock passes max_age (TruncatedTime).  Returns
    (ages, sizes, children_raw, death_age, status) with children in
    chronological order as (age, size) pairs.
    """
    triplet = model.triplet
    alpha = model.alpha
    age_scale = float(np.power(size0, -alpha))
    path_floor = min(floor_canon, 0.5 * size0)
    v_stop = math.log(path_floor / size0)
    mu = psi_prime(triplet, 0.0)
    first = 1.25 * abs(v_stop) / abs(mu)

    sampler = XiSampler(triplet, rng, policy.max_step)
    acc = _ClockAccumulator(alpha)
    t_parts = [np.array([0.0])]
    v_parts = [np.array([0.0])]
    n_nodes = 1
    stop_idx = None
    status = None
    chunk = first
    for k in range(max_chunks):
        t_chunk, v_chunk = sampler.extend(chunk)
        c_nodes = acc.push(t_chunk, v_chunk)
        a_chunk = age_scale * c_nodes
        hit_a = np.nonzero(v_chunk <= v_stop)[0]
        hit_t = np.nonzero(a_chunk >= max_age)[0] if math.isfinite(max_age) else np.empty(0, int)
        cand = []
        if hit_a.size:
            cand.append((int(hit_a[0]), STATUS_ABSORBED))
        if hit_t.size:
            cand.append((int(hit_t[0]), STATUS_TIME))
        if cand:
            local, status = min(cand, key=lambda c: (c[0], c[1] != STATUS_ABSORBED))
            keep = local + 1 if status == STATUS_ABSORBED else local
            t_parts.append(t_chunk[:keep])
            v_parts.append(v_chunk[:keep])
            ages_tail = a_chunk[:keep]
            n_nodes += keep
            stop_idx = n_nodes - 1
            break
        t_parts.append(t_chunk)
        v_parts.append(v_chunk)
        n_nodes += len(t_chunk)
        chunk = 0.5 * first * (1.5 ** k)
    else:
        raise PathTooShortError(
            f"cell path unresolved after {sampler.horizon:.3g} units of xi-time")

    values = np.concatenate(v_parts)
    ages = age_scale * np.concatenate(
        [[0.0], np.cumsum(_segments_for(np.concatenate(t_parts), values, alpha))])
    sizes = size0 * np.exp(values)
    if status == STATUS_ABSORBED:
        death = float(ages[-1])
    else:
        death = float(max_age)

    children_raw = []
    for idx, dv in sampler.jump_marks:
        if dv >= 0.0 or idx > stop_idx:
            continue
        age = float(ages[idx])
        if status == STATUS_TIME and age >= death:
            continue
        children_raw.append((age, float(sizes[idx - 1] - sizes[idx])))

    if policy.checkpoint_age is not None:
        keep = _thin_nodes(ages, policy.checkpoint_age,
                           [i for i, dv in sampler.jump_marks if i <= stop_idx])
        ages, sizes = ages[keep], sizes[keep]
    return ages, sizes, children_raw, death, status


def _segments_for(times, values, alpha):
    from .lamperti import clock_segments
    return clock_segments(times, values, alpha)


def _thin_nodes(ages: np.ndarray, spacing: float, jump_idx: list[int]) -> np.ndarray:
    keep = np.zeros(len(ages), dtype=bool)
    keep[0] = keep[-1] = True
    for i in jump_idx:
        keep[i - 1] = keep[i] = True
    last = ages[0]
    for i in range(1, len(ages)):
        if keep[i]:
            last = ages[i]
        elif ages[i] - last >= spacing:
            keep[i] = True
            last = ages[i]
    return np.nonzero(keep)[0]


def _frozen_record(label: Label, status: str, scale: float, timescale: float,
                   birth_canon: float, size_canon: float) -> CellRecord:
    return CellRecord(label=label, status=status, expanded=False, scale=scale,
                      timescale=timescale, birth_canon=birth_canon, size_canon=size_canon,
                      death_canon=0.0, ages_canon=np.array([0.0]),
                      sizes_canon=np.array([size_canon]), children=[])


def simulate_cell(x0: float, model: CumulantModel, policy: TruncationPolicy,
                  seed, label: Label = ()) -> CellRecord:
    """Simulate a single cell of initial size x0 born at time 0.

    All negative jumps are recorded as children with sizes equal to the size
    discontinuity; the record itself is canonical with scale x0.
    """
    if x0 <= 0.0:
        raise DomainError("x0 must be > 0")
    rng = np.random.default_rng(seed)
    timescale = float(np.power(x0, -model.alpha))
    floor_canon = policy.path_size_floor / x0
    max_age = policy.time_horizon / timescale if math.isfinite(policy.time_horizon) else math.inf
    ages, sizes, kids, death, status = _simulate_core(
        1.0, model, policy, rng, floor_canon, max_age)
    children = [ChildLink(a, s, label + (j,)) for j, (a, s) in enumerate(kids, start=1)]
    return CellRecord(label=label, status=status, expanded=True, scale=float(x0),
                      timescale=timescale, birth_canon=0.0, size_canon=1.0,
                      death_canon=death, ages_canon=ages, sizes_canon=sizes,
                      children=children)


@dataclass
class CellSystem:
    """A simulated genealogy: records indexed by Ulam-Harris label."""

    model: CumulantModel
    policy: TruncationPolicy
    master_seed: object
    root_sizes: tuple[float, ...]
    roots: list[Label]
    records: dict[Label, CellRecord]
    stats: dict

    def generation_of(self, label: Label) -> int:
        offset = 0 if self.roots == [()] else 1
        return len(label) - offset

    def expanded_records(self):
        return (r for r in self.records.values() if r.expanded)

    def frozen_records(self):
        return (r for r in self.records.values() if not r.expanded)

    def frozen_mass(self) -> float:
        """Total omega_minus-mass held by frozen leaves (undercount indicator)."""
        w = self.model.omega_minus
        return float(sum(r.initial_size ** w for r in self.frozen_records()))


def build_system(x_bar: Union[float, Sequence[float]], model: CumulantModel,
                 policy: TruncationPolicy, master_seed) -> CellSystem:
    """Expand the cell system from root size(s) under the truncation policy.

    Worklist expansion in breadth-first label order; per-cell streams come
    from label_rng so enlarging any cap never changes already-simulated cells.
    """
    if isinstance(x_bar, (int, float)):
        sizes = (float(x_bar),)
        roots: list[Label] = [()]
    else:
        sizes = tuple(float(x) for x in x_bar)
        if any(s <= 0 for s in sizes):
            raise DomainError("root sizes must be positive")
        if any(sizes[i] < sizes[i + 1] for i in range(len(sizes) - 1)):
            raise DomainError("root size list must be nonincreasing")
        roots = [(k,) for k in range(1, len(sizes) + 1)]
    if sizes[0] <= 0.0:
        raise DomainError("root size must be positive")

    alpha = model.alpha
    records: dict[Label, CellRecord] = {}
    counts: Counter = Counter()
    n_expanded = 0
    budget_exhausted = False
    gen_offset = 0 if roots == [()] else 1

    work: deque = deque()
    for root_label, x in zip(roots, sizes):
        scale = x
        timescale = float(np.power(scale, -alpha))
        floor_canon = policy.size_floor / scale
        path_floor_canon = policy.path_size_floor / scale
        t_canon = (policy.time_horizon / timescale
                   if math.isfinite(policy.time_horizon) else math.inf)
        work.append((root_label, 0.0, 1.0, scale, timescale, floor_canon,
                     path_floor_canon, t_canon))

    while work:
        label, birth, size, scale, timescale, floor_c, path_floor_c, t_c = work.popleft()
        generation = len(label) - gen_offset
        frozen = None
        if size < floor_c:
            frozen = STATUS_SIZE
        elif generation >= policy.generation_cap:
            frozen = STATUS_GENERATION
        elif birth >= t_c:
            frozen = STATUS_TIME
        elif n_expanded >= policy.cell_budget:
            frozen = STATUS_BUDGET
            budget_exhausted = True
        if frozen is not None:
            records[label] = _frozen_record(label, frozen, scale, timescale, birth, size)
            counts[frozen] += 1
            continue

        rng = label_rng(master_seed, label)
        ages, szs, kids, death, status = _simulate_core(
            size, model, policy, rng, path_floor_c, t_c - birth)
        children = []
        for j, (age, csize) in enumerate(kids, start=1):
            clab = label + (j,)
            children.append(ChildLink(age, csize, clab))
            work.append((clab, birth + age, csize, scale, timescale, floor_c,
                         path_floor_c, t_c))
        records[label] = CellRecord(label=label, status=status, expanded=True,
                                    scale=scale, timescale=timescale, birth_canon=birth,
                                    size_canon=size, death_canon=death, ages_canon=ages,
                                    sizes_canon=szs, children=children)
        counts[status] += 1
        n_expanded += 1

    stats = {
        "status_counts": dict(counts),
        "n_records": len(records),
        "n_expanded": n_expanded,
        "n_frozen": len(records) - n_expanded,
        "max_generation": max((len(lab) - gen_offset for lab in records), default=0),
        "budget_exhausted": budget_exhausted,
    }
    return CellSystem(model=model, policy=policy, master_seed=master_seed,
                      root_sizes=sizes, roots=roots, records=records, stats=stats)


@dataclass
class GenerationMultiset:
    """Multiset of log birth sizes standing for generation n (frozen carried forward)."""

    generation: int
    log_sizes: np.ndarray
    n_expanded: int
    n_frozen_markers: int


def branching_walk(system: CellSystem, n: int) -> GenerationMultiset:
    """{{ln chi_u(0)}} over generation n.

    Frozen cells of generation <= n stand in for their unexplored subtrees:
    the martingale property makes their birth mass the conditional expectation
    of the descendant mass at any later generation, so carrying them forward
    keeps power sums unbiased under truncation.
    """
    if n < 0 or n > system.policy.generation_cap + 1:
        raise DomainError(f"generation {n} beyond the truncation cap")
    live = [math.log(r.initial_size) for r in system.expanded_records()
            if system.generation_of(r.label) == n]
    frozen = [math.log(r.initial_size) for r in system.frozen_records()
              if system.generation_of(r.label) <= n]
    return GenerationMultiset(generation=n,
                              log_sizes=np.sort(np.array(live + frozen)),
                              n_expanded=len(live), n_frozen_markers=len(frozen))


def intrinsic_martingale(system: CellSystem, n: int) -> float:
    """M(n): generation-n sum of birth sizes to the power omega_minus."""
    walk = branching_walk(system, n)
    w = system.model.omega_minus
    return float(np.exp(w * walk.log_sizes).sum()) if walk.log_sizes.size else 0.0


def fragments_at(system: CellSystem, t: float) -> np.ndarray:
    """Sizes of cells alive at time t (b_u <= t < b_u + zeta_u), nonincreasing.

    Frozen subtrees contribute nothing; the undercount below the size floor
    is visible through CellSystem.frozen_mass().
    """
    if t >= system.policy.time_horizon:
        raise DomainError(f"t={t} is beyond the policy horizon")
    out = []
    for rec in system.expanded_records():
        t_canon = t / rec.timescale
        age = t_canon - rec.birth_canon
        if age < 0.0 or age >= rec.death_canon:
            continue
        out.append(rec.scale * rec.size_at_age_canon(age))
    return np.sort(np.array(out))[::-1] if out else np.empty(0)


def export_tree(system: CellSystem) -> str:
    """One line per cell: label, parent, birth time, birth size, death age, status."""
    lines = ["label\tparent\tbirth_time\tinitial_size\tdeath_age\tstatus"]
    for label in sorted(system.records, key=lambda u: (len(u), u)):
        rec = system.records[label]
        parent = label_str(label[:-1]) if label and label not in system.roots else "-"
        lines.append("\t".join([label_str(label), parent, repr(rec.birth_time),
                                repr(rec.initial_size), repr(rec.death_age), rec.status]))
    return "\n".join(lines) + "\n"

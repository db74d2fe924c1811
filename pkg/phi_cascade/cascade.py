"""
The cascade measure mu on [-1, 1).

A generation-g construction interval has length 2^(1 - (g+1)(g+2)/2) and
2^(g+2) children of generation k = g + 1, ordered left to right by the ordinals
-2^k < ... < -1 < +1 < ... < 2^k. The child at position p (0-based) has pull-back
[-1 + p 2^-k, -1 + (p+1) 2^-k), which is exactly the image of the child under
the affine map taking the parent onto [-1, 1). Hence a contiguous block of
children has mass mu(parent) * phi(image of the block).
"""

import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from mpmath import mp
from tqdm import tqdm

from phi_cascade.numerics import (
    DomainError,
    DyadicRational,
    IntervalD,
    LogPositive,
    Real,
    log_add,
    log_sum,
)
from phi_cascade.weight import PhiConfig, log_phi_integral

logger = logging.getLogger(__name__)

MAX_ENUMERATION_GENERATION = 5
ROOT_GENERATION = -1


def length_exponent(generation: int) -> int:
    return 1 - (generation + 1) * (generation + 2) // 2


def generation_length(generation: int) -> DyadicRational:
    return DyadicRational.two_pow(length_exponent(generation))


def family_size(child_generation: int) -> int:
    """Number of siblings in a generation-k family (children of a generation k-1 node)."""
    return 2 ** (child_generation + 1)


def position_to_ordinal(child_generation: int, position: int) -> int:
    half = 2**child_generation
    assert 0 <= position < 2 * half, f"position {position} out of range"
    return position - half if position < half else position - half + 1


def ordinal_to_position(child_generation: int, ordinal: int) -> int:
    half = 2**child_generation
    assert ordinal != 0 and abs(ordinal) <= half, f"bad ordinal {ordinal}"
    return ordinal + half if ordinal < 0 else ordinal + half - 1


@dataclass(frozen=True)
class NodeIndex:
    """Path (i_1, ..., i_k) with i_m in {+-1, ..., +-2^(m-1)}; indexes generation k-1."""

    path: tuple[int, ...] = ()

    def __post_init__(self):
        path = tuple(int(i) for i in self.path)
        for m, i in enumerate(path, start=1):
            if i == 0 or abs(i) > 2 ** (m - 1):
                raise ValueError(f"coordinate {m} of {path} must be in +-[1, {2 ** (m - 1)}]")
        object.__setattr__(self, "path", path)

    @property
    def generation(self) -> int:
        return len(self.path) - 1

    def child(self, ordinal: int) -> "NodeIndex":
        return NodeIndex(self.path + (ordinal,))

    def parent(self) -> "NodeIndex":
        assert self.path, "the root has no parent"
        return NodeIndex(self.path[:-1])

    def negated(self) -> "NodeIndex":
        return NodeIndex(tuple(-i for i in self.path))

    def is_ancestor_of(self, other: "NodeIndex") -> bool:
        return other.path[: len(self.path)] == self.path

    def positions(self) -> list[int]:
        return [ordinal_to_position(m, i) for m, i in enumerate(self.path)]


@dataclass(frozen=True)
class PullBack:
    child_ordinal: int
    extent: IntervalD


def pull_back(child_generation: int, ordinal: int) -> PullBack:
    k = child_generation
    step = DyadicRational.two_pow(-k)
    lo = ordinal if ordinal < 0 else ordinal - 1
    return PullBack(ordinal, IntervalD(step * lo, step * (lo + 1)))


def block_pull_back(child_generation: int, p_lo: int, p_hi: int) -> IntervalD:
    """Pull-back of the children at positions [p_lo, p_hi) of one family."""
    step = DyadicRational.two_pow(-child_generation)
    return IntervalD(step * p_lo - 1, step * p_hi - 1)


@dataclass(frozen=True)
class ConstructionInterval:
    index: NodeIndex
    extent: IntervalD
    generation: int
    ln_mass: LogPositive

    @property
    def length(self) -> DyadicRational:
        return self.extent.length

    @property
    def left(self) -> DyadicRational:
        return self.extent.left

    @property
    def right(self) -> DyadicRational:
        return self.extent.right

    def child_extent(self, position: int) -> IntervalD:
        step = generation_length(self.generation + 1)
        left = self.left + step * position
        return IntervalD(left, left + step)

    def to_json(self) -> dict:
        return {
            "path": list(self.index.path),
            "left": self.left.to_json(),
            "len_exp2": length_exponent(self.generation),
            "ln_mass": self.ln_mass.ln_float(),
        }


def root() -> ConstructionInterval:
    return ConstructionInterval(NodeIndex(), IntervalD.unit(), ROOT_GENERATION, LogPositive.one())


def child_at(node: ConstructionInterval, position: int, cfg: PhiConfig) -> ConstructionInterval:
    k = node.generation + 1
    ordinal = position_to_ordinal(k, position)
    share = log_phi_integral(block_pull_back(k, position, position + 1), cfg)
    return ConstructionInterval(
        index=node.index.child(ordinal),
        extent=node.child_extent(position),
        generation=k,
        ln_mass=node.ln_mass * share,
    )


def children(node: ConstructionInterval, cfg: PhiConfig) -> list[ConstructionInterval]:
    return [child_at(node, p, cfg) for p in range(family_size(node.generation + 1))]


def node_from_index(index: NodeIndex, cfg: PhiConfig) -> ConstructionInterval:
    node = root()
    for position in index.positions():
        node = child_at(node, position, cfg)
    return node


def _check_in_support(x: DyadicRational) -> None:
    if not IntervalD.unit().contains_point(x):
        raise DomainError(f"x={x} is outside [-1, 1)")


def chain(x: Real, generation: int, cfg: PhiConfig) -> list[ConstructionInterval]:
    """The construction intervals containing x, from the root down to `generation`."""
    x = DyadicRational.coerce(x)
    _check_in_support(x)
    nodes = [root()]
    for k in range(ROOT_GENERATION + 1, generation + 1):
        node = nodes[-1]
        position = (x - node.left).floor_scaled(length_exponent(k))
        nodes.append(child_at(node, position, cfg))
    return nodes


def locate(x: Real, generation: int, cfg: PhiConfig) -> ConstructionInterval:
    if generation < ROOT_GENERATION:
        raise ValueError(f"generation must be >= {ROOT_GENERATION}, got {generation}")
    return chain(x, generation, cfg)[-1]


def child_positions(left: DyadicRational, generation: int, J: IntervalD, contained: bool) -> range:
    """
    Positions of the children of the generation-g interval starting at `left`
    that meet J, or with contained=True that lie in the closure of J.
    """
    e = length_exponent(generation + 1)
    lo, hi = J.left - left, J.right - left
    if contained:
        first, stop = lo.ceil_scaled(e), hi.floor_scaled(e)
    else:
        first, stop = lo.floor_scaled(e), hi.ceil_scaled(e)
    first, stop = max(first, 0), min(stop, family_size(generation + 1))
    return range(first, max(stop, first))


def cover_positions(node: ConstructionInterval, J: IntervalD) -> range:
    """Positions of the children of `node` meeting J."""
    return child_positions(node.left, node.generation, J, contained=False)


def packing_positions(node: ConstructionInterval, J: IntervalD) -> range:
    """Positions of the children of `node` contained in (the closure of) J."""
    return child_positions(node.left, node.generation, J, contained=True)


@dataclass(frozen=True)
class MassEnclosure:
    lower: LogPositive
    upper: LogPositive
    generation_reached: int
    slack: float = 0.0

    @classmethod
    def exact(cls, value: LogPositive, generation_reached: int = ROOT_GENERATION):
        return cls(value, value, generation_reached)

    @property
    def midpoint(self) -> LogPositive:
        if self.lower == self.upper:
            return self.lower
        return log_add(self.lower, self.upper).scaled(mp.mpf(1) / 2)

    @property
    def gap(self) -> float:
        if self.upper.is_zero:
            return 0.0
        if self.lower.is_zero:
            return float("inf")
        return float(mp.expm1((self.upper / self.lower).ln_value))

    def certified(self, rel_gap: float) -> bool:
        return self.gap <= rel_gap

    def contains(self, value: LogPositive) -> bool:
        return self.lower <= value <= self.upper


@dataclass
class MeasureConfig:
    phi: PhiConfig
    rel_gap: float = 1e-8
    max_gen: int = 18


def mass_of_interval(
    J: IntervalD, rel_gap: float, max_gen: int, cfg: PhiConfig
) -> MassEnclosure:
    """
    Certified enclosure of mu(J).

    J is clipped to [-1, 1). At each node the children fully inside J form one
    contiguous block whose mass is exact via its pull-back; the at most two
    boundary children are recursed into. Recursion stops once the boundary
    children weigh at most rel_gap/4 of the exact part, or at max_gen; their
    mass is then added to the upper bound only. Each pull-back integral carries
    relative error quad_rel_tol, so a value built from n integrals is widened
    by n * quad_rel_tol.
    """
    unit = IntervalD.unit()
    clipped = J.intersect(unit)
    if clipped is None:
        return MassEnclosure.exact(LogPositive.zero())
    if clipped == unit:
        return MassEnclosure.exact(LogPositive.one())

    exact_parts: list[LogPositive] = []
    pending = [(root(), clipped)]
    factors = 0
    generation = ROOT_GENERATION
    while pending:
        next_pending = []
        for node, piece in pending:
            k = node.generation + 1
            inside = packing_positions(node, piece)
            if len(inside) > 0:
                block = block_pull_back(k, inside.start, inside.stop)
                exact_parts.append(node.ln_mass * log_phi_integral(block, cfg))
                factors = max(factors, k + 1)
            meeting = cover_positions(node, piece)
            for p in sorted({meeting.start, meeting.stop - 1}):
                if p in inside:
                    continue
                child = child_at(node, p, cfg)
                sub = piece.intersect(child.extent)
                if sub is not None:
                    next_pending.append((child, sub))
        pending = next_pending
        generation += 1
        if not pending:
            break
        remainder = log_sum(child.ln_mass for child, _ in pending)
        lower = log_sum(exact_parts)
        if remainder <= lower.scaled(rel_gap / 4) or generation >= max_gen:
            factors = max(factors, generation + 1)
            break

    lower = log_sum(exact_parts)
    upper = log_add(lower, log_sum(child.ln_mass for child, _ in pending))
    slack = factors * cfg.quad_rel_tol
    return MassEnclosure(
        lower=lower.scaled(1 - slack) if not lower.is_zero else lower,
        upper=upper.scaled(1 + slack),
        generation_reached=generation,
        slack=slack,
    )


def enclose(J: IntervalD, cfg: MeasureConfig) -> MassEnclosure:
    return mass_of_interval(J, cfg.rel_gap, cfg.max_gen, cfg.phi)


def mass_of_ball(x: Real, r: Real, cfg: MeasureConfig) -> MassEnclosure:
    """mu(B(x, r)); mu has no atoms, so the half-open [x-r, x+r) stands for the ball."""
    return enclose(IntervalD.ball(x, r), cfg)


def enumerate_generation(generation: int, cfg: PhiConfig) -> Iterator[ConstructionInterval]:
    """All generation-g nodes, left to right. Only feasible for small g."""
    if generation > MAX_ENUMERATION_GENERATION:
        raise ValueError(
            f"generation {generation} has 2^{(generation + 1) * (generation + 2) // 2} "
            f"nodes; enumeration is capped at {MAX_ENUMERATION_GENERATION}"
        )
    for node in export_tree(generation, cfg):
        if node.generation == generation:
            yield node


def export_tree(generation: int, cfg: PhiConfig) -> Iterator[ConstructionInterval]:
    """Depth-first, left-to-right walk over every node down to `generation`."""
    if generation > MAX_ENUMERATION_GENERATION:
        raise ValueError(f"export is capped at generation {MAX_ENUMERATION_GENERATION}")
    stack = [root()]
    while stack:
        node = stack.pop()
        yield node
        if node.generation < generation:
            stack.extend(reversed(children(node, cfg)))


@dataclass(frozen=True)
class MuSampler:
    rng_seed: int
    max_generation: int


def _draw_position(child_generation: int, rng: np.random.Generator, cfg: PhiConfig) -> int:
    """
    Inverse-CDF draw of a child position: the smallest q with
    phi([-1, -1 + q 2^-k)) > u * phi([-1, 1)). Equivalent to picking each child
    with probability equal to its mass share, without evaluating every share.
    """
    count = family_size(child_generation)
    unit = IntervalD.unit()
    # Two doubles give ~106 bits of uniform resolution.
    u = mp.mpf(rng.random()) + mp.mpf(rng.random()) * mp.mpf(2) ** -53
    target = LogPositive.from_real(u) * log_phi_integral(unit, cfg)
    lo, hi = 1, count
    while lo < hi:
        mid = (lo + hi) // 2
        prefix = log_phi_integral(block_pull_back(child_generation, 0, mid), cfg)
        if prefix > target:
            hi = mid
        else:
            lo = mid + 1
    return lo - 1


def sample_node(
    generation: int, rng: np.random.Generator, cfg: PhiConfig
) -> ConstructionInterval:
    """Descend from the root to `generation`, choosing children by mass share."""
    node = root()
    for k in range(ROOT_GENERATION + 1, generation + 1):
        node = child_at(node, _draw_position(k, rng, cfg), cfg)
    return node


def sample_mu(
    sampler: MuSampler, n: int, cfg: PhiConfig, progress: bool = False
) -> list[tuple[DyadicRational, NodeIndex]]:
    """
    Draw n mu-distributed points by descending to generation max_generation.

    Returns:
        (left endpoint of the final interval, its NodeIndex) per sample.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(sampler.rng_seed)
    samples = []
    for _ in tqdm(range(n), desc="sampling", disable=not progress):
        node = sample_node(sampler.max_generation, rng, cfg)
        samples.append((node.left, node.index))
    return samples

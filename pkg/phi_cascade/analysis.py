"""
Doubling-ratio scans, the steered non-doubling point, porosity holes and
instance checkers for the comparability lemmas on mu.
"""

import logging
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import partial

import numpy as np
from mpmath import mp
from tqdm import tqdm

from phi_cascade.cascade import (
    ConstructionInterval,
    MassEnclosure,
    MeasureConfig,
    child_at,
    chain,
    cover_positions,
    enclose,
    ordinal_to_position,
    packing_positions,
    root,
    sample_node,
)
from phi_cascade.numerics import (
    DomainError,
    DyadicRational,
    InfeasibleScheduleError,
    IntervalD,
    LogPositive,
    PreconditionError,
    Real,
)
from phi_cascade.utils import parallel_map
from phi_cascade.weight import PhiConfig, g_ratio, log_phi_integral

logger = logging.getLogger(__name__)


def _ln_to_float(ln) -> float:
    return float(mp.exp(ln))


# Doubling scans


@dataclass(frozen=True)
class DoublingScanRow:
    r: DyadicRational
    ln_mass_r: LogPositive
    ln_mass_2r: LogPositive
    ln_mass_17r: LogPositive
    enclosure_gap: float

    @property
    def ln2_r(self) -> float:
        return self.r.log2()

    @property
    def ln_r(self) -> float:
        return float(mp.log(self.r.to_mpf()))

    @property
    def ln_ratio2(self):
        return (self.ln_mass_2r / self.ln_mass_r).ln_value

    @property
    def ln_ratio17(self):
        return (self.ln_mass_17r / self.ln_mass_r).ln_value

    @property
    def ratio2(self) -> float:
        return _ln_to_float(self.ln_ratio2)

    @property
    def ratio17(self) -> float:
        return _ln_to_float(self.ln_ratio17)


def _scan_row(r: DyadicRational, x: DyadicRational, cfg: MeasureConfig) -> DoublingScanRow:
    enclosures = [enclose(IntervalD.ball(x, r * m), cfg) for m in (1, 2, 17)]
    return DoublingScanRow(
        r=r,
        ln_mass_r=enclosures[0].midpoint,
        ln_mass_2r=enclosures[1].midpoint,
        ln_mass_17r=enclosures[2].midpoint,
        enclosure_gap=max(e.gap for e in enclosures),
    )


def doubling_scan(
    x: Real,
    scales: list[Real],
    cfg: MeasureConfig,
    threads: int = 1,
    progress: bool = False,
) -> list[DoublingScanRow]:
    x = DyadicRational.coerce(x)
    if not IntervalD.unit().contains_point(x):
        raise DomainError(f"x={x} is outside [-1, 1)")
    radii = [DyadicRational.coerce(r) for r in scales]
    if any(r <= 0 for r in radii):
        raise ValueError("scales must be positive")
    return parallel_map(
        partial(_scan_row, x=x, cfg=cfg),
        radii,
        threads,
        desc="doubling scan",
        progress=progress,
        shared_cache=cfg.phi.cache,
    )


# Steered non-doubling point

# (i, k) pairs: at generation k the point sits in the 2^-i boundary band.
EXHIBIT_SCHEDULE = ((2, 3), (3, 6), (4, 9), (5, 12), (6, 15))


@dataclass(frozen=True)
class BandWitness:
    i: int
    k: int
    interval: ConstructionInterval
    distance: DyadicRational

    @property
    def length(self) -> DyadicRational:
        return self.interval.length

    @property
    def in_band(self) -> bool:
        return (
            self.length.shift(-self.i) <= self.distance <= self.length.shift(1 - self.i)
        )


@dataclass(frozen=True)
class NonDoublingPoint:
    x: DyadicRational
    schedule: tuple[tuple[int, int], ...]
    witnesses: tuple[BandWitness, ...]

    @property
    def radii(self) -> list[DyadicRational]:
        return [w.distance for w in self.witnesses]


def _validate_schedule(schedule: list[tuple[int, int]], max_gen: int) -> None:
    if not schedule:
        raise InfeasibleScheduleError("schedule is empty")
    previous_k = None
    for n, (i, k) in enumerate(schedule):
        entry = f"entry {n} (i={i}, k={k})"
        if i < 2:
            raise InfeasibleScheduleError(f"{entry}: i must be >= 2")
        if k < 0:
            raise InfeasibleScheduleError(f"{entry}: k must be >= 0")
        if previous_k is not None and k <= previous_k:
            raise InfeasibleScheduleError(f"{entry}: k must strictly increase")
        if i > k + 2:
            raise InfeasibleScheduleError(
                f"{entry}: band 2^-{i} l(I) is finer than generation {k + 1} intervals"
            )
        if k + 1 > max_gen:
            raise InfeasibleScheduleError(f"{entry}: needs generation {k + 1} > max_gen {max_gen}")
        previous_k = k


def build_nondoubling_point(
    schedule: list[tuple[int, int]], cfg: MeasureConfig
) -> NonDoublingPoint:
    """
    Steer a path down the cascade so that for each scheduled (i, k) the point x
    sits at distance between 2^-i l(I) and 2^(1-i) l(I) from the boundary of its
    generation-k interval I.

    At a scheduled generation k the path enters the first generation-(k+1) child
    of the left band [L + 2^-i l, L + 2^(1-i) l]; elsewhere it takes the ordinal
    +1 child. x is the left endpoint of the deepest interval.
    """
    schedule = [(int(i), int(k)) for i, k in schedule]
    _validate_schedule(schedule, cfg.max_gen)
    band_for_generation = {k: i for i, k in schedule}
    deepest = schedule[-1][1] + 1

    node = root()
    for g in range(0, deepest + 1):
        parent_generation = g - 1
        if parent_generation in band_for_generation:
            i = band_for_generation[parent_generation]
            position = 2 ** (parent_generation + 2 - i)
        else:
            position = ordinal_to_position(g, 1)
        node = child_at(node, position, cfg.phi)
    x = node.left

    nodes = chain(x, deepest, cfg.phi)
    witnesses = []
    for i, k in schedule:
        interval = nodes[k + 1]
        witness = BandWitness(i, k, interval, interval.extent.distance_to_boundary(x))
        assert witness.in_band, f"steering missed the band for (i={i}, k={k})"
        witnesses.append(witness)
    logger.info(f"Built non-doubling point x={x} for schedule {schedule}")
    return NonDoublingPoint(x=x, schedule=tuple(schedule), witnesses=tuple(witnesses))


@dataclass(frozen=True)
class NonDoublingBoundRow:
    i: int
    k: int
    r: DyadicRational
    lam: Fraction
    J: IntervalD
    J_star: IntervalD
    C: Fraction
    ln_ratio17_lower: object
    ln_bound: object | None

    @property
    def applicable(self) -> bool:
        return self.ln_bound is not None

    @property
    def holds(self) -> bool | None:
        if self.ln_bound is None:
            return None
        return self.ln_ratio17_lower >= self.ln_bound


def check_nondoubling_bound(point: NonDoublingPoint, cfg: MeasureConfig) -> list[NonDoublingBoundRow]:
    """
    Per witness, compare a certified lower bound on mu(B(x,17r))/mu(B(x,r)) with
    G_{C/8, 4 lam}, where J = B(x,r) and J* = B(x,17r) are clipped to I, lam =
    l(J)/l(I) and C = min(l(J*)/l(J), 9). Rows with C <= 8, or outside the domain
    of G, report no bound.
    """
    rows = []
    for w in point.witnesses:
        I = w.interval.extent
        ball_r = IntervalD.ball(point.x, w.distance)
        ball_17 = IntervalD.ball(point.x, w.distance * 17)
        J = ball_r.intersect(I)
        J_star = ball_17.intersect(I)
        assert J is not None and J_star is not None, f"balls miss {I}"
        lam = J.length.ratio(I.length)
        C = J_star.length.ratio(J.length)
        ln_lower = (enclose(ball_17, cfg).lower / enclose(ball_r, cfg).upper).ln_value
        C_used = min(C, Fraction(9))
        ln_bound = None
        if C > 8 and C_used / 8 * 4 * lam <= 1:
            ln_bound = g_ratio(C_used / 8, 4 * lam, cfg.phi).ln_G
        rows.append(
            NonDoublingBoundRow(
                i=w.i,
                k=w.k,
                r=w.distance,
                lam=lam,
                J=J,
                J_star=J_star,
                C=C,
                ln_ratio17_lower=ln_lower,
                ln_bound=ln_bound,
            )
        )
    return rows


def band_mass(i: int, cfg: PhiConfig) -> LogPositive:
    """
    mu of the set of x whose generation-k interval I has 2^-i l(I) <= d(x, dI) <=
    2^(1-i) l(I). The two bands are unions of generation-(k+1) children for
    k >= i - 2, so the value does not depend on k.
    """
    if i < 2:
        raise ValueError(f"i must be >= 2, got {i}")
    band = IntervalD(DyadicRational.two_pow(1 - i) - 1, DyadicRational.two_pow(2 - i) - 1)
    return log_phi_integral(band, cfg).scaled(2)


@dataclass(frozen=True)
class DoublingFractionReport:
    threshold: float
    n_points: int
    n_exceeding: int
    max_ln_ratio17: tuple

    @property
    def fraction(self) -> float:
        return self.n_exceeding / self.n_points


def doubling_fraction(
    points: list[Real],
    scales: list[Real],
    threshold: float,
    cfg: MeasureConfig,
    threads: int = 1,
    progress: bool = False,
) -> DoublingFractionReport:
    """Fraction of points whose scan shows ratio17 > threshold at some tested scale."""
    ln_threshold = mp.log(threshold)
    maxima = []
    for x in tqdm(points, desc="doubling fraction", disable=not progress):
        rows = doubling_scan(x, scales, cfg, threads=threads)
        maxima.append(max(row.ln_ratio17 for row in rows))
    return DoublingFractionReport(
        threshold=threshold,
        n_points=len(maxima),
        n_exceeding=sum(m > ln_threshold for m in maxima),
        max_ln_ratio17=tuple(maxima),
    )


# Porosity


@dataclass(frozen=True)
class PorosityResult:
    x: DyadicRational
    r: DyadicRational
    epsilon: float
    delta: DyadicRational
    y: DyadicRational
    grid_gen: int
    hole_upper: LogPositive
    ball_lower: LogPositive

    @property
    def hole(self) -> IntervalD | None:
        if self.delta <= 0:
            return None
        return IntervalD.ball(self.y, self.delta * self.r)


def porosity_search(
    x: Real, r: Real, epsilon: float, grid_gen: int, cfg: MeasureConfig, progress: bool = False
) -> PorosityResult:
    """
    Largest hole B(y, delta r) inside B(x, r) with mu(hole) <= epsilon mu(B(x, r)),
    over windows of w consecutive cells of width r 2^-grid_gen (delta = w
    2^-(grid_gen+1)). Windows are screened with summed cell upper bounds, widest
    first and leftmost on ties; the winner is certified with its own enclosure.
    """
    x, r = DyadicRational.coerce(x), DyadicRational.coerce(r)
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    ball = IntervalD.ball(x, r)
    if ball.intersect(IntervalD.unit()) is None:
        raise DomainError(f"B({x}, {r}) misses [-1, 1)")
    ball_enc = enclose(ball, cfg)

    def result(delta: DyadicRational, y: DyadicRational, hole_upper: LogPositive):
        return PorosityResult(x, r, epsilon, delta, y, grid_gen, hole_upper, ball_enc.lower)

    if epsilon >= 1:
        return result(DyadicRational(1), x, ball_enc.upper)

    n = 2 ** (grid_gen + 1)
    h = r.shift(-grid_gen)
    start = x - r
    cells = [
        enclose(IntervalD(start + h * j, start + h * (j + 1)), cfg).upper.to_mpf()
        for j in tqdm(range(n), desc="porosity cells", disable=not progress)
    ]
    prefix = [mp.mpf(0)]
    for value in cells:
        prefix.append(prefix[-1] + value)
    budget = ball_enc.lower.scaled(epsilon)
    budget_linear = budget.to_mpf()

    for w in range(n, 0, -1):
        for j in range(n - w + 1):
            if prefix[j + w] - prefix[j] > budget_linear:
                continue
            hole = IntervalD(start + h * j, start + h * (j + w))
            hole_enc = enclose(hole, cfg)
            if hole_enc.upper <= budget:
                return result(DyadicRational(w).shift(-grid_gen - 1), hole.midpoint, hole_enc.upper)
    return result(DyadicRational(0), x, LogPositive.zero())


def verify_porosity(result: PorosityResult, cfg: MeasureConfig, tighten: float = 10) -> bool:
    """Re-check a porosity result with rel_gap divided by `tighten`."""
    if result.delta <= 0:
        return True
    if result.epsilon >= 1:
        return True
    tight = replace(cfg, rel_gap=cfg.rel_gap / tighten)
    ball = IntervalD.ball(result.x, result.r)
    hole = result.hole
    assert hole is not None
    if not ball.contains_interval(hole):
        return False
    return enclose(hole, tight).upper <= enclose(ball, tight).lower.scaled(result.epsilon)


@dataclass(frozen=True)
class PorosityScan:
    results: tuple[PorosityResult, ...]

    @property
    def max_delta(self) -> DyadicRational:
        return max(res.delta for res in self.results)


def _porosity_at(r: DyadicRational, x, epsilon, grid_gen, cfg) -> PorosityResult:
    return porosity_search(x, r, epsilon, grid_gen, cfg)


def porosity_scan(
    x: Real,
    radii: list[Real],
    epsilon: float,
    grid_gen: int,
    cfg: MeasureConfig,
    threads: int = 1,
    progress: bool = False,
) -> PorosityScan:
    """porosity_search over several radii; max delta is the upper-porosity proxy."""
    fn = partial(_porosity_at, x=x, epsilon=epsilon, grid_gen=grid_gen, cfg=cfg)
    radii = [DyadicRational.coerce(r) for r in radii]
    results = parallel_map(
        fn, radii, threads, desc="porosity", progress=progress, shared_cache=cfg.phi.cache
    )
    return PorosityScan(tuple(results))


# Comparability of mu inside a construction interval


@dataclass(frozen=True)
class ComparabilityReport:
    A: IntervalD
    B: IntervalD
    C: float
    lam: Fraction
    ln_ratio_lower: object
    ln_ratio_upper: object

    @property
    def ratio(self) -> float:
        return _ln_to_float((self.ln_ratio_lower + self.ln_ratio_upper) / 2)

    @property
    def empirical_constant(self) -> float:
        """C* = max(ratio/lam, lam/ratio), taken over the whole enclosure."""
        ln_lam = mp.log(mp.mpf(self.lam.numerator) / self.lam.denominator)
        return _ln_to_float(max(self.ln_ratio_upper - ln_lam, ln_lam - self.ln_ratio_lower))

    @property
    def verdict(self) -> bool:
        return self.empirical_constant <= self.C


def _enclose_in_node(J: IntervalD, node: ConstructionInterval, cfg: MeasureConfig) -> MassEnclosure:
    if J == node.extent:
        return MassEnclosure.exact(node.ln_mass, node.generation)
    return enclose(J, cfg)


def _require_packing(J: IntervalD, I_k: ConstructionInterval) -> None:
    if len(packing_positions(I_k, J)) == 0:
        raise PreconditionError(
            f"the generation-{I_k.generation + 1} packing of J={J} in I_k={I_k.extent} is empty"
        )


def check_mu_lemma_1(
    J: IntervalD,
    I_k: ConstructionInterval,
    tau: float,
    cfg: MeasureConfig,
    C_tau: float = 4.0,
) -> ComparabilityReport:
    """(C_tau, lam)-comparability of (J, I_k) for J at distance >= tau l(I_k) from the boundary."""
    if not I_k.extent.contains_interval(J):
        raise PreconditionError(f"J={J} is not contained in I_k={I_k.extent}")
    _require_packing(J, I_k)
    distance = I_k.extent.distance_to_complement(J)
    if distance.to_fraction() < Fraction(tau) * I_k.length.to_fraction():
        raise PreconditionError(f"d(J, dI_k)={distance} is below tau*l(I_k) with tau={tau}")
    enc = _enclose_in_node(J, I_k, cfg)
    return ComparabilityReport(
        A=J,
        B=I_k.extent,
        C=C_tau,
        lam=J.length.ratio(I_k.length),
        ln_ratio_lower=(enc.lower / I_k.ln_mass).ln_value,
        ln_ratio_upper=(enc.upper / I_k.ln_mass).ln_value,
    )


@dataclass(frozen=True)
class MuLemma2Report:
    J: IntervalD
    I_k: IntervalD
    length_ratio: Fraction
    cover_size: int
    ln_C: object
    ln_D: object
    ln_D_star: object

    @property
    def holds(self) -> bool:
        return self.ln_D_star <= self.ln_D

    @property
    def D_star(self) -> float:
        return _ln_to_float(self.ln_D_star)


def check_mu_lemma_2(
    J: IntervalD, I_k: ConstructionInterval, cfg: MeasureConfig, C_quarter: float = 4.0
) -> MuLemma2Report:
    """
    Every pair of cover intervals of J is (D, 1)-comparable with
    D = max(6^25 C^25, C_quarter^2), C the measured mu(5J)/mu(J).
    The length-threshold hypothesis is reported through length_ratio only.
    """
    _require_packing(J, I_k)
    if not I_k.extent.contains_interval(J.dilate(5)):
        raise PreconditionError(f"5J={J.dilate(5)} is not contained in I_k={I_k.extent}")
    length_ratio = J.length.ratio(I_k.length)
    if length_ratio >= Fraction(1, 20):
        raise PreconditionError(f"l(J)/l(I_k)={length_ratio} is not below 1/20")
    ln_C = (enclose(J.dilate(5), cfg).upper / enclose(J, cfg).lower).ln_value
    ln_D = max(25 * (mp.log(6) + ln_C), 2 * mp.log(C_quarter))
    masses = [child_at(I_k, p, cfg.phi).ln_mass.ln_value for p in cover_positions(I_k, J)]
    return MuLemma2Report(
        J=J,
        I_k=I_k.extent,
        length_ratio=length_ratio,
        cover_size=len(masses),
        ln_C=ln_C,
        ln_D=ln_D,
        ln_D_star=max(masses) - min(masses),
    )


@dataclass(frozen=True)
class MuLemma3Report:
    J: IntervalD
    J_star: IntervalD
    C: Fraction
    lam: Fraction
    ln_ratio_lower: object
    ln_G: object

    @property
    def holds(self) -> bool:
        return self.ln_ratio_lower >= self.ln_G

    @property
    def ln_slack(self):
        return self.ln_ratio_lower - self.ln_G


def check_mu_lemma_3(
    J: IntervalD, J_star: IntervalD, I_k: ConstructionInterval, cfg: MeasureConfig
) -> MuLemma3Report:
    """mu(J*)/mu(J) >= G_{C/8, 4 lam} for J touching the boundary of I_k, C = l(J*)/l(J) > 8."""
    if not (J_star.contains_interval(J) and I_k.extent.contains_interval(J_star)):
        raise PreconditionError(f"need J={J} inside J*={J_star} inside I_k={I_k.extent}")
    _require_packing(J, I_k)
    C = J_star.length.ratio(J.length)
    if C <= 8:
        raise PreconditionError(f"l(J*)/l(J)={C} is not above 8")
    if J.left != I_k.left and J.right != I_k.right:
        raise PreconditionError(f"closure of J={J} does not meet the boundary of I_k={I_k.extent}")
    lam = J.length.ratio(I_k.length)
    if C / 8 * 4 * lam > 1:
        raise PreconditionError(f"G_(C/8, 4 lam) undefined: (C/8)*4*lam={C / 8 * 4 * lam} > 1")
    ln_lower = (enclose(J_star, cfg).lower / enclose(J, cfg).upper).ln_value
    return MuLemma3Report(
        J=J,
        J_star=J_star,
        C=C,
        lam=lam,
        ln_ratio_lower=ln_lower,
        ln_G=g_ratio(C / 8, 4 * lam, cfg.phi).ln_G,
    )


# Random admissible instances, anchored on mu-sampled construction intervals


def random_lemma1_instances(
    n: int, generations: list[int], tau: float, seed: int, cfg: MeasureConfig
) -> list[tuple[IntervalD, ConstructionInterval]]:
    """J on a quarter-child grid, at least two children long, tau l(I) away from dI."""
    rng = np.random.default_rng(seed)
    instances = []
    for _ in range(n):
        g = int(rng.choice(generations))
        node = sample_node(g, rng, cfg.phi)
        units = 2 ** (g + 4)
        unit = node.length.shift(-(g + 4))
        lo = math.ceil(Fraction(tau) * units)
        hi = math.floor((1 - Fraction(tau)) * units)
        assert hi - lo >= 8, f"tau={tau} leaves no room at generation {g}"
        a = int(rng.integers(lo, hi - 8 + 1))
        b = int(rng.integers(a + 8, hi + 1))
        instances.append((IntervalD(node.left + unit * a, node.left + unit * b), node))
    return instances


def random_lemma2_instances(
    n: int, generations: list[int], seed: int, cfg: MeasureConfig
) -> list[tuple[IntervalD, ConstructionInterval]]:
    """J of length l(I) 2^-m, 5 <= m <= g+1, with 5J inside I."""
    rng = np.random.default_rng(seed)
    instances = []
    for _ in range(n):
        g = int(rng.choice(generations))
        assert g >= 4, f"generation {g} too coarse for l(J)/l(I) < 1/20"
        node = sample_node(g, rng, cfg.phi)
        m = int(rng.integers(5, g + 2))
        half_length = node.length.shift(-m - 1)
        s = int(rng.integers(4, 2 ** (m + 1) - 6 + 1))
        left = node.left + half_length * s
        instances.append((IntervalD(left, left + half_length.shift(1)), node))
    return instances


def random_lemma3_instances(
    n: int, generations: list[int], seed: int, cfg: MeasureConfig
) -> list[tuple[IntervalD, IntervalD, ConstructionInterval]]:
    """J = l(I) 2^-m at either end of I, J* = C l(J) with C in {8.25, 8.5, 8.75, 9}."""
    rng = np.random.default_rng(seed)
    instances = []
    for _ in range(n):
        g = int(rng.choice(generations))
        node = sample_node(g, rng, cfg.phi)
        m = int(rng.integers(4, g + 3))
        length = node.length.shift(-m)
        star_length = length * DyadicRational(32 + int(rng.integers(1, 5)), -2)
        if rng.random() < 0.5:
            J = IntervalD(node.left, node.left + length)
            J_star = IntervalD(node.left, node.left + star_length)
        else:
            J = IntervalD(node.right - length, node.right)
            J_star = IntervalD(node.right - star_length, node.right)
        instances.append((J, J_star, node))
    return instances

"""
Finite-scale blow-ups nu_{x,r} = mu(B(x,r))^-1 T_{x,r#} mu.

nu(B(z, delta)) = mu(B(x + r z, delta r)) / mu(B(x, r)). Profiles are evaluated
on dyadic z grids so every ball has exact endpoints.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import partial

import numpy as np
from mpmath import mp

from phi_cascade.analysis import NonDoublingPoint
from phi_cascade.cascade import (
    ConstructionInterval,
    MassEnclosure,
    MeasureConfig,
    child_at,
    child_positions,
    cover_positions,
    enclose,
    generation_length,
    length_exponent,
    root,
)
from phi_cascade.numerics import (
    DomainError,
    DyadicRational,
    IntervalD,
    LogPositive,
    PreconditionError,
    Real,
)
from phi_cascade.utils import parallel_map

logger = logging.getLogger(__name__)

DEGENERATE_GAP = 1e-6

REASON_COVERS_ROOT = "ball covers I_0"
REASON_TOO_FINE = "r below resolvable depth"
REASON_FIVE_R = "5r exceeds I_K"


@dataclass(frozen=True)
class BlowupScale:
    x: DyadicRational
    r: DyadicRational
    K: int | None
    reason: str | None
    rho: Fraction | None
    N: int | None
    interval: ConstructionInterval | None

    @property
    def valid(self) -> bool:
        return self.K is not None


def blowup_scale(x: Real, r: Real, cfg: MeasureConfig) -> BlowupScale:
    """
    K is the generation with I_{K+1} inside the closed ball B(x, r) and I_K not,
    along the chain of x; the scale is valid when also B(x, 5r) lies in I_K.
    """
    x, r = DyadicRational.coerce(x), DyadicRational.coerce(r)
    if not IntervalD.unit().contains_point(x):
        raise DomainError(f"x={x} is outside [-1, 1)")
    if not 0 < r <= 1:
        raise ValueError(f"r must lie in (0, 1], got {r}")

    def absent(reason: str) -> BlowupScale:
        return BlowupScale(x, r, None, reason, None, None, None)

    lo, hi = x - r, x + r
    previous: ConstructionInterval | None = None
    node = root()
    while not (lo <= node.left and node.right <= hi):
        if node.generation >= cfg.max_gen:
            return absent(REASON_TOO_FINE)
        previous = node
        k = node.generation + 1
        node = child_at(node, (x - node.left).floor_scaled(length_exponent(k)), cfg.phi)
    if previous is None:
        return absent(REASON_COVERS_ROOT)

    I_K = previous
    if not (I_K.left <= x - r * 5 and x + r * 5 <= I_K.right):
        return absent(REASON_FIVE_R)
    return BlowupScale(
        x=x,
        r=r,
        K=I_K.generation,
        reason=None,
        rho=I_K.length.ratio(r),
        N=len(cover_positions(I_K, IntervalD.ball(x, r))),
        interval=I_K,
    )


@dataclass(frozen=True)
class EPointSet:
    scale: BlowupScale
    points: tuple[DyadicRational, ...]

    @property
    def normalized_exact(self) -> tuple[Fraction, ...]:
        x, r = self.scale.x, self.scale.r
        return tuple((e - x).ratio(r) for e in self.points)

    @property
    def normalized(self) -> tuple[float, ...]:
        return tuple(float(e) for e in self.normalized_exact)


def detect_E(scale: BlowupScale, refine: int = 0) -> EPointSet:
    """
    Endpoints of the generation-(K+1) intervals inside the closed ball.

    refine=n recomputes the endpoints from the generation-(K+1+n) intervals
    inside the ball; each refinement returns a superset.
    """
    if not scale.valid:
        raise PreconditionError(f"scale r={scale.r} at x={scale.x} has no K ({scale.reason})")
    if refine < 0:
        raise ValueError(f"refine must be >= 0, got {refine}")
    I_K = scale.interval
    assert I_K is not None
    ball = IntervalD.ball(scale.x, scale.r)
    cells = [(I_K.left, I_K.generation)]
    for _ in range(refine):
        cells = [
            (left + generation_length(g + 1) * p, g + 1)
            for left, g in cells
            for p in child_positions(left, g, ball, contained=False)
        ]
    endpoints = set()
    for left, g in cells:
        step = generation_length(g + 1)
        for p in child_positions(left, g, ball, contained=True):
            endpoints.update((left + step * p, left + step * (p + 1)))
    assert endpoints, "I_(K+1) must lie inside the ball"
    return EPointSet(scale, tuple(sorted(endpoints)))


@dataclass(frozen=True)
class ProfilePoint:
    z: DyadicRational
    ln_nu: LogPositive
    density: float
    near_E: bool
    enclosure_gap: float
    degenerate: bool


@dataclass(frozen=True)
class DensityProfile:
    scale: BlowupScale
    R: DyadicRational
    delta: DyadicRational
    points: tuple[ProfilePoint, ...]
    E_normalized: tuple[Fraction, ...]
    # mu(B(x, r)), the enclosure every nu value is divided by
    normalizer: MassEnclosure
    ln_nu_unit_ball: LogPositive

    @property
    def grid(self) -> np.ndarray:
        return np.array([float(p.z) for p in self.points])

    @property
    def densities(self) -> np.ndarray:
        return np.array([p.density for p in self.points])

    def trapezoid_integral(self) -> float:
        d, g = self.densities, self.grid
        return float(np.sum((d[1:] + d[:-1]) / 2 * np.diff(g)))


def window_ball(
    x: DyadicRational, r: DyadicRational, z: DyadicRational, radius: DyadicRational
) -> IntervalD:
    """Preimage of B(z, radius) under the window map y -> (y - x) / r."""
    return IntervalD.ball(x + r * z, r * radius)


def _grid_step(R: DyadicRational, m: int) -> DyadicRational:
    intervals = m - 1
    if m < 2 or intervals & (intervals - 1):
        raise ValueError(f"grid size m={m} must be 2^p + 1 so the z grid is dyadic")
    return R.shift(1 - (intervals.bit_length() - 1))


def density_profile(
    x: Real,
    r: Real,
    R: Real,
    m: int,
    delta: Real,
    cfg: MeasureConfig,
    threads: int = 1,
    progress: bool = False,
) -> DensityProfile:
    """
    z -> nu(B(z, delta)) / (2 delta) on m evenly spaced points of [-R, R].

    All balls share one enclosure per distinct interval, so mirrored balls
    reuse mirrored decompositions. nu(B(0, 1)) is the window image of the unit
    ball measured against a separate enclosure of B(x, r); it is exactly 1
    when the window map sends B(0, 1) back onto B(x, r).
    """
    x, r = DyadicRational.coerce(x), DyadicRational.coerce(r)
    R, delta = DyadicRational.coerce(R), DyadicRational.coerce(delta)
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    step = _grid_step(R, m)
    scale = blowup_scale(x, r, cfg)
    E = detect_E(scale).normalized_exact if scale.valid else ()

    zs = [step * j - R for j in range(m)]
    normalizer = enclose(IntervalD.ball(x, r), cfg)
    unit_ball = window_ball(x, r, DyadicRational(0), DyadicRational(1))
    balls = [window_ball(x, r, z, delta) for z in zs]
    distinct = list(dict.fromkeys([unit_ball] + balls))
    enclosures: dict[IntervalD, MassEnclosure] = dict(
        zip(
            distinct,
            parallel_map(
                partial(enclose, cfg=cfg),
                distinct,
                threads,
                "profile",
                progress,
                shared_cache=cfg.phi.cache,
            ),
        )
    )
    if normalizer.upper.is_zero:
        raise DomainError(f"B({x}, {r}) carries no mass")

    points = []
    delta_f = float(delta)
    for z, ball in zip(zs, balls):
        enc = enclosures[ball]
        ln_nu = enc.midpoint / normalizer.midpoint
        gap = max(enc.gap, normalizer.gap)
        unresolved = enc.lower.is_zero and not enc.upper.is_zero
        points.append(
            ProfilePoint(
                z=z,
                ln_nu=ln_nu,
                density=float(ln_nu) / (2 * delta_f),
                near_E=any(abs(z.to_fraction() - e) < delta.to_fraction() for e in E),
                enclosure_gap=gap,
                degenerate=unresolved or gap > DEGENERATE_GAP,
            )
        )
    return DensityProfile(
        scale=scale,
        R=R,
        delta=delta,
        points=tuple(points),
        E_normalized=tuple(E),
        normalizer=normalizer,
        ln_nu_unit_ball=enclosures[unit_ball].midpoint / normalizer.midpoint,
    )


def profile_flatness(profile: DensityProfile, exclusion_factor: float = 2.0) -> float:
    """
    max/min of the density over |z| <= 1 - delta, away from exclusion_factor *
    delta neighbourhoods of E. inf when a retained value is 0, nan when nothing
    is retained.
    """
    delta = profile.delta.to_fraction()
    radius = Fraction(exclusion_factor) * delta
    kept = [
        p.density
        for p in profile.points
        if abs(p.z.to_fraction()) <= 1 - delta
        and not p.degenerate
        and all(abs(p.z.to_fraction() - e) >= radius for e in profile.E_normalized)
    ]
    if not kept:
        return float("nan")
    if min(kept) == 0:
        return float("inf")
    return max(kept) / min(kept)


@dataclass(frozen=True)
class FlatnessTrend:
    radii: tuple[DyadicRational, ...]
    octaves: tuple[float, ...]
    flatness: tuple[float, ...]
    slope: float


def flatness_trend(
    x: Real,
    scales: list[Real],
    delta: Real,
    m: int,
    cfg: MeasureConfig,
    threads: int = 1,
) -> FlatnessTrend:
    """
    Flatness of the profiles on [-1, 1] at each scale with a valid K, and the
    least-squares slope of ln(flatness) against the octave log2(scales[0] / r).
    """
    radii = [DyadicRational.coerce(r) for r in scales]
    if not radii:
        raise ValueError("flatness_trend needs at least one scale")
    kept_radii, octaves, values = [], [], []
    for r in radii:
        if not blowup_scale(x, r, cfg).valid:
            logger.debug(f"Skipping r={r}: no valid blow-up scale")
            continue
        profile = density_profile(x, r, DyadicRational(1), m, delta, cfg, threads=threads)
        kept_radii.append(r)
        octaves.append(radii[0].log2() - r.log2())
        values.append(profile_flatness(profile))

    finite = [(j, v) for j, v in zip(octaves, values) if np.isfinite(v) and v > 0]
    slope = float("nan")
    if len(finite) >= 2:
        js, vs = zip(*finite)
        slope = float(np.polyfit(np.array(js), np.log(np.array(vs)), 1)[0])
    return FlatnessTrend(tuple(kept_radii), tuple(octaves), tuple(values), slope)


@dataclass(frozen=True)
class ConditionRow:
    r: DyadicRational
    delta: DyadicRational
    ln_ratio: object
    distance_to_E: float | None

    @property
    def ln_c_star(self):
        """ln max(ratio/delta, delta/ratio)."""
        return abs(self.ln_ratio - mp.log(self.delta.to_mpf()))

    @property
    def c_star(self) -> float:
        return float(mp.exp(self.ln_c_star))


@dataclass(frozen=True)
class ConditionSummary:
    z: DyadicRational
    q: float
    rows: tuple[ConditionRow, ...]
    # delta -> q-quantile over scales of ln c*
    ln_c_star_quantiles: dict

    @property
    def ln_c_z(self):
        return max(self.ln_c_star_quantiles.values())

    @property
    def c_z(self) -> float:
        return float(mp.exp(self.ln_c_z))


def check_condition_64(
    x: Real,
    r_sequence: list[Real],
    z: Real,
    delta_sequence: list[Real],
    cfg: MeasureConfig,
    q: float = 0.5,
) -> ConditionSummary:
    """
    (c, delta)-comparability of J_delta = B(x + r z, delta r) against J = B(x, r),
    per scale and delta. The summary keeps, per delta, the smallest c* met at a
    fraction >= q of the scales, and c_z is the largest of those.
    """
    x, z = DyadicRational.coerce(x), DyadicRational.coerce(z)
    if not -1 < z < 1:
        raise ValueError(f"z must lie in (-1, 1), got {z}")
    deltas = [DyadicRational.coerce(d) for d in delta_sequence]
    for d in deltas:
        if not 0 < d < 1 - abs(z):
            raise ValueError(f"delta={d} must lie in (0, 1 - |z|) for z={z}")
    if not 0 < q <= 1:
        raise ValueError(f"q must lie in (0, 1], got {q}")

    rows = []
    for r in (DyadicRational.coerce(r) for r in r_sequence):
        scale = blowup_scale(x, r, cfg)
        E = detect_E(scale).normalized_exact if scale.valid else ()
        distance = min((abs(z.to_fraction() - e) for e in E), default=None)
        whole = enclose(IntervalD.ball(x, r), cfg).midpoint
        for d in deltas:
            part = enclose(IntervalD.ball(x + r * z, d * r), cfg).midpoint
            ratio = part / whole
            rows.append(
                ConditionRow(
                    r=r,
                    delta=d,
                    ln_ratio=mp.ninf if ratio.is_zero else ratio.ln_value,
                    distance_to_E=None if distance is None else float(distance),
                )
            )

    quantiles = {}
    for d in deltas:
        values = np.array([float(row.ln_c_star) for row in rows if row.delta == d])
        quantiles[d] = float(np.quantile(values, q, method="inverted_cdf"))
    return ConditionSummary(z=z, q=q, rows=tuple(rows), ln_c_star_quantiles=quantiles)


@dataclass(frozen=True)
class PreissRow:
    r: DyadicRational
    R: DyadicRational
    ln_ratio: object

    @property
    def ratio(self) -> float:
        return float(mp.exp(self.ln_ratio))


def preiss_crosscheck(
    point: NonDoublingPoint | Real,
    R: Real,
    scales: list[Real] | None,
    cfg: MeasureConfig,
) -> list[PreissRow]:
    """nu_r(B(0, R)) / nu_r(B(0, 1)) = mu(B(x, R r)) / mu(B(x, r)) per scale."""
    R = DyadicRational.coerce(R)
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    if isinstance(point, NonDoublingPoint):
        x = point.x
        radii = point.radii if scales is None else scales
    else:
        x = DyadicRational.coerce(point)
        if scales is None:
            raise ValueError("scales are required for a plain point")
        radii = scales
    rows = []
    for r in (DyadicRational.coerce(r) for r in radii):
        inner = IntervalD.ball(x, r)
        outer = IntervalD.ball(x, r * R)
        inner_mass = enclose(inner, cfg).midpoint
        outer_mass = inner_mass if outer == inner else enclose(outer, cfg).midpoint
        rows.append(PreissRow(r=r, R=R, ln_ratio=(outer_mass / inner_mass).ln_value))
    return rows

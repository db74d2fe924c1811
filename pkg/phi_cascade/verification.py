"""
Property suites behind `phi-cascade verify {phi,mu,tangent}`.

Each check returns a CheckResult; a suite passes when every check does.
"""

import logging
from dataclasses import dataclass

import numpy as np
from mpmath import mp
from rich.console import Console
from rich.table import Table

from phi_cascade.analysis import (
    EXHIBIT_SCHEDULE,
    build_nondoubling_point,
    check_nondoubling_bound,
)
from phi_cascade.blowup import density_profile, preiss_crosscheck
from phi_cascade.cascade import (
    ROOT_GENERATION,
    MeasureConfig,
    block_pull_back,
    children,
    enclose,
    family_size,
    length_exponent,
    root,
    sample_node,
)
from phi_cascade.numerics import DyadicRational, IntervalD, log_sum
from phi_cascade.weight import PhiConfig, g_ratio, log_phi_integral, monotone_bracket

logger = logging.getLogger(__name__)

SUITES = ("phi", "mu", "tangent")

CONSERVATION_TOL = 1e-12
SYMMETRY_TOL = 1e-10
# float64 grid sums against 113-bit enclosures
ORACLE_TOL = 1e-10
ORACLE_GENERATION = 5


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def verify_phi(cfg: MeasureConfig) -> list[CheckResult]:
    phi = cfg.phi
    tol = 10 * phi.quad_rel_tol
    results = []

    half = mp.log(mp.mpf(1) / 2)
    left = log_phi_integral(IntervalD(DyadicRational(-1), DyadicRational(0)), phi)
    right = log_phi_integral(IntervalD(DyadicRational(0), DyadicRational(1)), phi)
    err = max(abs(float(left.ln_value - half)), abs(float(right.ln_value - half)))
    results.append(CheckResult("normalization", err <= tol, f"max ln error of a half = {err:.3g}"))

    rng = np.random.default_rng(0)
    worst_sym, sandwich_ok, additivity_err = 0.0, True, 0.0
    for _ in range(20):
        e = int(rng.integers(3, 12))
        a, b = sorted(int(v) for v in rng.choice(2**e, size=2, replace=False))
        interval = IntervalD(DyadicRational(a, -e), DyadicRational(b, -e))
        value = log_phi_integral(interval, phi)
        mirrored = log_phi_integral(interval.reflect(), phi)
        worst_sym = max(worst_sym, abs(float(value.ln_value - mirrored.ln_value)))
        lo, hi = monotone_bracket(interval, phi)
        sandwich_ok &= lo.scaled(1 - tol) <= value <= hi.scaled(1 + tol)
        if b - a >= 2:
            mid = DyadicRational(a + (b - a) // 2, -e)
            parts = log_phi_integral(IntervalD(interval.left, mid), phi) + log_phi_integral(
                IntervalD(mid, interval.right), phi
            )
            additivity_err = max(additivity_err, abs(float(parts.ln_value - value.ln_value)))
    results.append(CheckResult("reflection symmetry", worst_sym <= tol, f"max err {worst_sym:.3g}"))
    results.append(CheckResult("monotone sandwich", sandwich_ok, "20 intervals in [0, 1)"))
    results.append(
        CheckResult("additivity", additivity_err <= tol, f"max err {additivity_err:.3g}")
    )

    G1 = g_ratio(1, 0.1, phi).G
    G_tenth = g_ratio(2, 0.1, phi).G
    G_hundredth = g_ratio(2, 0.01, phi).G
    results.append(CheckResult("G_1 = 1", abs(G1 - 1) <= tol, f"G = {G1!r}"))
    results.append(
        CheckResult("G_{2,0.1} ~ 520.3", abs(G_tenth - 520.3) <= 5.2, f"G = {G_tenth:.6g}")
    )
    results.append(CheckResult("G_{2,0.01} > 1e15", G_hundredth > 1e15, f"G = {G_hundredth:.6g}"))

    ln_G = [g_ratio(2, DyadicRational.two_pow(-j), phi).ln_G for j in range(3, 41)]
    nonincreasing_in_eps = all(a <= b for a, b in zip(ln_G, ln_G[1:]))
    proof_ok = all(
        g_ratio(2, DyadicRational.two_pow(-j), phi).proof_bound_holds(1.5) for j in (3, 10, 20, 40)
    )
    results.append(
        CheckResult("G_{2,eps} nonincreasing in eps", nonincreasing_in_eps, "eps = 2^-3 .. 2^-40")
    )
    results.append(CheckResult("G proof bound (D = 3/2)", proof_ok, "eps = 2^-3, 2^-10, 2^-20, 2^-40"))
    return results


def chain_conservation_error(
    cfg: MeasureConfig, n_chains: int, depth: int, rng: np.random.Generator
) -> float:
    """
    Largest |ln sum(children) - ln parent| over every node of n_chains
    mu-sampled chains, from the root down to generation depth - 1.
    """
    worst = 0.0
    for _ in range(n_chains):
        node = root()
        for position in sample_node(depth - 1, rng, cfg.phi).index.positions():
            kids = children(node, cfg.phi)
            total = log_sum(child.ln_mass for child in kids)
            worst = max(worst, abs(float(total.ln_value - node.ln_mass.ln_value)))
            node = kids[position]
        total = log_sum(child.ln_mass for child in children(node, cfg.phi))
        worst = max(worst, abs(float(total.ln_value - node.ln_mass.ln_value)))
    return worst


def generation_grid_ln_masses(generation: int, cfg: PhiConfig) -> np.ndarray:
    """
    ln mu of every generation-g interval, left to right, by multiplying out the
    per-position shares of each family. Interval j is [-1 + j*l, -1 + (j+1)*l)
    with l the generation-g length.
    """
    ln_masses = np.zeros(1)
    for k in range(ROOT_GENERATION + 1, generation + 1):
        shares = np.array(
            [
                float(log_phi_integral(block_pull_back(k, p, p + 1), cfg).ln_value)
                for p in range(family_size(k))
            ]
        )
        ln_masses = (ln_masses[:, None] + shares[None, :]).ravel()
    return ln_masses


@dataclass(frozen=True)
class OracleComparison:
    n_intervals: int
    # worst distance (in ln) of the grid sum outside the enclosure, 0 when inside
    worst_excess: float
    worst_gap: float


def oracle_comparison(
    cfg: MeasureConfig,
    n_intervals: int,
    rng: np.random.Generator,
    generation: int = ORACLE_GENERATION,
) -> OracleComparison:
    """
    mass_of_interval against the summed generation grid on random intervals
    whose endpoints lie on that grid, so the grid sum is the exact mass.
    """
    masses = np.exp(generation_grid_ln_masses(generation, cfg.phi))
    cells = len(masses)
    exponent = length_exponent(generation)
    worst_excess, worst_gap = 0.0, 0.0
    for _ in range(n_intervals):
        a, b = sorted(int(v) for v in rng.choice(cells + 1, size=2, replace=False))
        J = IntervalD(
            DyadicRational(-1) + DyadicRational(a, exponent),
            DyadicRational(-1) + DyadicRational(b, exponent),
        )
        enclosure = enclose(J, cfg)
        ln_grid = float(np.log(np.sum(masses[a:b])))
        lower, upper = enclosure.lower.ln_float(), enclosure.upper.ln_float()
        worst_excess = max(worst_excess, lower - ln_grid, ln_grid - upper)
        worst_gap = max(worst_gap, enclosure.gap)
    return OracleComparison(n_intervals, worst_excess, worst_gap)


def verify_mu(
    cfg: MeasureConfig, seed: int = 0, n_chains: int = 100, n_intervals: int = 100
) -> list[CheckResult]:
    depth = min(cfg.max_gen, 8)
    rng = np.random.default_rng(seed)
    worst = chain_conservation_error(cfg, n_chains, depth, rng)
    results = [
        CheckResult(
            "mass conservation",
            worst <= CONSERVATION_TOL,
            f"every node of {n_chains} sampled chains to generation {depth}, max err {worst:.3g}",
        )
    ]

    worst_sym = 0.0
    for _ in range(10):
        a, b = sorted(int(v) for v in rng.choice(2**12, size=2, replace=False))
        J = IntervalD(DyadicRational(a - 2**11, -11), DyadicRational(b - 2**11, -11))
        mass, mirrored = enclose(J, cfg).midpoint, enclose(J.reflect(), cfg).midpoint
        if not (mass.is_zero or mirrored.is_zero):
            worst_sym = max(worst_sym, abs(float(mass.ln_value - mirrored.ln_value)))
    results.append(
        CheckResult("reflection symmetry", worst_sym <= cfg.rel_gap, f"max err {worst_sym:.3g}")
    )

    oracle = oracle_comparison(cfg, n_intervals, rng)
    results.append(
        CheckResult(
            "oracle equivalence",
            oracle.worst_excess <= ORACLE_TOL and oracle.worst_gap <= cfg.rel_gap,
            f"{n_intervals} intervals on the generation-{ORACLE_GENERATION} grid, "
            f"ln excess {oracle.worst_excess:.3g}, gap {oracle.worst_gap:.3g}",
        )
    )
    return results


def verify_tangent(cfg: MeasureConfig) -> list[CheckResult]:
    profile = density_profile(0, DyadicRational.two_pow(-8), 1, 65, DyadicRational.two_pow(-4), cfg)
    results = [
        CheckResult(
            "nu(B(0, 1)) = 1",
            profile.ln_nu_unit_ball.ln_value == 0 and not profile.ln_nu_unit_ball.is_zero,
            "window image of B(0, 1) against mu(B(x, r))",
        )
    ]
    d = profile.densities
    asym = float(np.max(np.abs(d - d[::-1]) / np.maximum(np.abs(d), 1e-300)))
    results.append(CheckResult("profile symmetry at x = 0", asym <= SYMMETRY_TOL, f"max rel err {asym:.3g}"))

    schedule = [entry for entry in EXHIBIT_SCHEDULE if entry[1] < cfg.max_gen]
    point = build_nondoubling_point(schedule, cfg)
    rows = check_nondoubling_bound(point, cfg)
    bands = all(w.in_band for w in point.witnesses)
    results.append(CheckResult("band membership", bands, f"schedule {schedule}"))
    applicable = [row for row in rows if row.applicable]
    results.append(
        CheckResult(
            "ratio17 >= G bound",
            all(row.holds for row in applicable),
            f"{len(applicable)} applicable rows",
        )
    )
    preiss = [float(row.ln_ratio) for row in preiss_crosscheck(point, 9, None, cfg)]
    results.append(
        CheckResult(
            "Preiss ratio grows along schedule",
            all(a < b for a, b in zip(preiss, preiss[1:])),
            "ln ratios " + ", ".join(f"{v:.4g}" for v in preiss),
        )
    )
    return results


def run_suite(suite: str, cfg: MeasureConfig, seed: int = 0) -> list[CheckResult]:
    if suite == "phi":
        return verify_phi(cfg)
    if suite == "mu":
        return verify_mu(cfg, seed=seed)
    if suite == "tangent":
        return verify_tangent(cfg)
    raise ValueError(f"Unknown suite {suite!r}; expected one of {SUITES}")


def print_report(suite: str, results: list[CheckResult], console: Console | None = None) -> None:
    table = Table(title=f"verify {suite}")
    table.add_column("check")
    table.add_column("result")
    table.add_column("detail")
    for result in results:
        status = "[green]pass[/green]" if result.passed else "[red]FAIL[/red]"
        table.add_row(result.name, status, result.detail)
    (console or Console()).print(table)

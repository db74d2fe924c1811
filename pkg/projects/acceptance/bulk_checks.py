# %%
import logging
import os
from functools import partial

import numpy as np
from rich.logging import RichHandler

from phi_cascade.analysis import (
    EXHIBIT_SCHEDULE,
    build_nondoubling_point,
    check_mu_lemma_1,
    check_mu_lemma_2,
    check_mu_lemma_3,
    check_nondoubling_bound,
    porosity_scan,
    random_lemma1_instances,
    random_lemma2_instances,
    random_lemma3_instances,
    verify_porosity,
)
from phi_cascade.blowup import REASON_TOO_FINE, blowup_scale, flatness_trend, preiss_crosscheck
from phi_cascade.cascade import MeasureConfig, MuSampler, sample_mu
from phi_cascade.numerics import DyadicRational
from phi_cascade.outputs import format_ln, write_table
from phi_cascade.utils import Timer, parallel_map
from phi_cascade.verification import verify_mu
from phi_cascade.weight import make_phi_config, phi_cache_fingerprint, save_phi_cache
from shared_configs.run_configs import RunConfig, acceptance_run_config

"""
Full-size versions of the long-running checks. Each check writes one table to
results/acceptance and logs PASS/FAIL.

$(pdm venv activate) && python projects/acceptance/bulk_checks.py
"""

logger = logging.getLogger(__name__)


def measure_config(run: RunConfig) -> MeasureConfig:
    return MeasureConfig(
        phi=make_phi_config(run.quad_rel_tol, run.cache_path),
        rel_gap=run.rel_gap,
        max_gen=run.max_gen,
    )


def valid_radii(x, cfg: MeasureConfig, count: int, first_exponent: int = 3) -> list[DyadicRational]:
    """The first `count` radii 2^-j, j >= first_exponent, with a valid blow-up scale at x."""
    radii = []
    for j in range(first_exponent, 120):
        r = DyadicRational.two_pow(-j)
        scale = blowup_scale(x, r, cfg)
        if scale.valid:
            radii.append(r)
        if len(radii) == count or scale.reason == REASON_TOO_FINE:
            break
    return radii


def nondoubling_exhibit(cfg: MeasureConfig) -> tuple[bool, list[dict]]:
    point = build_nondoubling_point(list(EXHIBIT_SCHEDULE), cfg)
    bounds = check_nondoubling_bound(point, cfg)
    rows = [
        {
            "i": row.i,
            "k": row.k,
            "r": row.r,
            "in_band": w.in_band,
            "lambda": row.lam,
            "ratio17_lower": format_ln(row.ln_ratio17_lower),
            "G_bound": None if row.ln_bound is None else format_ln(row.ln_bound),
            "holds": row.holds,
        }
        for row, w in zip(bounds, point.witnesses)
    ]
    passed = (
        all(w.in_band for w in point.witnesses)
        and all(row.holds for row in bounds if row.applicable)
        and float(bounds[-1].ln_ratio17_lower) > np.log(1e3)
    )
    return passed, rows


def lemma_row(part: int, J, node, constant, holds: bool) -> dict:
    return {"part": part, "J": J, "generation": node.generation, "constant": constant, "holds": holds}


def lemma_instances(cfg: MeasureConfig, n: int, seed: int) -> tuple[bool, list[dict]]:
    rows = []
    for J, node in random_lemma1_instances(n, list(range(6, 11)), 0.25, seed, cfg):
        report = check_mu_lemma_1(J, node, 0.25, cfg)
        rows.append(lemma_row(1, J, node, report.empirical_constant, report.verdict))
    for J, node in random_lemma2_instances(n, [4, 5], seed + 1, cfg):
        report = check_mu_lemma_2(J, node, cfg)
        rows.append(lemma_row(2, J, node, format_ln(report.ln_D_star), report.holds))
    for J, J_star, node in random_lemma3_instances(n, [2, 3, 4], seed + 2, cfg):
        report = check_mu_lemma_3(J, J_star, node, cfg)
        rows.append(lemma_row(3, J, node, format_ln(report.ln_slack), report.holds))
    return all(row["holds"] for row in rows), rows


def porosity_at_point(x, cfg: MeasureConfig, epsilon: float, grid_gen: int) -> dict:
    radii = [DyadicRational.two_pow(-j) for j in range(1, 9)]
    scan = porosity_scan(x, radii, epsilon, grid_gen, cfg)
    certified = [res for res in scan.results if verify_porosity(res, cfg) and float(res.delta) >= 0.1]
    return {"x": x, "max_delta": scan.max_delta, "certified_scales": len(certified)}


def flatness_at_point(x, cfg: MeasureConfig, delta, grid: int) -> dict:
    radii = valid_radii(x, cfg, count=5)
    trend = flatness_trend(x, radii, delta, grid, cfg)
    finite = [f for f in trend.flatness if np.isfinite(f)]
    return {
        "x": x,
        "scales": len(trend.radii),
        "max_flatness": max(finite) if finite else float("nan"),
        "slope": trend.slope,
    }


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(message)s", handlers=[RichHandler()])

    # BULK CHECK SETTINGS
    run = acceptance_run_config
    n_lemma_instances = 200
    n_porosity_points = 100
    porosity_depth = 10
    porosity_epsilon = 1e-3
    porosity_grid_gen = 6
    n_flatness_points = 10
    flatness_delta = DyadicRational.two_pow(-6)
    flatness_grid = 257
    max_flatness = 100
    slope_noise = 0.2

    cfg = measure_config(run)
    header = {"run_config": run.to_json(), "run_hash": run.hash(), "phi_cache": phi_cache_fingerprint(cfg.phi)}
    out_dir = os.path.join(run.out, run.hash())
    verdicts = {}
    timer = Timer(num_tasks=6)

    def record(name: str, passed: bool, rows: list[dict]):
        verdicts[name] = passed
        write_table(rows, os.path.join(out_dir, f"{name}.{run.format}"), header, run.format)
        logger.info(f"{name}: {'PASS' if passed else 'FAIL'}")
        timer.increment(name)

    # %%
    checks = verify_mu(cfg, seed=run.seed)
    record("measure", all(c.passed for c in checks), [c.to_json() for c in checks])

    # %%
    record("nondoubling_exhibit", *nondoubling_exhibit(cfg))

    # %%
    record("lemma_instances", *lemma_instances(cfg, n_lemma_instances, run.seed))

    # %%
    points = [x for x, _ in sample_mu(MuSampler(run.seed, porosity_depth), n_porosity_points, cfg.phi, progress=True)]
    rows = parallel_map(
        partial(porosity_at_point, cfg=cfg, epsilon=porosity_epsilon, grid_gen=porosity_grid_gen),
        points,
        run.threads,
        desc="porosity",
        progress=True,
        shared_cache=cfg.phi.cache,
    )
    record("porosity", sum(row["certified_scales"] > 0 for row in rows) >= 0.9 * n_porosity_points, rows)

    # %%
    points = [x for x, _ in sample_mu(MuSampler(run.seed + 1, porosity_depth), n_flatness_points, cfg.phi)]
    rows = parallel_map(
        partial(flatness_at_point, cfg=cfg, delta=flatness_delta, grid=flatness_grid),
        points,
        run.threads,
        desc="flatness",
        progress=True,
        shared_cache=cfg.phi.cache,
    )
    record(
        "tangent_flatness",
        all(row["max_flatness"] <= max_flatness for row in rows)
        and all(not row["slope"] > slope_noise for row in rows),
        rows,
    )

    # %%
    exhibit = build_nondoubling_point(list(EXHIBIT_SCHEDULE), cfg)
    exhibit_rows = preiss_crosscheck(exhibit, 9, None, cfg)
    growing = all(a.ln_ratio < b.ln_ratio for a, b in zip(exhibit_rows, exhibit_rows[1:]))
    generic_x = points[0]
    generic_rows = preiss_crosscheck(generic_x, 9, valid_radii(generic_x, cfg, count=5), cfg)
    rows = [{"point": "exhibit", "r": row.r, "ratio": format_ln(row.ln_ratio)} for row in exhibit_rows]
    rows += [{"point": str(generic_x), "r": row.r, "ratio": format_ln(row.ln_ratio)} for row in generic_rows]
    record(
        "preiss",
        growing
        and float(exhibit_rows[-1].ln_ratio) > np.log(1e3)
        and all(1 <= row.ratio <= 100 for row in generic_rows),
        rows,
    )

    if run.cache_path is not None:
        save_phi_cache(run.cache_path, cfg.phi)
    logger.info(f"Verdicts: {verdicts}")

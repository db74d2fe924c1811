import math
from fractions import Fraction

import pytest
from phi_cascade.analysis import (
    EXHIBIT_SCHEDULE,
    band_mass,
    build_nondoubling_point,
    check_mu_lemma_1,
    check_mu_lemma_2,
    check_mu_lemma_3,
    check_nondoubling_bound,
    doubling_fraction,
    doubling_scan,
    porosity_scan,
    porosity_search,
    random_lemma1_instances,
    random_lemma2_instances,
    random_lemma3_instances,
    verify_porosity,
)
from phi_cascade.cascade import NodeIndex, node_from_index
from phi_cascade.numerics import (
    DomainError,
    DyadicRational,
    InfeasibleScheduleError,
    IntervalD,
    PreconditionError,
)


def dy(m, e=0) -> DyadicRational:
    return DyadicRational(m, e)


# %%


def test_doubling_scan_is_monotone_in_radius(measure_cfg):
    rows = doubling_scan(dy(3, -4), [dy(1, -3), dy(1, -6), dy(1, -9)], measure_cfg)
    assert [row.r for row in rows] == [dy(1, -3), dy(1, -6), dy(1, -9)]
    for row in rows:
        assert 0 <= row.ln_ratio2 <= row.ln_ratio17
        assert row.ratio17 >= row.ratio2 >= 1
        assert row.enclosure_gap <= 1e-8
        assert row.ln2_r == pytest.approx(float(row.r.log2()))
    with pytest.raises(DomainError):
        doubling_scan(dy(1), [dy(1, -3)], measure_cfg)
    with pytest.raises(ValueError):
        doubling_scan(dy(0), [dy(0)], measure_cfg)


def test_doubling_scan_does_not_depend_on_worker_count(measure_cfg):
    scales = [dy(1, -4), dy(1, -7)]
    serial = doubling_scan(dy(-5, -5), scales, measure_cfg, threads=1)
    parallel = doubling_scan(dy(-5, -5), scales, measure_cfg, threads=2)
    assert serial == parallel


def test_build_nondoubling_point(measure_cfg):
    schedule = [(2, 3), (3, 6), (4, 9)]
    point = build_nondoubling_point(schedule, measure_cfg)
    assert point.schedule == tuple(schedule)
    assert IntervalD.unit().contains_point(point.x)
    for witness, (i, k) in zip(point.witnesses, schedule):
        assert (witness.i, witness.k) == (i, k)
        assert witness.interval.generation == k
        assert witness.interval.extent.contains_point(point.x)
        assert witness.in_band
        low = witness.length.shift(-i)
        assert low <= witness.distance <= low.shift(1)
    assert point.radii == [w.distance for w in point.witnesses]


def test_nondoubling_bound_rows(measure_cfg):
    point = build_nondoubling_point([(2, 3), (3, 6), (4, 9)], measure_cfg)
    rows = check_nondoubling_bound(point, measure_cfg)
    assert len(rows) == 3
    for row in rows:
        assert 0 < row.lam <= 1
        assert row.C == row.J_star.length.ratio(row.J.length)
        assert row.holds in (None, True)
        assert row.ln_ratio17_lower > 0


@pytest.mark.parametrize(
    "schedule",
    [
        [(1, 3)],
        [(2, -1)],
        [(2, 5), (3, 5)],
        [(6, 3)],
        [(2, 12)],
    ],
)
def test_infeasible_schedules(measure_cfg, schedule):
    with pytest.raises(InfeasibleScheduleError):
        build_nondoubling_point(schedule, measure_cfg)


def test_exhibit_schedule_is_feasible_at_default_depth():
    assert all(k + 1 <= 18 for _, k in EXHIBIT_SCHEDULE)
    assert all(a[1] < b[1] for a, b in zip(EXHIBIT_SCHEDULE, EXHIBIT_SCHEDULE[1:]))


def test_band_mass(phi_cfg):
    # i = 2: 2 phi([-1/2, 0)) = 2 (1/2 - phi([-1, -1/2)))
    assert float(band_mass(2, phi_cfg)) == pytest.approx(2 * (0.5 - 0.0631910), abs=1e-6)
    masses = [band_mass(i, phi_cfg) for i in range(2, 8)]
    assert all(b < a for a, b in zip(masses, masses[1:]))
    with pytest.raises(ValueError):
        band_mass(1, phi_cfg)


def test_doubling_fraction(measure_cfg):
    report = doubling_fraction([dy(0), dy(1, -1)], [dy(1, -4)], 1.0, measure_cfg)
    assert report.n_points == 2
    assert report.n_exceeding == 2
    assert report.fraction == 1.0
    strict = doubling_fraction([dy(0), dy(1, -1)], [dy(1, -4)], 1e300, measure_cfg)
    assert strict.n_exceeding == 0


# %%


def test_porosity_search_finds_hole_at_origin(measure_cfg):
    result = porosity_search(dy(0), dy(1, -1), 0.01, 4, measure_cfg)
    assert result.delta >= dy(1, -4)
    hole = result.hole
    assert hole is not None
    assert IntervalD.ball(dy(0), dy(1, -1)).contains_interval(hole)
    assert result.hole_upper <= result.ball_lower.scaled(0.01)
    assert verify_porosity(result, measure_cfg)


def test_porosity_search_trivial_epsilon(measure_cfg):
    result = porosity_search(dy(3, -3), dy(1, -5), 1.0, 3, measure_cfg)
    assert result.delta == 1
    assert result.y == result.x
    assert verify_porosity(result, measure_cfg)
    with pytest.raises(DomainError):
        porosity_search(dy(3), dy(1), 0.1, 3, measure_cfg)


def test_porosity_scan(measure_cfg):
    scan = porosity_scan(dy(0), [dy(1, -1), dy(1, -3)], 0.01, 3, measure_cfg)
    assert len(scan.results) == 2
    assert scan.max_delta == max(r.delta for r in scan.results)
    assert all(verify_porosity(r, measure_cfg) for r in scan.results)


# %%


def test_lemma_1_reference_instance(measure_cfg):
    node = node_from_index(NodeIndex((1,)), measure_cfg.phi)  # [0, 1)
    report = check_mu_lemma_1(IntervalD(dy(1, -2), dy(3, -2)), node, 0.25, measure_cfg)
    assert report.lam == Fraction(1, 2)
    # mu(J)/mu(I) = phi([-1/2, 1/2)) = 1 - 2 phi([-1, -1/2))
    assert report.ratio == pytest.approx(1 - 2 * 0.0631910, abs=1e-6)
    assert report.empirical_constant == pytest.approx(1.7472, abs=1e-3)
    assert report.verdict


def test_lemma_1_whole_interval_is_exact(measure_cfg):
    node = node_from_index(NodeIndex((-1, 2)), measure_cfg.phi)
    report = check_mu_lemma_1(node.extent, node, 0, measure_cfg)
    assert report.empirical_constant == 1.0


def test_lemma_1_preconditions(measure_cfg):
    node = node_from_index(NodeIndex((1,)), measure_cfg.phi)
    with pytest.raises(PreconditionError, match="packing"):
        check_mu_lemma_1(IntervalD(dy(3, -3), dy(5, -3)), node, 0.25, measure_cfg)
    with pytest.raises(PreconditionError, match="tau"):
        check_mu_lemma_1(IntervalD(dy(0), dy(1, -1)), node, 0.25, measure_cfg)
    with pytest.raises(PreconditionError, match="not contained"):
        check_mu_lemma_1(IntervalD(dy(-1, -1), dy(1, -1)), node, 0.25, measure_cfg)


def test_lemma_1_random_instances(measure_cfg):
    instances = random_lemma1_instances(12, [0, 1, 2], 0.25, 3, measure_cfg)
    for J, node in instances:
        report = check_mu_lemma_1(J, node, 0.25, measure_cfg)
        assert report.empirical_constant <= 4


def test_lemma_2_random_instances(measure_cfg):
    instances = random_lemma2_instances(4, [4], 5, measure_cfg)
    for J, node in instances:
        report = check_mu_lemma_2(J, node, measure_cfg)
        assert report.length_ratio < Fraction(1, 20)
        assert report.cover_size >= 2
        assert report.holds


def test_lemma_2_preconditions(measure_cfg):
    node = node_from_index(NodeIndex((1,)), measure_cfg.phi)
    with pytest.raises(PreconditionError, match="5J"):
        check_mu_lemma_2(IntervalD(dy(0), dy(1, -2)), node, measure_cfg)


def test_lemma_3_random_instances(measure_cfg):
    instances = random_lemma3_instances(6, [2, 3], 9, measure_cfg)
    for J, J_star, node in instances:
        report = check_mu_lemma_3(J, J_star, node, measure_cfg)
        assert report.C > 8
        assert report.holds
        assert report.ln_slack >= 0


def test_lemma_3_preconditions(measure_cfg):
    # generation-2 node: sixteen children of length l(I)/16
    node = node_from_index(NodeIndex((1, 1, 1)), measure_cfg.phi)
    u = node.length.shift(-4)
    J = IntervalD(node.left, node.left + u)
    with pytest.raises(PreconditionError, match="above 8"):
        check_mu_lemma_3(J, IntervalD(node.left, node.left + u * 8), node, measure_cfg)
    inner = IntervalD(node.left + u, node.left + u * 2)
    with pytest.raises(PreconditionError, match="boundary"):
        check_mu_lemma_3(inner, IntervalD(node.left, node.left + u * 12), node, measure_cfg)
    report = check_mu_lemma_3(J, IntervalD(node.left, node.left + u * 9), node, measure_cfg)
    assert report.C == 9 and report.lam == Fraction(1, 16)
    assert report.holds


def test_lemma_3_is_mirror_symmetric(measure_cfg):
    node = node_from_index(NodeIndex((1, 1, 1)), measure_cfg.phi)
    mirror = node_from_index(NodeIndex((-1, -1, -1)), measure_cfg.phi)
    assert mirror.extent == node.extent.reflect()
    u = node.length.shift(-4)
    J = IntervalD(node.left, node.left + u)
    J_star = IntervalD(node.left, node.left + u * 9)
    report = check_mu_lemma_3(J, J_star, node, measure_cfg)
    mirrored = check_mu_lemma_3(J.reflect(), J_star.reflect(), mirror, measure_cfg)
    assert (mirrored.C, mirrored.lam) == (report.C, report.lam)
    assert mirrored.ln_G == report.ln_G
    assert abs(mirrored.ln_ratio_lower - report.ln_ratio_lower) < 1e-12


def test_lemma_3_bound_grows_as_lambda_halves(measure_cfg):
    # generation-3 node: thirty-two children of length l(I)/32
    node = node_from_index(NodeIndex((1, 1, 1, 1)), measure_cfg.phi)
    u = node.length.shift(-5)
    narrow = check_mu_lemma_3(
        IntervalD(node.left, node.left + u), IntervalD(node.left, node.left + u * 9), node, measure_cfg
    )
    wide = check_mu_lemma_3(
        IntervalD(node.left, node.left + u * 2),
        IntervalD(node.left, node.left + u * 18),
        node,
        measure_cfg,
    )
    assert narrow.lam == wide.lam / 2
    assert narrow.C == wide.C == 9
    assert narrow.ln_G > wide.ln_G
    assert narrow.holds and wide.holds


def test_lemma_1_random_instances_deep(deep_measure_cfg):
    instances = random_lemma1_instances(20, [6, 7, 8, 9, 10], 0.25, 11, deep_measure_cfg)
    assert {node.generation for _, node in instances} <= {6, 7, 8, 9, 10}
    for J, node in instances:
        report = check_mu_lemma_1(J, node, 0.25, deep_measure_cfg)
        assert report.verdict
        assert report.empirical_constant <= 4


def test_exhibit_schedule_bounds(deep_measure_cfg):
    point = build_nondoubling_point(EXHIBIT_SCHEDULE, deep_measure_cfg)
    assert all(w.in_band for w in point.witnesses)
    rows = check_nondoubling_bound(point, deep_measure_cfg)
    assert [row.i for row in rows] == [2, 3, 4, 5, 6]
    # J* = B(x, 17r) is clipped to I at the first three rows, leaving C <= 8
    assert [row.applicable for row in rows] == [False, False, False, True, True]
    for row in rows[3:]:
        assert row.C > 8
        assert row.holds is True
    assert float(rows[3].ln_bound) == pytest.approx(0.646, abs=0.01)
    assert float(rows[4].ln_bound) == pytest.approx(1.103, abs=0.01)
    assert float(rows[3].ln_ratio17_lower) == pytest.approx(11.28, abs=0.01)
    assert float(rows[4].ln_ratio17_lower) == pytest.approx(18.60, abs=0.01)
    assert rows[-1].ln_ratio17_lower > math.log(1e3)

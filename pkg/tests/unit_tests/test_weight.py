import json
import logging

import numpy as np
import pytest
from mpmath import mp

from phi_cascade.numerics import DomainError, DyadicRational, IntervalD
from phi_cascade.weight import (
    empirical_shift_threshold,
    g_ratio,
    g_ratio_proof_bound,
    load_phi_cache,
    log_phi_edge,
    log_phi_integral,
    make_phi_config,
    monotone_bracket,
    normalization_constant,
    phi_cache_fingerprint,
    phi_eval,
    save_phi_cache,
    check_shift_ratio,
)
from tests.conftest import edge_mass_oracle, normalization_oracle


def dy(m, e=0) -> DyadicRational:
    return DyadicRational(m, e)


def test_normalization_constant_matches_oracle(phi_cfg):
    oracle = normalization_oracle()
    assert abs(phi_cfg.ln_c.to_mpf() / oracle - 1) < 1e-10
    assert phi_cfg.c == pytest.approx(3.3671052, abs=1e-6)


def test_normalization_constant_is_stable_in_tolerance():
    coarse = normalization_constant(1e-10).to_mpf()
    fine = normalization_constant(1e-14).to_mpf()
    assert abs(coarse / fine - 1) < 1e-10


@pytest.mark.parametrize("tol", [0, -1e-12, 1e-5])
def test_normalization_constant_rejects_tolerance(tol):
    with pytest.raises(ValueError):
        normalization_constant(tol)


def test_halves_carry_half_the_mass(phi_cfg):
    half = mp.mpf(1) / 2
    for interval in [IntervalD(dy(-1), dy(0)), IntervalD(dy(0), dy(1))]:
        assert abs(log_phi_integral(interval, phi_cfg).to_mpf() / half - 1) < 1e-11
    whole = log_phi_integral(IntervalD.unit(), phi_cfg).to_mpf()
    assert abs(whole - 1) < 1e-11


def test_phi_eval(phi_cfg):
    assert phi_eval(1, phi_cfg).is_zero
    assert phi_eval(-1, phi_cfg).is_zero
    assert float(phi_eval(0, phi_cfg)) == pytest.approx(1.2386888, abs=1e-6)
    assert float(phi_eval(dy(1, -1), phi_cfg)) == pytest.approx(0.4556882, abs=1e-6)
    assert phi_eval(dy(-1, -1), phi_cfg) == phi_eval(dy(1, -1), phi_cfg)
    with pytest.raises(DomainError):
        phi_eval(dy(3, -1), phi_cfg)


def test_phi_is_monotone_on_each_half(phi_cfg):
    ts = [dy(j, -6) for j in range(0, 64)]
    values = [phi_eval(t, phi_cfg) for t in ts]
    assert all(b < a for a, b in zip(values, values[1:]))
    left_values = [phi_eval(-t, phi_cfg) for t in reversed(ts)]
    assert all(a < b for a, b in zip(left_values, left_values[1:]))


def test_log_phi_integral_matches_oracle(phi_cfg):
    # int_0^(1/2) = 1/2 - phi([-1, -1/2])
    value = log_phi_integral(IntervalD(dy(0), dy(1, -1)), phi_cfg).to_mpf()
    assert float(value) == pytest.approx(0.436809, abs=1e-6)
    assert abs(value / (mp.mpf(1) / 2 - edge_mass_oracle(mp.mpf(1) / 2)) - 1) < 1e-11

    for j in [3, 10, 30, 60]:
        h = mp.mpf(2) ** -j
        interval = IntervalD(1 - dy(1, -j), dy(1))
        ln_value = log_phi_integral(interval, phi_cfg).ln_value
        assert abs(ln_value - mp.log(edge_mass_oracle(h))) < 1e-11
        mirrored = log_phi_integral(interval.reflect(), phi_cfg).ln_value
        assert mirrored == ln_value


def test_log_phi_integral_near_boundary(phi_cfg):
    # [1 - 2^-10, 1): ln c + 2 ln h - 1/h to leading order
    ln_value = log_phi_integral(IntervalD(1 - dy(1, -10), dy(1)), phi_cfg).ln_value
    assert float(ln_value) == pytest.approx(-1036.6, abs=0.1)
    assert float(log_phi_edge(1e-3, phi_cfg).ln_value) == pytest.approx(-1012.6, abs=0.1)


def test_log_phi_integral_rejects_intervals_outside_support(phi_cfg):
    with pytest.raises(DomainError):
        log_phi_integral(IntervalD(dy(0), dy(2)), phi_cfg)
    with pytest.raises(DomainError):
        log_phi_edge(0, phi_cfg)


def test_monotone_sandwich(phi_cfg):
    rng = np.random.default_rng(3)
    for _ in range(25):
        a, b = sorted(int(v) for v in rng.choice(256, size=2, replace=False))
        sign = 1 if rng.random() < 0.5 else -1
        interval = IntervalD(dy(a, -8), dy(b, -8))
        if sign < 0:
            interval = interval.reflect()
        lo, hi = monotone_bracket(interval, phi_cfg)
        value = log_phi_integral(interval, phi_cfg)
        assert lo <= value <= hi
    with pytest.raises(DomainError):
        monotone_bracket(IntervalD(dy(-1, -2), dy(1, -2)), phi_cfg)


@pytest.mark.parametrize("tau", [dy(1, -2), dy(1, -1), dy(3, -2)])
def test_interior_comparability(phi_cfg, tau):
    # phi(tau) l(I) <= phi(I) <= phi(0) l(I) for I inside [-tau, tau]
    rng = np.random.default_rng(11)
    lower_density, upper_density = phi_eval(tau, phi_cfg), phi_eval(0, phi_cfg)
    span = tau.floor_scaled(-10)
    for _ in range(20):
        a, b = sorted(int(v) for v in rng.choice(2 * span, size=2, replace=False))
        interval = IntervalD(dy(a - span, -10), dy(b - span, -10))
        value = log_phi_integral(interval, phi_cfg).to_mpf()
        length = interval.length.to_mpf()
        assert lower_density.to_mpf() * length <= value * (1 + 1e-11)
        assert value <= upper_density.to_mpf() * length * (1 + 1e-11)


def test_additivity(phi_cfg):
    whole = IntervalD(dy(-3, -3), dy(5, -4))
    pieces = [
        IntervalD(dy(-3, -3), dy(-1, -5)),
        IntervalD(dy(-1, -5), dy(1, -2)),
        IntervalD(dy(1, -2), dy(5, -4)),
    ]
    masses = [log_phi_integral(p, phi_cfg) for p in pieces]
    total = masses[0] + masses[1] + masses[2]
    assert abs(total.ln_value - log_phi_integral(whole, phi_cfg).ln_value) < 1e-11


def test_g_ratio_spot_values(phi_cfg):
    assert g_ratio(1, 0.1, phi_cfg).ln_G == 0
    assert g_ratio(2, 0.1, phi_cfg).G == pytest.approx(520.3, rel=0.01)
    assert g_ratio(2, 0.01, phi_cfg).G > 1e15

    oracle = edge_mass_oracle(mp.mpf("0.2")) / edge_mass_oracle(mp.mpf("0.1"))
    assert abs(g_ratio(2, 0.1, phi_cfg).ln_G - mp.log(oracle)) < 1e-10


def test_g_ratio_domain(phi_cfg):
    with pytest.raises(DomainError):
        g_ratio(2, 0.6, phi_cfg)
    with pytest.raises(DomainError):
        g_ratio(0.5, 0.1, phi_cfg)
    with pytest.raises(DomainError):
        g_ratio_proof_bound(2, 0.1, 2)


def test_g_ratio_grows_as_epsilon_shrinks(phi_cfg):
    ratios = [g_ratio(2, dy(1, -j), phi_cfg) for j in range(3, 41)]
    ln_G = [r.ln_G for r in ratios]
    assert all(a < b for a, b in zip(ln_G, ln_G[1:]))
    for r in ratios:
        for D in (1.1, 1.5, 1.9):
            assert r.proof_bound_holds(D)
    assert ratios[-1].ln_G > 1e11


def test_check_shift_ratio(phi_cfg):
    vacuous = check_shift_ratio(IntervalD(dy(-3, -5), dy(-1, -4)), 10, 3, phi_cfg)
    assert not vacuous.hypothesis_holds
    assert vacuous.implication_holds

    edge = IntervalD(dy(-1) + dy(1, -12), dy(-1) + dy(1, -11))
    report = check_shift_ratio(edge, 2, 3, phi_cfg)
    assert report.hypothesis_holds
    assert len(report.ln_conclusion_ratios) == 3
    assert report.conclusions_hold
    assert report.implication_holds

    mirrored = check_shift_ratio(edge.reflect(), 2, 3, phi_cfg, direction=-1)
    assert mirrored.ln_hypothesis_ratio == report.ln_hypothesis_ratio
    assert mirrored.ln_conclusion_ratios == report.ln_conclusion_ratios


def test_check_shift_ratio_rejects_escaping_shifts(phi_cfg):
    with pytest.raises(DomainError):
        check_shift_ratio(IntervalD(1 - dy(1, -4), 1 - dy(1, -5)), 2, 3, phi_cfg)
    with pytest.raises(ValueError):
        check_shift_ratio(IntervalD(dy(0), dy(1, -4)), 1, 3, phi_cfg)


def test_empirical_shift_threshold(phi_cfg):
    report = empirical_shift_threshold(2, 2, [3, 5, 7], phi_cfg, max_positions=6)
    assert [row[0] for row in report.rows] == [3, 5, 7]
    assert all(0 < tested <= 6 for _, tested, _ in report.rows)
    if report.threshold_exponent is not None:
        assert all(held for j, _, held in report.rows if j >= report.threshold_exponent)
        assert report.threshold_length == 2.0**-report.threshold_exponent


def test_phi_cache_round_trip(phi_cfg, tmp_path):
    path = tmp_path / "phi_cache.jsonl"
    source = make_phi_config(1e-12)
    intervals = [IntervalD(dy(j, -4), dy(j + 1, -4)) for j in range(-16, 16)]
    values = [log_phi_integral(i, source) for i in intervals]
    save_phi_cache(path, source)

    loaded = make_phi_config(1e-12, cache_path=path)
    assert len(loaded.cache) == len(intervals)
    assert [loaded.cache[i] for i in intervals] == values
    assert phi_cache_fingerprint(loaded) == phi_cache_fingerprint(phi_cfg)


def test_phi_cache_rejects_mismatch_and_corruption(tmp_path, caplog):
    path = tmp_path / "phi_cache.jsonl"
    source = make_phi_config(1e-12)
    log_phi_integral(IntervalD(dy(0), dy(1, -1)), source)
    save_phi_cache(path, source)

    other_tol = make_phi_config(1e-10)
    with caplog.at_level(logging.WARNING):
        assert load_phi_cache(path, other_tol) == 0
    assert "does not match" in caplog.text
    assert other_tol.cache == {}

    with open(path, "a") as f:
        f.write(json.dumps({"interval": "garbage"}) + "\n")
    fresh = make_phi_config(1e-12)
    assert load_phi_cache(path, fresh) == 0
    assert fresh.cache == {}

"""
The weight phi(t) = c * exp(1 / (|t| - 1)) on [-1, 1], its integrals over dyadic
intervals, and the ratio quantities derived from it.

Integrals over the right half are computed with the substitution u = 1/(1 - t):

    int_a^b exp(1/(t-1)) dt = exp(-u1) * int_0^(u2-u1) exp(-s) (u1+s)^-2 ds

with u1 = 1/(1-a), u2 = 1/(1-b). The residual integral is O(1) however close
[a, b) sits to 1, so everything below stays in log form. Left-half intervals are
mirrored, straddling intervals are split at 0.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from mpmath import mp

from phi_cascade.files import ensure_parent_dir_exists
from phi_cascade.numerics import (
    DomainError,
    DyadicRational,
    IntervalD,
    LogPositive,
    QuadratureError,
    Real,
    log_add,
)

logger = logging.getLogger(__name__)

CACHE_VERSION = 1
MAX_QUAD_TOL = 1e-6
_MAX_BISECTIONS = 14
# Residual integrand is smooth; these break points keep Gauss-Legendre panels
# short where exp(-s) still matters.
_BREAK_POINTS = (1, 8, 64)


@dataclass
class PhiConfig:
    ln_c: LogPositive
    quad_rel_tol: float
    cache: dict[IntervalD, LogPositive] = field(default_factory=dict)

    @property
    def c(self) -> float:
        return float(self.ln_c)


def _to_mpf(value):
    if isinstance(value, DyadicRational):
        return value.to_mpf()
    if hasattr(value, "numerator") and hasattr(value, "denominator"):
        return mp.mpf(value.numerator) / value.denominator
    return mp.mpf(value)


def _quad_panel(f, a, b):
    method = "tanh-sinh" if b == mp.inf else "gauss-legendre"
    return mp.quad(f, [a, b], method=method, error=True)


def _refine(f, a, b, value, error, abs_target, depth):
    if error <= abs_target:
        return value, error
    if depth >= _MAX_BISECTIONS:
        raise QuadratureError(
            f"panel [{mp.nstr(a, 8)}, {mp.nstr(b, 8)}] stuck at error "
            f"{mp.nstr(error, 3)} > {mp.nstr(abs_target, 3)} after {depth} bisections"
        )
    mid = 2 * a + 1 if b == mp.inf else (a + b) / 2
    left = _quad_panel(f, a, mid)
    right = _quad_panel(f, mid, b)
    lv, le = _refine(f, a, mid, *left, abs_target / 2, depth + 1)
    rv, re = _refine(f, mid, b, *right, abs_target / 2, depth + 1)
    return lv + rv, le + re


def _log_kernel(u1, width, rel_tol: float):
    """ln int_{u1}^{u1+width} exp(-u) u^-2 du, with width = mp.inf allowed."""
    f = lambda s: mp.exp(-s) / (u1 + s) ** 2  # noqa: E731
    cuts = [mp.mpf(0)] + [mp.mpf(p) for p in _BREAK_POINTS if p < width] + [width]
    panels = [(a, b, *_quad_panel(f, a, b)) for a, b in zip(cuts, cuts[1:])]
    total = mp.fsum(p[2] for p in panels)
    if total <= 0:
        raise QuadratureError(f"non-positive residual integral at u1={mp.nstr(u1, 8)}")
    abs_target = mp.mpf(rel_tol) * total / len(panels)
    refined = [_refine(f, a, b, v, e, abs_target, 0) for a, b, v, e in panels]
    value = mp.fsum(v for v, _ in refined)
    error = mp.fsum(e for _, e in refined)
    if error > rel_tol * value:
        raise QuadratureError(
            f"relative error {mp.nstr(error / value, 3)} above tolerance {rel_tol}"
        )
    if any(v != pv for (v, _), (_, _, pv, _) in zip(refined, panels)):
        logger.debug(f"Refined quadrature at u1={mp.nstr(u1, 8)}")
    return -u1 + mp.log(value)


def _log_right_half(a: DyadicRational, b: DyadicRational, rel_tol: float):
    """ln int_a^b exp(1/(t-1)) dt for 0 <= a < b <= 1, without the constant c."""
    one_minus_a = 1 - a
    u1 = 1 / one_minus_a.to_mpf()
    if b == 1:
        width = mp.inf
    else:
        # (b-a)/((1-a)(1-b)) from exact dyadics; u2 - u1 would cancel.
        frac = (b - a).ratio(one_minus_a * (1 - b))
        width = mp.mpf(frac.numerator) / frac.denominator
    return _log_kernel(u1, width, rel_tol)


def _log_unnormalized(interval: IntervalD, rel_tol: float) -> LogPositive:
    a, b = interval.left, interval.right
    if b <= 0:
        a, b = -b, -a
    if a >= 0:
        return LogPositive(_log_right_half(a, b, rel_tol))
    left = LogPositive(_log_right_half(DyadicRational(0), -a, rel_tol))
    right = LogPositive(_log_right_half(DyadicRational(0), b, rel_tol))
    return log_add(left, right)


@lru_cache(maxsize=None)
def normalization_constant(quad_rel_tol: float) -> LogPositive:
    """
    The constant c making int_{-1}^{1} phi = 1.

    Args:
        quad_rel_tol: Relative tolerance for the quadrature, in (0, 1e-6].

    Returns:
        c as a LogPositive.
    """
    if not 0 < quad_rel_tol <= MAX_QUAD_TOL:
        raise ValueError(
            f"quad_rel_tol must lie in (0, {MAX_QUAD_TOL}], got {quad_rel_tol}"
        )
    half_integral = _log_kernel(mp.mpf(1), mp.inf, quad_rel_tol)
    return LogPositive(-mp.log(2) - half_integral)


def make_phi_config(
    quad_rel_tol: float = 1e-12, cache_path: str | Path | None = None
) -> PhiConfig:
    cfg = PhiConfig(ln_c=normalization_constant(quad_rel_tol), quad_rel_tol=quad_rel_tol)
    if cache_path is not None and Path(cache_path).exists():
        load_phi_cache(cache_path, cfg)
    return cfg


def phi_eval(t: Real, cfg: PhiConfig) -> LogPositive:
    x = abs(_to_mpf(t))
    if x > 1:
        raise DomainError(f"phi is defined on [-1, 1], got t={t}")
    if x == 1:
        return LogPositive.zero()
    return LogPositive(cfg.ln_c.ln_value + 1 / (x - 1))


def log_phi_integral(interval: IntervalD, cfg: PhiConfig) -> LogPositive:
    """ln of the phi-integral over a dyadic interval inside [-1, 1), memoized."""
    cached = cfg.cache.get(interval)
    if cached is not None:
        return cached
    if not IntervalD.unit().contains_interval(interval):
        raise DomainError(f"{interval} is not contained in [-1, 1)")
    value = cfg.ln_c * _log_unnormalized(interval, cfg.quad_rel_tol)
    cfg.cache[interval] = value
    return value


def log_phi_edge(h: Real, cfg: PhiConfig) -> LogPositive:
    """ln phi([-1, -1 + h]) for real 0 < h <= 1 (the endpoint need not be dyadic)."""
    h = _to_mpf(h)
    if not 0 < h <= 1:
        raise DomainError(f"edge width must lie in (0, 1], got {mp.nstr(h, 8)}")
    return cfg.ln_c * LogPositive(_log_kernel(1 / h, mp.inf, cfg.quad_rel_tol))


def monotone_bracket(interval: IntervalD, cfg: PhiConfig) -> tuple[LogPositive, LogPositive]:
    """min/max endpoint value times length, for an interval inside one half."""
    if interval.left < 0 < interval.right:
        raise DomainError(f"{interval} straddles 0")
    ends = [phi_eval(interval.left, cfg), phi_eval(interval.right, cfg)]
    length = LogPositive.from_real(interval.length)
    return min(ends) * length, max(ends) * length


@dataclass(frozen=True)
class GRatio:
    C: float
    epsilon: float
    ln_G: object

    @property
    def G(self) -> float:
        return float(mp.exp(self.ln_G))

    def proof_bound_holds(self, D: float) -> bool:
        return self.ln_G >= g_ratio_proof_bound(self.C, self.epsilon, D)


def g_ratio(C: Real, epsilon: Real, cfg: PhiConfig) -> GRatio:
    """G_{C,eps} = phi([-1, -1 + C eps]) / phi([-1, -1 + eps])."""
    c_, eps = _to_mpf(C), _to_mpf(epsilon)
    if c_ < 1:
        raise DomainError(f"C must be >= 1, got {C}")
    if not 0 < c_ * eps <= 1:
        raise DomainError(f"need 0 < C*epsilon <= 1, got C={C}, epsilon={epsilon}")
    ln_G = (log_phi_edge(c_ * eps, cfg) / log_phi_edge(eps, cfg)).ln_value
    return GRatio(C=float(c_), epsilon=float(eps), ln_G=ln_G)


def g_ratio_proof_bound(C: Real, epsilon: Real, D: Real):
    """ln(C - D) + (D - 1)/(D eps), a lower bound on ln G_{C,eps} for 1 < D < C."""
    c_, eps, d = _to_mpf(C), _to_mpf(epsilon), _to_mpf(D)
    if not 1 < d < c_:
        raise DomainError(f"need 1 < D < C, got D={D}, C={C}")
    return mp.log(c_ - d) + (d - 1) / (d * eps)


@dataclass(frozen=True)
class ShiftRatioReport:
    interval: IntervalD
    M: float
    N: int
    direction: int
    ln_hypothesis_ratio: object
    ln_conclusion_ratios: tuple

    @property
    def hypothesis_holds(self) -> bool:
        return self.ln_hypothesis_ratio > mp.log(self.M)

    @property
    def ln_conclusion_threshold(self):
        return mp.log(self.M) / 8 - mp.log(2)

    @property
    def conclusions_hold(self) -> bool:
        return all(r > self.ln_conclusion_threshold for r in self.ln_conclusion_ratios)

    @property
    def implication_holds(self) -> bool:
        return not self.hypothesis_holds or self.conclusions_hold


def check_shift_ratio(
    interval: IntervalD, M: float, N: int, cfg: PhiConfig, direction: int = 1
) -> ShiftRatioReport:
    """
    Test "phi(I + l)/phi(I) > M implies phi(I + (n+1)l)/phi(I + nl) > M^(1/8)/2
    for 1 <= n <= N", l = length of I. direction=-1 translates leftwards, which is
    the mirror image of the rightward check on the reflected interval.
    """
    if M <= 1 or N < 1:
        raise ValueError(f"need M > 1 and N >= 1, got M={M}, N={N}")
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    step = interval.length * direction
    shifted = [interval.translate(step * n) for n in range(N + 2)]
    if not IntervalD.unit().contains_interval(shifted[-1]):
        raise DomainError(f"{shifted[-1]} escapes [-1, 1) (I={interval}, N={N})")
    masses = [log_phi_integral(s, cfg) for s in shifted]
    ratios = [(masses[n + 1] / masses[n]).ln_value for n in range(N + 1)]
    return ShiftRatioReport(
        interval=interval,
        M=float(M),
        N=N,
        direction=direction,
        ln_hypothesis_ratio=ratios[0],
        ln_conclusion_ratios=tuple(ratios[1:]),
    )


@dataclass(frozen=True)
class ShiftThresholdReport:
    M: float
    N: int
    # (exponent j, number of positions tested, implication held everywhere)
    rows: tuple[tuple[int, int, bool], ...]
    threshold_exponent: int | None

    @property
    def threshold_length(self) -> float | None:
        if self.threshold_exponent is None:
            return None
        return 2.0**-self.threshold_exponent


def empirical_shift_threshold(
    M: float,
    N: int,
    exponents: list[int],
    cfg: PhiConfig,
    max_positions: int = 16,
) -> ShiftThresholdReport:
    """
    Run check_shift_ratio on intervals of length 2^-j at evenly spaced dyadic
    positions and report the largest tested length from which the implication
    held at every tested smaller length. This is an empirical reading only.
    """
    rows = []
    for j in sorted(set(exponents)):
        length = DyadicRational.two_pow(-j)
        last = 2 ** (j + 1) - N - 2
        if last < 0:
            rows.append((j, 0, True))
            continue
        positions = np.unique(
            np.linspace(0, last, num=min(max_positions, last + 1)).astype(np.int64)
        )
        holds = True
        for q in positions:
            left = DyadicRational(-1) + length * int(q)
            report = check_shift_ratio(IntervalD(left, left + length), M, N, cfg)
            holds = holds and report.implication_holds
        rows.append((j, len(positions), holds))

    threshold = None
    for j, _, holds in reversed(rows):
        if not holds:
            break
        threshold = j
    return ShiftThresholdReport(M=M, N=N, rows=tuple(rows), threshold_exponent=threshold)


# Cache persistence


def _cache_header(cfg: PhiConfig) -> dict:
    return {
        "version": CACHE_VERSION,
        "quad_rel_tol": cfg.quad_rel_tol,
        "ln_c": cfg.ln_c.to_json()["ln"],
    }


def phi_cache_fingerprint(cfg: PhiConfig) -> str:
    json_string = json.dumps(_cache_header(cfg), sort_keys=True)
    return f"h{hashlib.sha256(json_string.encode()).hexdigest()[:16]}"


def load_phi_cache(path: str | Path, cfg: PhiConfig) -> int:
    """
    Merge a cache file into cfg.cache.

    A file whose header does not match cfg, or that has any unreadable line, is
    discarded as a whole.

    Returns:
        The number of entries loaded.
    """
    path = Path(path)
    entries: dict[IntervalD, LogPositive] = {}
    try:
        with open(path, "r") as f:
            header = json.loads(f.readline())
            if header != _cache_header(cfg):
                logger.warning(f"Discarding phi cache {path}: header {header} does not match")
                return 0
            for line in f:
                if not line.strip():
                    continue
                record = json.loads(line)
                entries[IntervalD.from_json(record["interval"])] = LogPositive.from_json(
                    record
                )
    except (OSError, ValueError, KeyError, TypeError) as e:
        logger.warning(f"Discarding corrupt phi cache {path}: {e}")
        return 0
    for key, value in entries.items():
        cfg.cache.setdefault(key, value)
    logger.info(f"Loaded {len(entries)} phi integrals from {path}")
    return len(entries)


def save_phi_cache(path: str | Path, cfg: PhiConfig) -> None:
    path = ensure_parent_dir_exists(path)
    keys = sorted(cfg.cache, key=lambda i: (i.left.to_fraction(), i.right.to_fraction()))
    with open(path, "w") as f:
        f.write(json.dumps(_cache_header(cfg), sort_keys=True) + "\n")
        for key in keys:
            record = {"interval": key.to_json(), **cfg.cache[key].to_json()}
            f.write(json.dumps(record, sort_keys=True) + "\n")
    logger.info(f"Saved {len(keys)} phi integrals to {path}")

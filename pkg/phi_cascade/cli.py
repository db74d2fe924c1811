"""
phi-cascade command line.

    phi-cascade verify mu --max-gen 8
    phi-cascade scan --point "nd:2,3;3,6;4,9" --scales auto
    phi-cascade blowup --x 0 --r 2^-8 --grid 257 --delta 2^-6
    phi-cascade porosity --x 0 --radii "2^-1,2^-3" --epsilon 0.001
    phi-cascade sample --n 100 --depth 12 --seed 7
    phi-cascade export --generation 3

export always writes JSON lines; --format applies to the other tables.

Exit status: 0 success, 1 a checked property failed, 2 usage error.
"""

import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import tyro
from rich.console import Console
from rich.logging import RichHandler

from phi_cascade.analysis import (
    build_nondoubling_point,
    check_nondoubling_bound,
    doubling_scan,
    porosity_scan,
    verify_porosity,
)
from phi_cascade.blowup import density_profile, detect_E
from phi_cascade.cascade import MeasureConfig, MuSampler, export_tree, sample_mu
from phi_cascade.files import resolve_cache_path
from phi_cascade.numerics import (
    CascadeError,
    DomainError,
    DyadicRational,
    InfeasibleScheduleError,
    parse_dyadic,
)
from phi_cascade.outputs import OutputFormat, format_ln, write_json, write_table
from phi_cascade.verification import SUITES, print_report, run_suite
from phi_cascade.weight import make_phi_config, phi_cache_fingerprint, save_phi_cache
from shared_configs.run_configs import MAX_GEN_LIMIT, RunConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class UsageError(CascadeError):
    """An invalid flag value. The message names the flag."""


@dataclass
class CommonArgs:
    tol: float = 1e-12
    """Relative tolerance of every phi-integral."""
    gap: float = 1e-8
    """Target relative gap of mass enclosures."""
    max_gen: int = 18
    """Deepest generation an enclosure may visit."""
    seed: int = 0
    cache: Optional[str] = None
    """phi-cache file; CASCADE_CACHE overrides it, "none" disables it."""
    format: Literal["csv", "jsonl"] = "csv"
    threads: int = 1
    out: str = "results"
    verbose: bool = False


@dataclass
class VerifyArgs(CommonArgs):
    suite: tyro.conf.Positional[Literal["phi", "mu", "tangent"]] = "phi"


@dataclass
class ScanArgs(CommonArgs):
    x: Optional[str] = None
    """Dyadic point, e.g. 3*2^-5."""
    point: Optional[str] = None
    """nd:i,k;i,k;... builds the steered non-doubling point."""
    scales: str = "auto"
    """Comma-separated dyadic radii, or auto for the point's witness radii."""


@dataclass
class BlowupArgs(CommonArgs):
    x: str = "0"
    r: str = "2^-8"
    grid: int = 257
    delta: str = "2^-6"
    R: str = "1"


@dataclass
class PorosityArgs(CommonArgs):
    x: str = "0"
    radii: str = "2^-1"
    epsilon: float = 1e-3
    grid_gen: int = 6


@dataclass
class SampleArgs(CommonArgs):
    n: int = 100
    depth: int = 12


@dataclass
class ExportArgs(CommonArgs):
    generation: int = 3


Command = Union[
    Annotated[VerifyArgs, tyro.conf.subcommand("verify")],
    Annotated[ScanArgs, tyro.conf.subcommand("scan")],
    Annotated[BlowupArgs, tyro.conf.subcommand("blowup")],
    Annotated[PorosityArgs, tyro.conf.subcommand("porosity")],
    Annotated[SampleArgs, tyro.conf.subcommand("sample")],
    Annotated[ExportArgs, tyro.conf.subcommand("export")],
]


# Flag parsing


def dyadic_flag(flag: str, text: str) -> DyadicRational:
    try:
        return parse_dyadic(text)
    except ValueError as e:
        raise UsageError(f"--{flag}: {e}") from e


def dyadic_list_flag(flag: str, text: str) -> list[DyadicRational]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise UsageError(f"--{flag}: expected a comma-separated list of dyadic rationals")
    return [dyadic_flag(flag, item) for item in items]


def schedule_flag(text: str) -> list[tuple[int, int]]:
    """nd:2,3;3,6 -> [(2, 3), (3, 6)]"""
    if not text.startswith("nd:"):
        raise UsageError(f"--point: expected nd:i,k;i,k;..., got {text!r}")
    schedule = []
    for entry in text[3:].split(";"):
        try:
            i, k = (int(v) for v in entry.split(","))
        except ValueError as e:
            raise UsageError(f"--point: bad schedule entry {entry!r}") from e
        schedule.append((i, k))
    return schedule


def to_run_config(args: CommonArgs) -> RunConfig:
    if not 1 <= args.max_gen <= MAX_GEN_LIMIT:
        raise UsageError(f"--max-gen: must lie in [1, {MAX_GEN_LIMIT}], got {args.max_gen}")
    if args.threads < 1:
        raise UsageError(f"--threads: must be >= 1, got {args.threads}")
    if not 0 < args.tol <= 1e-6:
        raise UsageError(f"--tol: must lie in (0, 1e-6], got {args.tol}")
    if not 0 < args.gap < 1:
        raise UsageError(f"--gap: must lie in (0, 1), got {args.gap}")
    cache_path = resolve_cache_path(args.cache)
    return RunConfig(
        quad_rel_tol=args.tol,
        rel_gap=args.gap,
        max_gen=args.max_gen,
        seed=args.seed,
        cache_path=None if cache_path is None else str(cache_path),
        format=args.format,
        threads=args.threads,
        out=args.out,
    )


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True))],
        force=True,
    )


# Commands


class Session:
    """Configs and output naming shared by every command of one invocation."""

    def __init__(self, run: RunConfig):
        self.run = run
        self.cfg = MeasureConfig(
            phi=make_phi_config(run.quad_rel_tol, run.cache_path),
            rel_gap=run.rel_gap,
            max_gen=run.max_gen,
        )

    def header(self) -> dict:
        return {
            "run_config": self.run.to_json(),
            "run_hash": self.run.hash(),
            "phi_cache": phi_cache_fingerprint(self.cfg.phi),
        }

    def path(self, stem: str, suffix: str | None = None) -> Path:
        suffix = suffix or self.run.format
        return Path(self.run.out) / f"{stem}_{self.run.hash()}.{suffix}"

    def write(self, stem: str, rows: list[dict], fmt: OutputFormat | None = None) -> Path:
        fmt = fmt or self.run.format
        return write_table(rows, self.path(stem, fmt), self.header(), fmt)

    def close(self) -> None:
        if self.run.cache_path is not None:
            save_phi_cache(self.run.cache_path, self.cfg.phi)


def cmd_verify(args: VerifyArgs, session: Session) -> int:
    if args.suite not in SUITES:
        raise UsageError(f"suite: expected one of {SUITES}, got {args.suite!r}")
    results = run_suite(args.suite, session.cfg, seed=session.run.seed)
    passed = all(r.passed for r in results)
    write_json(
        {
            **session.header(),
            "suite": args.suite,
            "passed": passed,
            "checks": [r.to_json() for r in results],
        },
        session.path(f"verify_{args.suite}", "json"),
    )
    print_report(args.suite, results)
    return EXIT_OK if passed else EXIT_FAILED


def cmd_scan(args: ScanArgs, session: Session) -> int:
    if (args.x is None) == (args.point is None):
        raise UsageError("--x/--point: give exactly one of them")
    point = None
    if args.point is not None:
        point = build_nondoubling_point(schedule_flag(args.point), session.cfg)
        x = point.x
    else:
        x = dyadic_flag("x", args.x)  # type: ignore[arg-type]
    if args.scales == "auto":
        if point is None:
            raise UsageError("--scales: auto needs --point")
        scales = point.radii
    else:
        scales = dyadic_list_flag("scales", args.scales)

    rows = doubling_scan(x, scales, session.cfg, threads=session.run.threads, progress=True)
    session.write(
        "scan",
        [
            {
                "x": x,
                "r": row.r,
                "ln2_r": row.ln2_r,
                "ln_mu_r": row.ln_mass_r.ln_float(),
                "ln_mu_2r": row.ln_mass_2r.ln_float(),
                "ln_mu_17r": row.ln_mass_17r.ln_float(),
                "ratio2": format_ln(row.ln_ratio2),
                "ratio17": format_ln(row.ln_ratio17),
                "enclosure_gap": row.enclosure_gap,
            }
            for row in rows
        ],
    )
    if point is None:
        return EXIT_OK

    bounds = check_nondoubling_bound(point, session.cfg)
    session.write(
        "scan_bounds",
        [
            {
                "i": row.i,
                "k": row.k,
                "r": row.r,
                "lambda": row.lam,
                "C": row.C,
                "ratio17_lower": format_ln(row.ln_ratio17_lower),
                "G_bound": None if row.ln_bound is None else format_ln(row.ln_bound),
                "holds": row.holds,
            }
            for row in bounds
        ],
    )
    in_band = all(w.in_band for w in point.witnesses)
    return EXIT_OK if in_band and all(row.holds for row in bounds if row.applicable) else EXIT_FAILED


def cmd_blowup(args: BlowupArgs, session: Session) -> int:
    x, r = dyadic_flag("x", args.x), dyadic_flag("r", args.r)
    delta, R = dyadic_flag("delta", args.delta), dyadic_flag("R", args.R)
    try:
        profile = density_profile(
            x, r, R, args.grid, delta, session.cfg, threads=session.run.threads, progress=True
        )
    except ValueError as e:
        if isinstance(e, DomainError):
            raise
        raise UsageError(f"--grid/--delta: {e}") from e
    session.write(
        "blowup",
        [
            {
                "z": p.z,
                "delta": profile.delta,
                "ln_nu": p.ln_nu.ln_float(),
                "nu_density": p.density,
                "near_E_flag": p.near_E,
                "enclosure_gap": p.enclosure_gap,
                "degenerate": p.degenerate,
            }
            for p in profile.points
        ],
    )
    scale = profile.scale
    write_json(
        {
            **session.header(),
            "x": x,
            "r": r,
            "K": scale.K,
            "reason": scale.reason,
            "rho": scale.rho,
            "N": scale.N,
            "E": list(detect_E(scale).points) if scale.valid else [],
            "E_normalized": list(profile.E_normalized),
        },
        session.path("blowup_E", "json"),
    )
    return EXIT_OK


def cmd_porosity(args: PorosityArgs, session: Session) -> int:
    x = dyadic_flag("x", args.x)
    radii = dyadic_list_flag("radii", args.radii)
    if not 0 < args.epsilon:
        raise UsageError(f"--epsilon: must be positive, got {args.epsilon}")
    scan = porosity_scan(
        x, radii, args.epsilon, args.grid_gen, session.cfg, threads=session.run.threads, progress=True
    )
    rows = []
    certified = True
    for result in scan.results:
        ok = verify_porosity(result, session.cfg)
        certified &= ok
        rows.append(
            {
                "x": result.x,
                "r": result.r,
                "eps": result.epsilon,
                "delta": result.delta,
                "y": result.y,
                "hole_mass_upper": result.hole_upper,
                "ball_mass_lower": result.ball_lower,
                "certified": ok,
            }
        )
    session.write("porosity", rows)
    return EXIT_OK if certified else EXIT_FAILED


def cmd_sample(args: SampleArgs, session: Session) -> int:
    if not 0 <= args.depth <= session.run.max_gen:
        raise UsageError(f"--depth: must lie in [0, {session.run.max_gen}], got {args.depth}")
    if args.n < 1:
        raise UsageError(f"--n: must be >= 1, got {args.n}")
    sampler = MuSampler(rng_seed=session.run.seed, max_generation=args.depth)
    samples = sample_mu(sampler, args.n, session.cfg.phi, progress=True)
    session.write(
        "sample",
        [
            {"sample": j, "x": left, "path": " ".join(str(i) for i in index.path)}
            for j, (left, index) in enumerate(samples)
        ],
    )
    return EXIT_OK


def cmd_export(args: ExportArgs, session: Session) -> int:
    try:
        nodes = list(export_tree(args.generation, session.cfg.phi))
    except ValueError as e:
        raise UsageError(f"--generation: {e}") from e
    session.write("export", [node.to_json() for node in nodes], fmt="jsonl")
    return EXIT_OK


COMMANDS = {
    VerifyArgs: cmd_verify,
    ScanArgs: cmd_scan,
    BlowupArgs: cmd_blowup,
    PorosityArgs: cmd_porosity,
    SampleArgs: cmd_sample,
    ExportArgs: cmd_export,
}


def run(argv: list[str] | None = None) -> int:
    args = tyro.cli(Command, args=argv)  # type: ignore[arg-type]
    configure_logging(args.verbose)
    try:
        session = Session(to_run_config(args))
        try:
            return COMMANDS[type(args)](args, session)
        finally:
            session.close()
    except (UsageError, InfeasibleScheduleError, DomainError) as e:
        logger.error(str(e))
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

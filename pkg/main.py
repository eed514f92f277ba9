#!/usr/bin/env python3
"""
Multi-PFA - CLI Entry Point
FDP estimation for multinomial feature screening: analyze a labelled CSV or
run the Monte Carlo study.

Exit codes: 0 success, 2 invalid input or options, 3 file access failure,
1 unexpected internal error. Diagnostics go to stderr; stdout stays empty.
"""

import argparse
import logging
import sys
import traceback
from datetime import datetime
from pathlib import Path

from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from multipfa import __version__
from multipfa.errors import ConfigError, InputOutputError, MultiPFAError
from multipfa.graph import print_graph_structure, run_analysis
from multipfa.settings import debug_mode, get_n_jobs, get_output_dir
from multipfa.simulate import load_sim_config, records_table, run_monte_carlo, summary_table
from multipfa.states import (
    AnalyzeOptions,
    ErrorKind,
    FactorEstimator,
    FitOptions,
    KPolicy,
    PFAOptions,
    PValueKind,
    RunManifest,
)
from multipfa.tools import (
    file_digest,
    init_output_dir,
    safe_output_path,
    write_frame_atomic,
    write_json_atomic,
)


console = Console(stderr=True)
logger = logging.getLogger("multipfa")

EXIT_CODES = {ErrorKind.VALIDATION: 2, ErrorKind.IO: 3, ErrorKind.INTERNAL: 1}


def setup_logging(verbose: bool = False) -> None:
    """Route library logging through rich on stderr."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, rich_tracebacks=True)],
        force=True,
    )


def k_value(text: str) -> KPolicy:
    try:
        return KPolicy.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def write_manifest(out_dir: Path, manifest: RunManifest) -> None:
    """Write manifest.json last; it indexes everything the run produced."""
    manifest.completed_at = datetime.now()
    try:
        root = init_output_dir(out_dir)
        write_json_atomic(
            safe_output_path(root, "manifest.json"), manifest.model_dump(mode="json")
        )
    except InputOutputError as e:
        logger.error("Could not write manifest: %s", e)


def raw_options(args: argparse.Namespace) -> dict:
    """Command-line values as given, before validation."""
    return {
        key: value if isinstance(value, (str, int, float, bool, type(None))) else str(value)
        for key, value in vars(args).items()
        if key != "handler"
    }


# ============== analyze ==============


def build_analyze_options(args: argparse.Namespace) -> AnalyzeOptions:
    try:
        return AnalyzeOptions(
            input=args.input,
            label=args.label,
            baseline=args.baseline,
            tic=args.tic,
            out=str(get_output_dir(args.out)),
            fit=FitOptions(
                max_iter=args.max_iter,
                grad_tol=args.grad_tol,
                sep_bound=args.sep_bound,
            ),
            pfa=PFAOptions(
                k_policy=args.k,
                estimator=FactorEstimator(args.factor_reg),
                alpha=args.alpha,
                grid_min=args.grid_min,
                grid_max=args.grid_max,
                grid_points=args.grid_points,
                count_kind=PValueKind.RAW if args.count_raw else PValueKind.ADJUSTED,
                keep_fraction=args.keep_fraction,
            ),
            diagnostics=args.diagnostics,
            dump_corr=args.dump_corr,
            n_jobs=get_n_jobs(args.jobs),
        )
    except ValidationError as e:
        raise ConfigError(f"invalid options: {e}") from e


def cmd_analyze(args: argparse.Namespace, manifest: RunManifest) -> int:
    """
    Run the analyze pipeline on one CSV.

    Returns:
        Exit code (0 for success)
    """
    options = build_analyze_options(args)
    out_dir = Path(options.out)
    manifest.options = options.model_dump(mode="json")
    if Path(options.input).is_file():
        manifest.input_digest = file_digest(Path(options.input))

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task("[cyan]Analyzing...", total=None)
        result = run_analysis(options)
        progress.update(task, completed=True)

    run = result["run"]
    manifest.outputs = list(result.get("outputs", []))
    manifest.errors = list(run.errors)
    manifest.status = run.status

    if run.failed:
        console.print(f"\n[bold red]Analysis failed ({run.error_kind.value}):[/bold red]")
        for error in run.errors:
            console.print(f"  • {error}")
        return EXIT_CODES[run.error_kind]

    duration = (datetime.now() - manifest.started_at).total_seconds()
    console.print(f"\n[bold green]Analysis complete[/bold green] -> {out_dir}")
    console.print(f"[dim]{len(manifest.outputs)} files in {duration:.1f} seconds[/dim]")
    return 0


# ============== simulate ==============


def cmd_simulate(args: argparse.Namespace, manifest: RunManifest) -> int:
    """Run the Monte Carlo study and write summary.csv and records.csv."""
    cfg = load_sim_config(
        args.config,
        scenario=args.scenario,
        n=args.n,
        p=args.p,
        p1=args.p1,
        rho=args.rho,
        beta_active=args.beta_active,
        k=args.k,
        t_fixed=args.t,
        alpha=args.alpha,
        reps=args.reps,
        seed=args.seed,
        estimator=args.factor_reg,
        count_kind=PValueKind.RAW if args.count_raw else None,
        keep_fraction=args.keep_fraction,
        grid_min=args.grid_min,
        grid_max=args.grid_max,
        grid_points=args.grid_points,
        bootstrap=args.bootstrap,
    )
    out_dir = get_output_dir(args.out)
    manifest.options = cfg.model_dump(mode="json")
    manifest.seed = cfg.seed

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task(f"[cyan]Running {cfg.reps} repetitions...", total=None)
        table, records = run_monte_carlo(cfg, n_jobs=get_n_jobs(args.jobs))
        progress.update(task, completed=True)

    root = init_output_dir(out_dir)
    write_frame_atomic(safe_output_path(root, "summary.csv"), summary_table(table))
    write_frame_atomic(safe_output_path(root, "records.csv"), records_table(records))
    manifest.outputs = ["summary.csv", "records.csv"]
    manifest.status = "DONE"

    for row in table.rows:
        console.print(
            f"  c={row.category}: median FDP_hat={row.median_fdp:.4g}, "
            f"mean S(t)={row.mean_S:.3g}, mean S(t_alpha)={row.mean_S_alpha:.3g}"
        )
    console.print(f"\n[bold green]Simulation complete[/bold green] -> {out_dir}")
    return 0


# ============== argument parsing ==============


def add_pfa_arguments(parser: argparse.ArgumentParser, sim: bool) -> None:
    """Threshold-grid and factor flags shared by both commands."""
    def default(value):
        return None if sim else value

    parser.add_argument("--alpha", type=float, default=default(0.05), help="Target FDP level (default: 0.05)")
    parser.add_argument("--grid-min", type=float, default=default(1e-8), help="Smallest threshold (default: 1e-8)")
    parser.add_argument("--grid-max", type=float, default=default(0.05), help="Largest threshold (default: 0.05)")
    parser.add_argument("--grid-points", type=int, default=default(200), help="Log-spaced grid size (default: 200)")
    parser.add_argument(
        "--count-raw",
        action="store_true",
        help="Count rejections R(t) over raw instead of factor-adjusted p-values",
    )
    parser.add_argument(
        "--keep-fraction",
        type=float,
        default=default(0.95),
        help="Fraction of smallest |Z| used by the L2 factor fit (default: 0.95)",
    )
    parser.add_argument(
        "--jobs", "-j", type=int, default=None, help="Worker count, -1 for all cores (env MULTIPFA_N_JOBS)"
    )
    parser.add_argument("--out", "-o", type=str, default=None, help="Output directory (env MULTIPFA_OUTPUT_DIR)")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug-level logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Multi-PFA - FDP estimation for multinomial feature screening",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py analyze --input spectra.csv --label tumour --k auto --out results
  python main.py analyze --input spectra.csv --label tumour --baseline ADC --tic --k 3
  python main.py simulate --scenario 2 --rho 0.8 --k 1 --reps 200 --seed 7
  python main.py simulate --config study.env --jobs 8
  python main.py --show-graph
        """,
    )
    parser.add_argument("--version", action="version", version=f"Multi-PFA v{__version__}")
    parser.add_argument("--show-graph", "-g", action="store_true", help="Display the analyze workflow and exit")

    sub = parser.add_subparsers(dest="command")

    analyze = sub.add_parser("analyze", help="Analyze a labelled feature CSV")
    analyze.add_argument("--input", "-i", required=True, help="CSV with a header row")
    analyze.add_argument("--label", "-l", required=True, help="Name of the category column")
    analyze.add_argument("--baseline", default=None, help="Baseline category, label or code (default: last)")
    analyze.add_argument("--k", type=k_value, default=KPolicy.threshold(), help='Factor count or "auto" (default: auto)')
    analyze.add_argument("--factor-reg", choices=["l1", "l2"], default="l1", help="Factor estimator (default: l1)")
    analyze.add_argument("--tic", action="store_true", help="Divide each row by its total ion count first")
    analyze.add_argument("--max-iter", type=int, default=100, help="Newton iteration cap (default: 100)")
    analyze.add_argument("--grad-tol", type=float, default=1e-8, help="Gradient sup-norm tolerance (default: 1e-8)")
    analyze.add_argument("--sep-bound", type=float, default=30.0, help="Separation bound on |beta| * sd(x) (default: 30)")
    analyze.add_argument("--diagnostics", default=None, metavar="NAME", help="Per-feature fit diagnostics JSONL, inside --out")
    analyze.add_argument("--dump-corr", choices=["npy", "csv"], default=None, help="Also write each correlation matrix")
    add_pfa_arguments(analyze, sim=False)
    analyze.set_defaults(handler=cmd_analyze)

    simulate = sub.add_parser("simulate", help="Run the Monte Carlo study")
    simulate.add_argument("--config", "-c", default=None, help="KEY=VALUE file with SimConfig fields")
    simulate.add_argument("--scenario", type=int, choices=[1, 2], default=None)
    simulate.add_argument("--n", type=int, default=None, help="Units per data set (default: 500)")
    simulate.add_argument("--p", type=int, default=None, help="Features (default: 500)")
    simulate.add_argument("--p1", type=int, default=None, help="Active features (default: 10)")
    simulate.add_argument("--rho", type=float, default=None, help="Scenario 2 equi-correlation (default: 0)")
    simulate.add_argument("--beta-active", type=float, default=None, help="Active slope (default: 1)")
    simulate.add_argument("--k", type=int, default=None, help="Factor count (default: 10)")
    simulate.add_argument("--t", type=float, default=None, help="Fixed threshold (default: 1e-4)")
    simulate.add_argument("--reps", type=int, default=None, help="Repetitions (default: 1000)")
    simulate.add_argument("--seed", type=int, default=None, help="Master seed (default: 0)")
    simulate.add_argument("--factor-reg", choices=["l1", "l2"], default=None, help="Factor estimator (default: l2)")
    simulate.add_argument("--bootstrap", type=int, default=None, help="Resamples for the median FDP error (default: 1000)")
    add_pfa_arguments(simulate, sim=True)
    simulate.set_defaults(handler=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(getattr(args, "verbose", False))

    if args.show_graph:
        print_graph_structure(console)
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2

    manifest = RunManifest(
        command=args.command,
        options=raw_options(args),
        tool_version=__version__,
        started_at=datetime.now(),
    )
    try:
        return args.handler(args, manifest)
    except MultiPFAError as e:
        manifest.status = "FAILED"
        manifest.errors.append(str(e))
        console.print(f"\n[bold red]Error:[/bold red] {e}")
        if debug_mode():
            traceback.print_exc()
        return e.exit_code
    except KeyboardInterrupt:
        manifest.status = "FAILED"
        manifest.errors.append("cancelled")
        console.print("\n[yellow]Operation cancelled by user.[/yellow]")
        return 1
    except Exception as e:
        manifest.status = "FAILED"
        manifest.errors.append(f"internal error: {e}")
        console.print("\n[bold red]Internal error:[/bold red]")
        console.print(f"[red]{e}[/red]")
        if debug_mode():
            traceback.print_exc()
        return 1
    finally:
        write_manifest(get_output_dir(args.out), manifest)


if __name__ == "__main__":
    sys.exit(main())

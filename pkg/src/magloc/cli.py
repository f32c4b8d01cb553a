"""Command-line harness: ``trial``, ``montecarlo`` and ``obsmap``.

Exit status is 0 on success, 1 for invalid configuration or domain errors
and 2 for I/O failures.  All randomness flows from one seed.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .config import ConfigError, ExperimentConfig, load_config
from .liegroups import Pose
from .magnetics import CoincidentPointError
from .observability import PLANES, workspace_condition_map
from .scenario import ObservabilityError, monte_carlo, run_trial, sample_pose

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

TRACE_HEADER = ["k", "configs_used", "e_p", "e_R", "px", "py", "pz", "qw", "qx", "qy", "qz"]
MC_HEADER = [
    "trial",
    "seed",
    "converged",
    "configs_to_convergence",
    "final_e_p",
    "final_e_R",
    "pos_convergence_iter",
    "orient_convergence_iter",
]


class IOFailure(Exception):
    pass


def fmt(x) -> str:
    """Shortest round-trip text for CSV cells; ``None`` becomes empty."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _open_out(path):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc.strerror or exc}") from None


def _write_rows(path, header, rows):
    fh = _open_out(path)
    try:
        with fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc.strerror or exc}") from None


def trace_rows(result):
    for i in range(len(result.k)):
        yield (
            int(result.k[i]),
            int(result.k[i]) * result.n,
            result.e_p[i],
            result.e_R[i],
            *result.positions[i],
            *result.quaternions[i],
        )


def parse_truth(text: str) -> Pose:
    """``x,y,z`` or ``x,y,z,qw,qx,qy,qz`` (metres, unit quaternion w-first)."""
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 3:
        return Pose(np.eye(3), vals)
    if len(vals) == 7:
        w, x, y, z = vals[3:]
        return Pose(Rotation.from_quat([x, y, z, w]).as_matrix(), vals[:3])
    raise ConfigError("--truth takes 3 (position) or 7 (position + quaternion) values")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_trial(cfg: ExperimentConfig, seed: int, out, truth: Pose | None = None, stream=None) -> int:
    """Run one static-pose trial and write its per-iteration trace."""
    stream = stream or sys.stdout
    fh = _open_out(out)
    fh.close()
    scene = cfg.scene()
    rng = np.random.default_rng(seed)
    sampled = sample_pose(scene.workspace, rng)
    truth = truth or sampled
    result = run_trial(
        truth,
        scene.m,
        scene.n,
        cfg.filter_params(),
        cfg.noise(),
        cfg.criteria(),
        rng,
        scene=scene,
    )
    _write_rows(out, TRACE_HEADER, trace_rows(result))
    print(f"converged: {'yes' if result.converged else 'no'}", file=stream)
    print(f"configs_to_convergence: {fmt(result.configs_to_convergence) or 'n/a'}", file=stream)
    print(f"final_e_p_m: {fmt(result.final_e_p)}", file=stream)
    print(f"final_e_R: {fmt(result.final_e_R)}", file=stream)
    print(f"final_e_p_below_1mm: {'yes' if result.final_e_p < 1e-3 else 'no'}", file=stream)
    return EXIT_OK


def _summary_rows(summary):
    for i, t in enumerate(summary.trials):
        yield (
            i,
            summary.seeds[i],
            t.converged,
            t.configs_to_convergence,
            t.final_e_p,
            t.final_e_R,
            t.pos_convergence_iter,
            t.orient_convergence_iter,
        )


def aggregate_text(summary) -> str:
    agg = summary.aggregate()
    lines = [f"# m={agg['m']} n={agg['n']} trials={agg['trials']}"]
    lines.append(f"convergence_percent: {fmt(100.0 * agg['convergence_fraction'])}")
    lines.append(f"percent_final_e_p_below_1mm: {fmt(100.0 * agg['fraction_e_p_below_1mm'])}")
    for key in (
        "median_configs_to_convergence",
        "median_final_e_p",
        "median_final_e_R",
        "median_pos_convergence_iter",
        "median_orient_convergence_iter",
    ):
        lines.append(f"{key}: {fmt(agg[key])}")
    return "\n".join(lines) + "\n"


def _suffixed(out: Path, m: int, n: int) -> Path:
    return out.with_name(f"{out.stem}_m{m}_n{n}{out.suffix or '.csv'}")


def cmd_montecarlo(
    cfg: ExperimentConfig,
    out,
    *,
    seed: int | None = None,
    threads: int = 1,
    sweep_m=None,
    sweep_n=None,
    stream=None,
) -> int:
    """Monte Carlo over random poses; one CSV per (m, n) when sweeping."""
    stream = stream or sys.stdout
    out = Path(out)
    ms = sweep_m or [cfg.epm.count]
    ns = sweep_n or [cfg.sensing.n]
    for m in ms:
        if not 1 <= m <= 6:
            raise ConfigError("sweep EPM counts must be between 1 and 6", "--sweep-m")
    for n in ns:
        if n < 2:
            raise ConfigError("sweep configuration counts must be at least 2", "--sweep-n")
    sweeping = len(ms) > 1 or len(ns) > 1
    targets = {(m, n): (_suffixed(out, m, n) if sweeping else out) for m in ms for n in ns}
    for path in targets.values():
        _open_out(path).close()
    master = cfg.sim.seed if seed is None else seed
    base = cfg.scene()
    params, noise, criteria = cfg.filter_params(), cfg.noise(), cfg.criteria()
    blocks = []
    for (m, n), path in targets.items():
        summary = monte_carlo(
            cfg.sim.trials,
            m,
            n,
            params,
            noise,
            criteria,
            master,
            scene=base,
            threads=threads,
            stop_on_convergence=cfg.sim.stop_on_convergence,
        )
        _write_rows(path, MC_HEADER, _summary_rows(summary))
        block = aggregate_text(summary)
        blocks.append(block)
        print(block, end="", file=stream)
    text_path = out.with_name(out.stem + "_summary.txt")
    try:
        text_path.write_text("".join(blocks))
    except OSError as exc:
        raise IOFailure(f"cannot write {text_path}: {exc.strerror or exc}") from None
    return EXIT_OK


def cmd_observability_map(
    cfg: ExperimentConfig,
    plane: str,
    grid: int,
    out,
    *,
    seed: int | None = None,
    threads: int = 1,
    stream=None,
) -> int:
    """Condition-number map over an axis-aligned plane through the centre."""
    stream = stream or sys.stdout
    if plane not in PLANES:
        raise ConfigError(f"plane must be one of {sorted(PLANES)}", "--plane")
    if grid < 1:
        raise ConfigError("grid resolution must be at least 1", "--grid")
    _open_out(out).close()
    scene = cfg.scene()
    cmap = workspace_condition_map(
        plane,
        grid,
        scene.m,
        scene.n,
        cfg.obsmap.trials,
        cfg.sim.seed if seed is None else seed,
        scene=scene,
        whitening=cfg.whitening_rule(),
        threads=threads,
    )
    a, b, _ = PLANES[plane]
    header = [f"{'xyz'[a]}_m", f"{'xyz'[b]}_m", "N_c"]
    _write_rows(out, header, cmap.rows())
    finite = np.isfinite(cmap.values)
    print(f"plane: {plane} grid: {grid}x{grid} m={scene.m} n={scene.n}", file=stream)
    print(f"median_N_c: {fmt(cmap.median())}", file=stream)
    print(f"finite_cells: {int(finite.sum())}/{finite.size}", file=stream)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config (defaults if omitted)")
    common.add_argument("--seed", type=int, help="seed; overrides sim.seed")
    common.add_argument("--out", type=Path, required=True, help="output CSV path")
    common.add_argument("--threads", type=int, default=1, help="worker processes")

    parser = argparse.ArgumentParser(prog="magloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trial", parents=[common], help="single static-pose trial trace")
    p.add_argument("--truth", help="x,y,z[,qw,qx,qy,qz] true pose (random from seed if omitted)")

    p = sub.add_parser("montecarlo", parents=[common], help="random-pose Monte Carlo summary")
    p.add_argument("--trials", type=int, help="overrides sim.trials")
    p.add_argument("--sweep-m", type=_int_list, help="comma-separated EPM counts")
    p.add_argument("--sweep-n", type=_int_list, help="comma-separated configuration counts")

    p = sub.add_parser("obsmap", parents=[common], help="condition-number map over a plane")
    p.add_argument("--plane", choices=sorted(PLANES), help="overrides obsmap.plane")
    p.add_argument("--grid", type=int, help="cells per side; overrides obsmap.grid")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            cfg = load_config(args.config) if args.config else ExperimentConfig()
        except OSError as exc:
            raise IOFailure(f"cannot read {args.config}: {exc.strerror or exc}") from None
        if args.threads < 1:
            raise ConfigError("must be at least 1", "--threads")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("must be non-negative", "--seed")
        if args.command == "trial":
            truth = parse_truth(args.truth) if args.truth else None
            seed = cfg.sim.seed if args.seed is None else args.seed
            return cmd_trial(cfg, seed, args.out, truth)
        if args.command == "montecarlo":
            if args.trials is not None:
                if args.trials < 1:
                    raise ConfigError("must be at least 1", "--trials")
                cfg.sim.trials = args.trials
            return cmd_montecarlo(
                cfg, args.out, seed=args.seed, threads=args.threads, sweep_m=args.sweep_m, sweep_n=args.sweep_n
            )
        plane = args.plane or cfg.obsmap.plane
        grid = cfg.obsmap.grid if args.grid is None else args.grid
        return cmd_observability_map(cfg, plane, grid, args.out, seed=args.seed, threads=args.threads)
    except IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ObservabilityError, CoincidentPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

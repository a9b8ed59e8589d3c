"""Command-line front end: validation, scaling sweeps and swing-up reports.

Every command writes UTF-8 CSV files into the output directory and renders
static SVG charts next to them.  Exit codes: 0 success, 1 a result failed
its acceptance check, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .cartpole import (
    ProblemConfig,
    build_ocp_graph,
    load_config,
    unpack_solution,
    upright_state,
)
from .elimination import back_substitute, eliminate_graph
from .errors import ConfigError, NoProgress, SgoptError
from .solvers import (
    assemble_dense_lti,
    iterative_sgopt,
    resolve_ordering,
    riccati_lqr,
)

RECORD_HEADER = [
    "experiment", "n", "m", "t", "ordering", "solver",
    "cost", "runtime_s", "build_s", "max_p1", "max_p2", "status",
]

# Solves faster than this are repeated and the median taken; slower ones are
# timed once so large sweep points stay affordable.
_REPEAT_BUDGET_S = 2.0
_TIMING_REPS = 5


@dataclass
class ExperimentRecord:
    experiment: str
    n: int
    m: int
    t: int
    ordering: str
    solver: str
    cost: float
    runtime_s: float
    build_s: float
    max_p1: int
    max_p2: int
    status: str = "ok"

    def row(self) -> List[str]:
        return [
            self.experiment, str(self.n), str(self.m), str(self.t),
            self.ordering, self.solver,
            f"{self.cost:.9g}", f"{self.runtime_s:.6f}", f"{self.build_s:.6f}",
            str(self.max_p1), str(self.max_p2), self.status,
        ]


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _median_runtime(run, first_elapsed: float) -> float:
    if first_elapsed > _REPEAT_BUDGET_S:
        return first_elapsed
    times = [first_elapsed]
    for _ in range(_TIMING_REPS - 1):
        t0 = time.perf_counter()
        run()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _run_sgopt(config: ProblemConfig, ordering: str, experiment: str):
    """Graph solve with build/solve timing split; returns (record, states, controls, net)."""
    t0 = time.perf_counter()
    graph = build_ocp_graph(config)
    order = resolve_ordering(config if ordering == "structured" else graph, ordering)
    build_s = time.perf_counter() - t0

    stats = None

    def solve():
        nonlocal stats
        net, stats = eliminate_graph(graph, order)
        return net, back_substitute(net, graph)

    t0 = time.perf_counter()
    net, solution = solve()
    runtime = _median_runtime(solve, time.perf_counter() - t0)
    states, controls = unpack_solution(solution, config)
    record = ExperimentRecord(
        experiment=experiment, n=config.n, m=config.m, t=config.horizon,
        ordering=ordering, solver="sgopt",
        cost=solution.total_cost, runtime_s=runtime, build_s=build_s,
        max_p1=stats.max_p1, max_p2=stats.max_p2,
    )
    return record, states, controls, net


def _run_riccati(config: ProblemConfig, experiment: str):
    t0 = time.perf_counter()
    model = assemble_dense_lti(config)
    build_s = time.perf_counter() - t0

    def solve():
        return riccati_lqr(model)

    t0 = time.perf_counter()
    result = solve()
    runtime = _median_runtime(solve, time.perf_counter() - t0)
    front = 4 * config.n + config.m
    record = ExperimentRecord(
        experiment=experiment, n=config.n, m=config.m, t=config.horizon,
        ordering="none", solver="riccati",
        cost=result.cost, runtime_s=runtime, build_s=build_s,
        max_p1=front, max_p2=front,
    )
    return record, result


def _trajectory_rows(config: ProblemConfig, states: np.ndarray, controls: np.ndarray):
    header = (
        ["t"]
        + [f"theta_{j}" for j in range(config.n)]
        + [f"u_{a}" for a in range(config.m)]
    )
    rows = []
    for t in range(config.horizon):
        row = [str(t)]
        row += [f"{states[t, 4 * j + 2]:.9g}" for j in range(config.n)]
        if t < config.horizon - 1:
            row += [f"{controls[t, a]:.9g}" for a in range(config.m)]
        else:
            row += [""] * config.m
        rows.append(row)
    return header, rows


def _plot_trajectory(path: Path, config: ProblemConfig, states, controls, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = np.arange(config.horizon)
    fig, (ax_th, ax_u) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for j in range(config.n):
        ax_th.plot(steps, states[:, 4 * j + 2], label=f"pendulum {j}")
    ax_th.set_ylabel("angle [rad]")
    ax_th.legend(loc="best", fontsize="small")
    ax_th.set_title(title)
    for a in range(config.m):
        ax_u.step(steps[:-1], controls[:, a], where="post", label=f"actuator {a}")
    ax_u.set_ylabel("control [N]")
    ax_u.set_xlabel("step")
    ax_u.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


DEFAULT_VALIDATE = {
    "n": 3,
    "horizon": 150,
    "actuation": {"m": 2},
    "preset": {"upright_perturbed": 1.15},
}

DEFAULT_SWINGUP = {
    "n": 5,
    "horizon": 50,
    "actuation": {"m": 2},
    "preset": "hanging",
}


def cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config if args.config else DEFAULT_VALIDATE)
    out = _ensure_out(args.out)
    record_s, states, controls, _ = _run_sgopt(config, args.ordering, "validate")
    record_r, _ = _run_riccati(config, "validate")
    _write_csv(out / "validate.csv", RECORD_HEADER, [record_s.row(), record_r.row()])
    header, rows = _trajectory_rows(config, states, controls)
    _write_csv(out / "trajectory.csv", header, rows)
    _plot_trajectory(
        out / "trajectory.svg", config, states, controls,
        "Optimal response, graph solver",
    )
    denom = max(abs(record_r.cost), 1e-30)
    gap = abs(record_s.cost - record_r.cost) / denom
    print(
        f"validate: sgopt cost {record_s.cost:.6f}, riccati cost "
        f"{record_r.cost:.6f}, relative gap {gap:.3e}"
    )
    if not (gap <= 1e-6 or abs(record_s.cost - record_r.cost) <= 1e-12):
        print("validate: solver costs disagree beyond 1e-6", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# scale
# ---------------------------------------------------------------------------


def _parse_range(text: str) -> List[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"range must look like a:b:step, got {text!r}")
    try:
        a, b, step = (float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"range values must be numeric: {text!r}") from exc
    if step <= 0 or b < a:
        raise ConfigError(f"range needs a <= b and positive step: {text!r}")
    values = []
    v = a
    while v <= b + 1e-9:
        values.append(round(v, 10))
        v += step
    return values


def _scale_config(mode: str, value: float, base: ProblemConfig | None) -> ProblemConfig:
    params = base.params if base is not None else None
    weights = base.weights if base is not None else None
    if mode == "n":
        n = int(round(value))
        if n < 1:
            raise ConfigError(f"chain size must be positive, got {value}")
        rho = 0.25
    else:
        n = 30
        rho = float(value)
        if not 0.0 < rho <= 1.0:
            raise ConfigError(f"actuation density must be in (0, 1], got {value}")
    return ProblemConfig.create(
        n, 10, rho=rho, params=params, weights=weights,
        x0=upright_state(n, tilt=math.radians(1.15)),
    )


def _scale_point(mode: str, value: float, base: ProblemConfig | None) -> List[ExperimentRecord]:
    """All solver rows of one sweep point; failures become error rows."""
    experiment = f"scale_{mode}"
    records: List[ExperimentRecord] = []
    try:
        config = _scale_config(mode, value, base)
    except SgoptError as exc:
        bad = ExperimentRecord(
            experiment=experiment, n=int(value) if mode == "n" else 30,
            m=0, t=10, ordering="none", solver="none",
            cost=float("nan"), runtime_s=0.0, build_s=0.0, max_p1=0, max_p2=0,
            status=f"error:{type(exc).__name__}",
        )
        return [bad]
    for ordering in ("structured", "mindegree"):
        try:
            record, _, _, _ = _run_sgopt(config, ordering, experiment)
        except SgoptError as exc:
            record = ExperimentRecord(
                experiment=experiment, n=config.n, m=config.m, t=config.horizon,
                ordering=ordering, solver="sgopt",
                cost=float("nan"), runtime_s=0.0, build_s=0.0, max_p1=0, max_p2=0,
                status=f"error:{type(exc).__name__}",
            )
        records.append(record)
    try:
        record, _ = _run_riccati(config, experiment)
    except SgoptError as exc:
        record = ExperimentRecord(
            experiment=experiment, n=config.n, m=config.m, t=config.horizon,
            ordering="none", solver="riccati",
            cost=float("nan"), runtime_s=0.0, build_s=0.0, max_p1=0, max_p2=0,
            status=f"error:{type(exc).__name__}",
        )
    records.append(record)
    return records


def _sweep_workers() -> int:
    raw = os.environ.get("SGOPT_THREADS", "").strip()
    if not raw:
        return 1
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"SGOPT_THREADS must be an integer, got {raw!r}")
    return max(1, workers)


def _plot_scale(out: Path, mode: str, records: List[ExperimentRecord]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x_of = (lambda r: r.n) if mode == "n" else (lambda r: r.m / r.n)
    series = {}
    for r in records:
        if r.status != "ok":
            continue
        label = r.solver if r.solver == "riccati" else f"sgopt/{r.ordering}"
        series.setdefault(label, []).append((x_of(r), r.runtime_s, r.cost))
    xlabel = "chain size N" if mode == "n" else "actuation density"

    for kind, idx in (("runtime", 1), ("cost", 2)):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for label, pts in series.items():
            pts = sorted(pts)
            ax.plot([p[0] for p in pts], [p[idx] for p in pts], marker="o", label=label)
        if mode == "n" and kind == "runtime":
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("solve time [s]" if kind == "runtime" else "objective value")
        ax.legend(loc="best", fontsize="small")
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        fig.savefig(out / f"scale_{mode}_{kind}.svg", format="svg")
        plt.close(fig)


def cmd_scale(args: argparse.Namespace) -> int:
    values = _parse_range(args.range)
    base = load_config(args.config) if args.config else None
    out = _ensure_out(args.out)
    workers = _sweep_workers()
    records: List[ExperimentRecord] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_scale_point, args.mode, v, base) for v in values]
            for future in futures:
                records.extend(future.result())
    else:
        for v in values:
            records.extend(_scale_point(args.mode, v, base))
    _write_csv(
        out / f"scale_{args.mode}.csv", RECORD_HEADER, [r.row() for r in records]
    )
    if args.svg:
        _plot_scale(out, args.mode, records)
    ok = sum(r.status == "ok" for r in records)
    print(f"scale: {ok}/{len(records)} solver runs succeeded over {len(values)} points")
    return 0 if ok > 0 else 1


# ---------------------------------------------------------------------------
# swingup
# ---------------------------------------------------------------------------


def _swingup_history_rows(history) -> List[List[str]]:
    return [
        [str(h.iteration), f"{h.damping:.9g}", f"{h.cost:.9g}", str(int(h.accepted))]
        for h in history
    ]


def cmd_swingup(args: argparse.Namespace) -> int:
    config = load_config(args.config if args.config else DEFAULT_SWINGUP)
    if config.horizon < 2:
        print("swingup: horizon below 2 leaves no controls to optimize", file=sys.stderr)
        return 2
    out = _ensure_out(args.out)
    history_header = ["iteration", "lambda", "cost", "accepted"]
    try:
        result = iterative_sgopt(config, ordering=args.ordering)
    except NoProgress as exc:
        _write_csv(
            out / "swingup.csv", history_header,
            _swingup_history_rows(getattr(exc, "history", [])),
        )
        print(f"swingup: no progress ({exc})", file=sys.stderr)
        return 1
    _write_csv(out / "swingup.csv", history_header, _swingup_history_rows(result.history))
    header, rows = _trajectory_rows(config, result.states, result.controls)
    _write_csv(out / "swingup_traj.csv", header, rows)
    _plot_trajectory(
        out / "swingup.svg", config, result.states, result.controls,
        "Swing-up trajectory, damped iterative solver",
    )
    final_angles = np.abs(result.states[-1, 2::4])
    print(
        f"swingup: {result.iterations} iterations, cost {result.cost:.4f}, "
        f"max final angle {final_angles.max():.4f} rad"
    )
    if bool(np.all(final_angles <= 0.05)):
        return 0
    print("swingup: final pendulum angles miss the upright tolerance", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _ensure_out(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON problem configuration")
    parser.add_argument("--out", default="sgopt_out", help="output directory")
    parser.add_argument(
        "--ordering", choices=("structured", "mindegree"), default="structured",
        help="elimination ordering for graph solves",
    )
    parser.add_argument(
        "--seed", type=int, default=None,
        help="seed for randomized experiments (current commands are deterministic)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgopt",
        description="Factor-graph optimal control of coupled cart-pole chains",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser(
        "validate", help="compare the graph solver against the dense regulator"
    )
    _add_common(p_validate)
    p_validate.set_defaults(func=cmd_validate)

    p_scale = sub.add_parser("scale", help="runtime scaling sweep")
    p_scale.add_argument("--mode", choices=("n", "rho"), required=True)
    p_scale.add_argument(
        "--range", required=True, help="sweep values a:b:step (inclusive)"
    )
    p_scale.add_argument(
        "--svg", action="store_true", help="render runtime and cost charts"
    )
    _add_common(p_scale)
    p_scale.set_defaults(func=cmd_scale)

    p_swing = sub.add_parser("swingup", help="nonlinear swing-up via the outer loop")
    _add_common(p_swing)
    p_swing.set_defaults(func=cmd_swingup)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

"""Experiment orchestration: repeated BO runs per case, summaries, field export, timing."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bo import AnalyticForward, BoConfig, BoTrace, PinnForward, read_trace, run_bo, target_function, write_trace
from .config import ExperimentConfig
from .pinn import TrainedField, eval_field, sample_collocation
from .field import save_params
from .wave import Snapshot, make_snapshot

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("case", "c_true", "best_g", "best_c", "mean_g", "std_g", "mean_c", "std_c")
CONVERGENCE_TOL = 0.005
SLICE_FRACTIONS = (0.25, 0.5, 0.75)


# -- seeds and labels -------------------------------------------------------------

def snapshot_seed(seed_base: int, c_true: float) -> int:
    """Noise seed for a case; depends on the case value only, not its position."""
    ss = np.random.SeedSequence([int(seed_base), int(round(c_true * 1e6))])
    return int(ss.generate_state(1)[0])


def case_label(c_true: float) -> str:
    return f"c{c_true:.4f}"


def accuracy(c_star: float, c_true: float) -> float:
    """Estimation accuracy in percent, 100 (1 - |c* - c_true| / c_true)."""
    return 100.0 * (1.0 - abs(c_star - c_true) / c_true)


def iterations_to_tolerance(trace: BoTrace, c_true: float, tol: float = CONVERGENCE_TOL):
    """1-based evaluation count at which the incumbent first lies within ``tol`` of c_true."""
    for i, c in enumerate(trace.incumbent_c):
        if abs(c - c_true) < tol:
            return i + 1
    return None


# -- forward models ----------------------------------------------------------------

def make_forward(cfg: ExperimentConfig, seed: int):
    """Forward model for one run; PINN init and collocation use the run seed."""
    if cfg.forward == "analytic":
        return AnalyticForward()
    colloc = sample_collocation(cfg.domain, cfg.pinn.n_f, cfg.pinn.n_0, cfg.pinn.n_b, seed=seed)
    return PinnForward(colloc, tuple(cfg.pinn.arch), cfg.lbfgs, seed=seed,
                       dropout_rate=cfg.pinn.dropout_rate, warm_start=cfg.pinn.warm_start)


# -- results -----------------------------------------------------------------------

@dataclass
class RunRecord:
    run: int
    seed: int
    g: float = math.nan
    c: float = math.nan
    wall_time: float = math.nan
    n_evaluations: int = 0
    n_iterations: int = 0
    iterations_to_tol: int | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class RunSummary:
    case_c_true: float
    best: tuple = (math.nan, math.nan)   # (g*, c*)
    mean_g: float = math.nan
    std_g: float = math.nan
    mean_c: float = math.nan
    std_c: float = math.nan
    per_run: list = field(default_factory=list)
    warning: str | None = None

    @property
    def completed(self):
        return [r for r in self.per_run if not r.failed]

    @property
    def best_accuracy(self) -> float:
        return accuracy(self.best[1], self.case_c_true)

    def row(self):
        return {
            "case": case_label(self.case_c_true),
            "c_true": self.case_c_true,
            "best_g": self.best[0],
            "best_c": self.best[1],
            "mean_g": self.mean_g,
            "std_g": self.std_g,
            "mean_c": self.mean_c,
            "std_c": self.std_c,
        }


def summarize(c_true: float, records) -> RunSummary:
    """Cross-run statistics over the completed runs (population std)."""
    records = list(records)
    done = [r for r in records if not r.failed]
    summary = RunSummary(c_true, per_run=records)
    n_failed = len(records) - len(done)
    if n_failed:
        summary.warning = f"{n_failed} of {len(records)} runs failed"
    if not done:
        return summary
    g = np.array([r.g for r in done])
    c = np.array([r.c for r in done])
    k = int(np.argmax(g))
    summary.best = (float(g[k]), float(c[k]))
    summary.mean_g, summary.std_g = float(g.mean()), float(g.std())
    summary.mean_c, summary.std_c = float(c.mean()), float(c.std())
    return summary


# -- running -----------------------------------------------------------------------

def case_snapshot(cfg: ExperimentConfig, c_true: float) -> Snapshot:
    s = cfg.snapshot
    return make_snapshot(c_true, s.t_obs, s.n_sensors, s.snr_db, snapshot_seed(cfg.seed_base, c_true), cfg.domain)


def run_case(cfg: ExperimentConfig, c_true: float, forward=None, write: bool = True) -> RunSummary:
    """``cfg.runs`` independent BO runs against one synthetic snapshot of ``c_true``.

    ``forward`` overrides the configured forward model for every run.
    """
    obs = case_snapshot(cfg, c_true)
    case_dir = cfg.out_dir / case_label(c_true)
    records = []
    for run in range(cfg.runs):
        seed = cfg.seed_base + run
        bo_cfg = replace(cfg.bo, seed=seed)
        rec = RunRecord(run, seed)
        fwd = forward if forward is not None else make_forward(cfg, seed)
        t0 = time.perf_counter()
        try:
            trace = run_bo(lambda c: target_function(c, obs, fwd), bo_cfg)
        except Exception as exc:  # a failed run must not sink the case
            rec.error = f"{type(exc).__name__}: {exc}"
            rec.wall_time = time.perf_counter() - t0
            log.warning("case %s run %d failed: %s", case_label(c_true), run, rec.error)
            records.append(rec)
            continue
        rec.wall_time = time.perf_counter() - t0
        rec.g, rec.c = trace.best
        rec.n_evaluations = trace.n_evaluations
        rec.n_iterations = len(trace)
        rec.iterations_to_tol = iterations_to_tolerance(trace, c_true)
        log.info("case %s run %d: c*=%.4f g*=%.3e (%.1fs)", case_label(c_true), run, rec.c, rec.g, rec.wall_time)
        if write:
            run_dir = case_dir / f"{run:02d}"
            write_trace(trace, run_dir / "trace.csv", {
                "c_true": repr(c_true), "run": run, "seed": seed,
                "snapshot_seed": obs.seed, "forward": cfg.forward, "scale": cfg.scale,
            })
            (run_dir / "timing.json").write_text(json.dumps({
                "wall_time": rec.wall_time, "n_evaluations": rec.n_evaluations,
                "n_iterations": rec.n_iterations, "iterations_to_tol": rec.iterations_to_tol,
            }, indent=2), encoding="utf-8")
        records.append(rec)
    return summarize(c_true, records)


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_summary_csv(summaries, path, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for k, v in (metadata or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            row = s.row()
            w.writerow([_fmt(row[k]) for k in SUMMARY_COLUMNS])
    return path


def read_summary_csv(path):
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        return [{k: (v if k == "case" else float(v)) for k, v in row.items()} for row in reader]


def render_table(summaries) -> str:
    """Fixed-width text table with the summary CSV columns."""
    widths = (9, 7, 12, 8, 12, 11, 8, 8)
    header = "  ".join(h.rjust(w) for h, w in zip(SUMMARY_COLUMNS, widths))
    lines = [header, "-" * len(header)]
    for s in summaries:
        r = s.row()
        cells = [r["case"], f"{r['c_true']:.4f}", f"{r['best_g']:.4e}", f"{r['best_c']:.4f}",
                 f"{r['mean_g']:.4e}", f"{r['std_g']:.3e}", f"{r['mean_c']:.4f}", f"{r['std_c']:.4f}"]
        lines.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


def summary_from_traces(out_dir, c_true: float) -> RunSummary:
    """Recompute a case summary from its per-run trace files."""
    records = []
    for i, path in enumerate(sorted((Path(out_dir) / case_label(c_true)).glob("*/trace.csv"))):
        trace = read_trace(path)
        g, c = trace.best
        records.append(RunRecord(i, i, g, c))
    return summarize(c_true, records)


def _config_metadata(cfg: ExperimentConfig) -> dict:
    return {"scale": cfg.scale, "forward": cfg.forward, "runs": cfg.runs, "seed_base": cfg.seed_base,
            "snr_db": cfg.snapshot.snr_db, "n_init": cfg.bo.n_init, "n_iters": cfg.bo.n_iters,
            "kappa": cfg.bo.kappa}


def run_all(cfg: ExperimentConfig):
    """Run every case; writes summary.csv and summary.txt. Returns (summaries, table)."""
    summaries = [run_case(cfg, c) for c in cfg.cases]
    table = render_table(summaries)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(summaries, out / "summary.csv", _config_metadata(cfg))
    lines = [table, ""]
    for s in summaries:
        if s.completed:
            lines.append(f"{case_label(s.case_c_true)}: best-optimal accuracy {s.best_accuracy:.2f}%")
        if s.warning:
            lines.append(f"{case_label(s.case_c_true)}: WARNING {s.warning}")
    report = timing_report(summaries, cfg.bo)
    if report.cases:
        lines += ["", report.render()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return summaries, table


# -- timing ------------------------------------------------------------------------

def grid_points(decimals: int, bounds=(0.1, 1.0)) -> int:
    """Points of the inclusive uniform grid with step 10^-decimals over ``bounds``."""
    lo, hi = bounds
    return int(round((hi - lo) * 10**decimals)) + 1


@dataclass
class TimingReport:
    cases: list = field(default_factory=list)   # dicts per case
    grid_search: dict = field(default_factory=dict)
    bo_evaluations: int | None = None

    def render(self) -> str:
        if not self.cases:
            return ""
        lines = ["timing"]
        for c in self.cases:
            its = c["iterations_to_tol"]
            shown = ", ".join("-" if i is None else str(i) for i in its)
            lines.append(f"  {c['case']}: mean {c['mean_iteration_time']:.3f} s/evaluation, "
                         f"evaluations to |c-c_true|<{CONVERGENCE_TOL}: [{shown}]")
        lines.append(f"  BO evaluations per run: {self.bo_evaluations}")
        for d, g in self.grid_search.items():
            lines.append(f"  grid search, {d} decimals: {g['inclusive']} points "
                         f"(quoted as {g['quoted']}; the inclusive grid includes both ends)")
        return "\n".join(lines)


def timing_report(summaries, bo: BoConfig | None = None) -> TimingReport:
    summaries = list(summaries)
    if not summaries:
        return TimingReport()
    bo = bo or BoConfig()
    cases = []
    for s in summaries:
        done = s.completed
        total_time = sum(r.wall_time for r in done)
        total_evals = sum(max(r.n_iterations, 1) for r in done)
        cases.append({
            "case": case_label(s.case_c_true),
            "mean_iteration_time": total_time / total_evals if done else math.nan,
            "iterations_to_tol": [r.iterations_to_tol for r in done],
        })
    grid = {d: {"inclusive": grid_points(d, bo.bounds), "quoted": grid_points(d, bo.bounds) - 1} for d in (2, 3)}
    return TimingReport(cases, grid, bo.n_init + bo.n_iters)


# -- field export ------------------------------------------------------------------

def _slice_name(frac: float) -> str:
    return f"slice_t{frac:g}T.csv"


def export_field(trained: TrainedField, grid=(101, 101), out_dir="field") -> Path:
    """Write u on an n_x x n_t grid plus time slices at 0.25, 0.5, 0.75 T.

    Returns the path of the grid file ``field.csv`` (columns x, t, u; x varies
    fastest). Parameters are saved next to it.
    """
    n_x, n_t = map(int, grid)
    if n_x < 2 or n_t < 2:
        raise ValueError("grid needs at least 2 points per axis")
    out = Path(out_dir)
    dom = trained.domain
    xs = np.linspace(0.0, dom.L, n_x)
    ts = np.linspace(0.0, dom.T, n_t)
    meta = {"c": repr(trained.c), "L": repr(dom.L), "T": repr(dom.T), "n_x": n_x, "n_t": n_t,
            "seed": trained.seed, "colloc_seed": trained.colloc_seed}
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "field.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            for k, v in meta.items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["x", "t", "u"])
            for t in ts:
                u = eval_field(trained, xs, float(t))
                for x, ui in zip(xs, u):
                    w.writerow([repr(float(x)), repr(float(t)), repr(float(ui))])
        for frac in SLICE_FRACTIONS:
            t = frac * dom.T
            u = eval_field(trained, xs, t)
            with (out / _slice_name(frac)).open("w", newline="", encoding="utf-8") as fh:
                for k, v in {**meta, "t": repr(t)}.items():
                    fh.write(f"# {k}={v}\n")
                w = csv.writer(fh)
                w.writerow(["x", "u"])
                for x, ui in zip(xs, u):
                    w.writerow([repr(float(x)), repr(float(ui))])
        save_params(trained.params, out / "params.npy", trained.metadata())
    except OSError as exc:
        raise OSError(f"cannot write field export to {out}: {exc}") from exc
    return path


def load_field_csv(path):
    """Columns of a field or slice CSV as a dict of float arrays."""
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    header, body = rows[0], np.array(rows[1:], dtype=np.float64)
    return {name: body[:, i] for i, name in enumerate(header)}


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)

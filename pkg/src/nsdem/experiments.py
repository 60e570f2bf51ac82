"""Built-in scenarios, random packing and CSV output for the benchmark runs.

Scenarios
---------
``ball_on_plane``
    One sphere of radius 5e-3 m resting on a floor with an initial
    horizontal velocity of 1.5 m/s, mu = 0.7, dt = 1e-4 s.
``sediment4``
    Four balls with radii in [4e-4, 5e-4] m settling in a square column of
    width 2.2e-3 m, mu = 0.3, dt = 1e-4 s.
``sediment500``
    500 balls with radii in [2.5e-4, 5e-4] m in a 1.2e-2 m wide column,
    mu = 0.3, dt = 5e-5 s.

Unstated physical values default to glass beads (density 2500 kg/m^3),
perfectly plastic impacts (e_n = e_t = 0) and g = 9.81 m/s^2.  Each may be
overridden.  Random packings use numpy's PCG64 bit generator, seeded with
the scenario seed, so they reproduce across platforms.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nlgs import METHODS, SolverConfig, run
from .scene import Body, Material, Scene, Wall

SCENARIOS = ("ball_on_plane", "sediment4", "sediment500")

TRACE_HEADER = ["time_step", "nlgs_iter", "eps_motion", "eps_proj", "eps_bipo", "eps_pen",
                "eps_glob", "newton_iters"]
SUMMARY_HEADER = ["method", "steps", "nlgs_last", "eps_glob_last", "max_penetration_last",
                  "total_nlgs", "wall_time_s", "converged"]
SWEEP_HEADER = ["method", "alpha", "steps", "nlgs_last", "total_nlgs", "max_penetration_last",
                "wall_time_s", "converged"]

_DEFAULTS = {
    "ball_on_plane": dict(dt=1e-4, mu=0.7, eps_glob=1e-10, max_nlgs=5000, steps=2000,
                          n_balls=1, r_min=5e-3, r_max=5e-3, width=None, height=None),
    "sediment4": dict(dt=1e-4, mu=0.3, eps_glob=1e-10, max_nlgs=5000, steps=1000,
                      n_balls=4, r_min=4e-4, r_max=5e-4, width=2.2e-3, height=4e-3),
    "sediment500": dict(dt=5e-5, mu=0.3, eps_glob=1e-12, max_nlgs=5000, steps=500,
                        n_balls=500, r_min=2.5e-4, r_max=5e-4, width=1.2e-2, height=4e-3),
}


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


class PackingError(RuntimeError):
    pass


@dataclass
class ScenarioSpec:
    """A named scenario plus optional overrides.

    Fields left at ``None`` take the scenario's default.  ``width`` is the
    column width and ``height`` the top of the region where balls are
    dropped from.
    """

    name: str
    dimension: int = 3
    dt: float | None = None
    mu: float | None = None
    eps_glob: float | None = None
    max_nlgs: int | None = None
    steps: int | None = None
    seed: int = 1
    n_balls: int | None = None
    r_min: float | None = None
    r_max: float | None = None
    width: float | None = None
    height: float | None = None
    density: float = 2500.0
    e_n: float = 0.0
    e_t: float = 0.0
    gravity: float = 9.81
    velocity: float = 1.5

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}; expected one of {', '.join(SCENARIOS)}")
        if self.dimension not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        for key, value in _DEFAULTS[self.name].items():
            if getattr(self, key) is None:
                setattr(self, key, value)


def pack_initial(n, r_min, r_max, box, seed, gap=1e-6, max_attempts=1_000_000):
    """Random non-overlapping balls inside an axis-aligned box.

    ``box`` holds the box extents, one per axis, with the lower corner at
    the origin.  The last axis is vertical.  Radii are uniform in
    ``[r_min, r_max]``.  Centers are uniform over the positions that keep a
    ball at least ``gap`` away from every box face, and each ball is
    accepted only if its surface gap to every placed ball exceeds ``gap``.

    Returns
    -------
    positions : ndarray, shape (n, d)
    radii : ndarray, shape (n,)
    """
    box = np.asarray(box, dtype=np.float64)
    d = box.shape[0]
    rng = np.random.Generator(np.random.PCG64(seed))
    radii = rng.uniform(r_min, r_max, size=n) if r_max > r_min else np.full(n, float(r_min))
    pos = np.empty((n, d))
    attempts = 0
    for i in range(n):
        lo = radii[i] + gap
        hi = box - radii[i] - gap
        if np.any(hi < lo):
            raise PackingError(f"a ball of radius {radii[i]:.3g} does not fit in the box; enlarge it")
        while True:
            if attempts >= max_attempts:
                raise PackingError(
                    f"placed {i} of {n} balls in {max_attempts} attempts; use a larger box")
            attempts += 1
            p = lo + rng.random(d) * (hi - lo)
            if i == 0:
                break
            dist = np.sqrt(((pos[:i] - p) ** 2).sum(axis=1))
            if np.all(dist - radii[:i] - radii[i] > gap):
                break
        pos[i] = p
    return pos, radii


def build_scenario(spec: ScenarioSpec) -> Scene:
    """Scene for a named scenario with the ScenarioSpec overrides applied."""
    d = spec.dimension
    mat = Material("glass", spec.mu, spec.e_n, spec.e_t, spec.density)
    gravity = (0.0,) * (d - 1) + (-spec.gravity,)
    up = (0.0,) * (d - 1) + (1.0,)
    walls = [Wall(mat, up, 0.0)]

    if spec.name == "ball_on_plane":
        R = spec.r_min
        pos = (0.0,) * (d - 1) + (R,)
        vel = (spec.velocity,) + (0.0,) * (d - 1)
        bodies = [Body(mat, R, pos, vel, d)]
    else:
        L = spec.width
        box = (L,) * (d - 1) + (spec.height,)
        positions, radii = pack_initial(spec.n_balls, spec.r_min, spec.r_max, box, spec.seed)
        bodies = [Body(mat, float(r), tuple(float(c) for c in p), (0.0,) * d, d)
                  for p, r in zip(positions, radii)]
        for axis in range(d - 1):
            e = [0.0] * d
            e[axis] = 1.0
            walls.append(Wall(mat, tuple(e), 0.0))
            e[axis] = -1.0
            walls.append(Wall(mat, tuple(e), -L))
    return Scene(dimension=d, bodies=tuple(bodies), walls=tuple(walls), gravity=gravity,
                 dt=spec.dt, materials=(mat,))


@dataclass
class SummaryRow:
    """One line of the method-comparison table.

    ``max_penetration_last`` is the interpenetration produced during the
    last step, ``dt * max(-u_tilde_n)`` over its contacts (m).  The largest
    end-of-step overlap, which also carries the impact history, is kept in
    ``max_overlap_last``.
    """

    method: str
    steps: int
    nlgs_last: int
    eps_glob_last: float
    max_penetration_last: float
    total_nlgs: int
    wall_time_s: float
    converged: bool
    max_overlap_last: float = 0.0
    unconverged_steps: int = 0
    alpha: float = float("nan")

    def csv_values(self):
        return [_fmt(getattr(self, k)) for k in SUMMARY_HEADER]


@dataclass
class ExperimentResult:
    row: SummaryRow
    state: object
    reports: list = field(repr=False, default_factory=list)


def solver_config(spec: ScenarioSpec, method, **overrides) -> SolverConfig:
    kw = dict(method=method, eps_glob=spec.eps_glob, max_nlgs=spec.max_nlgs)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return SolverConfig(**kw)


def simulate(scene: Scene, config: SolverConfig, steps: int, keep_reports=True, callback=None):
    """Run a scene and summarize it.

    ``callback(k, state, report)`` is forwarded to :func:`nsdem.nlgs.run`.
    With ``keep_reports=False`` only the last report is retained.
    """
    t0 = time.perf_counter()
    total = 0
    unconverged = 0
    last = None
    kept = []

    def watch(k, state, rep):
        nonlocal total, unconverged, last
        total += rep.nlgs_iterations
        unconverged += not rep.converged
        last = rep
        if keep_reports:
            kept.append(rep)
        if callback is not None:
            callback(k, state, rep)

    state, _ = run(scene, config, steps, callback=watch, keep_reports=False)
    wall = time.perf_counter() - t0
    if last is None:
        row = SummaryRow(config.method, 0, 0, 0.0, 0.0, 0, wall, True, alpha=config.alpha)
    else:
        row = SummaryRow(config.method, steps, last.nlgs_iterations, last.eps_glob_final,
                         scene.dt * last.max_eps_pen, total, wall, last.converged,
                         max_overlap_last=last.max_penetration, unconverged_steps=unconverged,
                         alpha=config.alpha)
    return ExperimentResult(row, state, kept if keep_reports else [last])


def run_experiment(spec: ScenarioSpec, methods=METHODS, out_dir=None, **overrides):
    """Run each method on the same scene.

    When ``out_dir`` is given, writes ``summary.csv`` and one
    ``trace_<method>.csv`` per method with the last step's per-iteration
    error terms.

    Returns
    -------
    list of ExperimentResult
    """
    scene = build_scenario(spec)
    results = []
    for m in methods:
        cfg = solver_config(spec, m, **overrides)
        results.append(simulate(scene, cfg, spec.steps))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_summary(out / "summary.csv", [r.row for r in results])
        for r in results:
            write_trace(out / f"trace_{r.row.method.lower()}.csv", r.reports[-1], spec.steps - 1)
    return results


def rho_sweep(spec: ScenarioSpec, method, alphas, n_steps=None, jobs=1, **overrides):
    """One run per descent factor ``alpha`` from identical initial conditions.

    Only the final step report is retained per run.  With ``jobs > 1`` the
    runs are spread over worker processes; rows stay in ``alphas`` order.
    """
    steps = spec.steps if n_steps is None else n_steps
    scene = build_scenario(spec)
    cells = [(scene, solver_config(spec, method, alpha=float(a), **overrides), steps)
             for a in alphas]
    if jobs and jobs > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    return rows


def _sweep_cell(cell):
    scene, cfg, steps = cell
    return simulate(scene, cfg, steps, keep_reports=False).row


# ---------------------------------------------------------------------------
# CSV


def _write_table(dest, header, lines):
    # dest is a path or an open text stream
    if hasattr(dest, "write"):
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(header)
        w.writerows(lines)
        return
    with open(dest, "w", newline="") as fh:
        _write_table(fh, header, lines)


def write_summary(dest, rows):
    _write_table(dest, SUMMARY_HEADER, [row.csv_values() for row in rows])


def write_sweep(dest, rows):
    _write_table(dest, SWEEP_HEADER, [[_fmt(getattr(row, k)) for k in SWEEP_HEADER]
                                      for row in rows])


def trace_rows(report, time_step):
    tr = report.eps_terms_trace
    for i in range(report.nlgs_iterations):
        yield [time_step, i + 1, *tr[i], int(report.newton_iterations[i])]


def write_trace(path, report, time_step):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for values in trace_rows(report, time_step):
            w.writerow([_fmt(v) for v in values])


def write_positions(path, states):
    """One row per (step, body): step, body, then the generalized coordinates."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        first = states[0][1]
        ncol = first.q.shape[1]
        w.writerow(["time_step", "body"] + [f"q{k}" for k in range(ncol)])
        for k, st in states:
            for i, row in enumerate(st.q):
                w.writerow([k, i] + [_fmt(float(v)) for v in row])


__all__ = [
    "SCENARIOS", "ScenarioSpec", "SummaryRow", "ExperimentResult", "PackingError",
    "build_scenario", "pack_initial", "run_experiment", "rho_sweep", "simulate",
    "solver_config", "write_summary", "write_sweep", "write_trace", "write_positions",
]

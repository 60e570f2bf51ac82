import csv
import io
import math

import numpy as np
import pytest

from nsdem.cli import main
from nsdem.experiments import (SUMMARY_HEADER, SWEEP_HEADER, TRACE_HEADER, PackingError,
                               ScenarioSpec, SummaryRow, _fmt, build_scenario, pack_initial,
                               rho_sweep, run_experiment, write_summary)
from nsdem.scene import load_scene


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_ball_on_plane_scene():
    s = build_scenario(ScenarioSpec("ball_on_plane"))
    (b,) = s.bodies
    assert b.radius == 5e-3 and b.position == (0.0, 0.0, 5e-3)
    assert b.velocity == (1.5, 0.0, 0.0)
    assert b.material.mu == 0.7 and s.dt == 1e-4
    assert ScenarioSpec("ball_on_plane").eps_glob == 1e-10


def test_sediment_scenes():
    spec = ScenarioSpec("sediment4")
    s = build_scenario(spec)
    assert s.n_bodies == 4 and spec.eps_glob == 1e-10 and spec.max_nlgs == 5000
    x = np.array([b.position for b in s.bodies])
    r = np.array([b.radius for b in s.bodies])
    assert ((r >= 4e-4) & (r <= 5e-4)).all()
    assert (x[:, 2] - r > 0).all()
    for i in range(4):
        for j in range(i):
            assert np.linalg.norm(x[i] - x[j]) - r[i] - r[j] > 0
    assert len(s.walls) == 5
    spec5 = ScenarioSpec("sediment500")
    assert spec5.dt == 5e-5 and spec5.eps_glob == 1e-12 and spec5.n_balls == 500


def test_unknown_scenario():
    with pytest.raises(ValueError):
        ScenarioSpec("pyramid")


def test_pack_single_ball():
    pos, r = pack_initial(1, 1e-3, 1e-3, (1e-2, 1e-2, 1e-2), seed=3)
    assert pos.shape == (1, 3)
    assert (pos - r[0] > 0).all() and (pos + r[0] < 1e-2).all()


def test_pack_deterministic():
    a = pack_initial(4, 4e-4, 5e-4, (2.2e-3, 2.2e-3, 4e-3), seed=7)
    b = pack_initial(4, 4e-4, 5e-4, (2.2e-3, 2.2e-3, 4e-3), seed=7)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    c = pack_initial(4, 4e-4, 5e-4, (2.2e-3, 2.2e-3, 4e-3), seed=8)
    assert not np.array_equal(a[0], c[0])


def test_pack_500_default_box():
    spec = ScenarioSpec("sediment500")
    pos, r = pack_initial(500, spec.r_min, spec.r_max, (spec.width, spec.width, spec.height),
                          spec.seed)
    # O(n^2) overlap oracle
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2))
    gap = dist - r[:, None] - r[None, :]
    np.fill_diagonal(gap, np.inf)
    assert gap.min() > 1e-6
    assert (pos - r[:, None] > 1e-6).all()
    assert (pos[:, :2] + r[:, None] < spec.width - 1e-6).all()


def test_pack_failure_advises_larger_box():
    with pytest.raises(PackingError, match="larger box"):
        pack_initial(50, 1e-3, 1e-3, (5e-3, 5e-3, 5e-3), seed=1, max_attempts=2000)


def test_fmt_round_trips():
    for x in (0.1, 1 / 3, 1e-300, -2.5e-17, math.pi, 5 / 7 * 1.5):
        assert float(_fmt(x)) == x
    assert _fmt(True) == "true" and _fmt(3) == "3"


def test_summary_header_and_values(tmp_path):
    row = SummaryRow("EBP", 10, 1, 1 / 3, 2 / 3, 12, 0.5, True)
    p = tmp_path / "s.csv"
    write_summary(p, [row])
    rows = read_csv(p)
    assert rows[0] == SUMMARY_HEADER
    assert float(rows[1][3]) == 1 / 3 and rows[1][-1] == "true"
    assert ",".join(SUMMARY_HEADER) == (
        "method,steps,nlgs_last,eps_glob_last,max_penetration_last,total_nlgs,wall_time_s,converged")
    assert ",".join(TRACE_HEADER) == (
        "time_step,nlgs_iter,eps_motion,eps_proj,eps_bipo,eps_pen,eps_glob,newton_iters")


def _strip_wall_time(rows):
    k = rows[0].index("wall_time_s")
    return [r[:k] + r[k + 1:] for r in rows]


def test_experiment_outputs_reproducible(tmp_path):
    spec = ScenarioSpec("sediment4", steps=30)
    run_experiment(spec, ["EBP", "SAL"], tmp_path / "a")
    run_experiment(spec, ["EBP", "SAL"], tmp_path / "b")
    for name in ("trace_ebp.csv", "trace_sal.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    sa = read_csv(tmp_path / "a" / "summary.csv")
    sb = read_csv(tmp_path / "b" / "summary.csv")
    assert _strip_wall_time(sa) == _strip_wall_time(sb)
    trace = read_csv(tmp_path / "a" / "trace_ebp.csv")
    assert trace[0] == TRACE_HEADER
    assert all(r[0] == "29" for r in trace[1:])


def test_rho_sweep_single_alpha():
    rows = rho_sweep(ScenarioSpec("sediment4"), "EBP", [1.0], n_steps=5)
    assert len(rows) == 1 and rows[0].alpha == 1.0 and rows[0].steps == 5


def test_rho_sweep_parallel_matches_serial():
    spec = ScenarioSpec("sediment4")
    a = rho_sweep(spec, "SAL", [0.5, 1.0], n_steps=40, jobs=1)
    b = rho_sweep(spec, "SAL", [0.5, 1.0], n_steps=40, jobs=2)
    for x, y in zip(a, b):
        assert (x.alpha, x.total_nlgs, x.max_penetration_last) == (y.alpha, y.total_nlgs,
                                                                   y.max_penetration_last)


# ---------------------------------------------------------------------------
# CLI


def test_cli_run_scenario(tmp_path, capsys):
    args = ["run", "--scenario", "ball_on_plane", "--solver", "eal", "--steps", "20",
            "--trace-out", str(tmp_path / "t.csv"), "--summary-out", str(tmp_path / "s.csv"),
            "--positions-out", str(tmp_path / "p.csv")]
    assert main(args) == 0
    summary = read_csv(tmp_path / "s.csv")
    assert summary[0] == SUMMARY_HEADER and summary[1][0] == "EAL" and summary[1][1] == "20"
    assert read_csv(tmp_path / "t.csv")[0] == TRACE_HEADER
    pos = read_csv(tmp_path / "p.csv")
    assert len(pos) == 1 + 21


def test_cli_run_scene_file(tmp_path, capsys):
    p = tmp_path / "x.scene"
    p.write_text("""scene v1
dim 2
dt 1e-3
gravity 0 -9.81
material m mu 0.5 en 0 et 0 density 1000
disk m r 0.01 pos 0 0.0099
plane m n 0 1 offset 0
""")
    assert main(["run", "--scene", str(p), "--solver", "SBP", "--steps", "3", "--alpha", "0.5"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == ",".join(SUMMARY_HEADER) and out[1].startswith("SBP,3,")
    assert load_scene(p).dimension == 2


def test_cli_sweep(tmp_path, capsys):
    out = tmp_path / "sw.csv"
    assert main(["sweep", "--scenario", "sediment4", "--solver", "ebp", "--alphas", "1,2",
                 "--steps", "3", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == SWEEP_HEADER and [r[1] for r in rows[1:]] == ["1", "2"]


@pytest.mark.parametrize("argv", [
    ["run", "--scenario", "nope", "--solver", "ebp"],
    ["run", "--scenario", "ball_on_plane", "--solver", "xyz"],
    ["run", "--scene", "/nonexistent/file", "--solver", "ebp"],
    ["run", "--scenario", "ball_on_plane", "--solver", "ebp", "--alpha", "-1"],
    ["sweep", "--scenario", "sediment4", "--solver", "ebp", "--alphas", "a,b"],
    ["run", "--solver", "ebp"],
])
def test_cli_input_errors(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code != 0


def test_cli_bad_scene_file(tmp_path, capsys):
    p = tmp_path / "bad.scene"
    p.write_text("scene v1\ndim 3\ndt 1e-4\nsphere nomat r 1 pos 0 0 0\n")
    assert main(["run", "--scene", str(p), "--solver", "ebp"]) == 2
    assert "line 4" in capsys.readouterr().err


def test_cli_unconverged_still_exits_zero(capsys):
    assert main(["run", "--scenario", "ball_on_plane", "--solver", "sbp", "--steps", "2",
                 "--max-nlgs", "1", "--eps-glob", "1e-30"]) == 0
    assert capsys.readouterr().out.splitlines()[1].endswith(",false")

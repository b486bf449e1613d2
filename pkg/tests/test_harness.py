import csv
import json
import math

import pytest

from canard import cli
from canard.errors import ParseError, ValidationError
from canard.harness import (
    SCHEMA_VERSION,
    bundled_examples,
    cmd_classify,
    config_from_dict,
    load_config,
)

from conftest import CANONICAL, example_dict

MINIMAL = {
    "coefficients": {"A": 1, "B": 1, "C": -1, "D": -1, "E": -1, "F": 1},
    "window": {"T": 1, "x0": 0.5, "y0": 0.5},
    "epsilons": [0.1, 0.05],
}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return p


def variant(base, **changes):
    doc = json.loads(json.dumps(base))
    for path, value in changes.items():
        node = doc
        *head, last = path.split("__")
        for key in head:
            node = node[key]
        if value is None:
            node.pop(last, None)
        else:
            node[last] = value
    return doc


def run(tmp_path, command, doc, *extra):
    cfg = write(tmp_path, doc)
    out = tmp_path / "out"
    code = cli.main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def read_json(path):
    return json.loads(path.read_text())


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


# -- config ------------------------------------------------------------------------


def test_minimal_config_gets_defaults(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    assert cfg.theta == 0.5 and cfg.delta == 0.05 and cfg.eta == 0.02
    assert cfg.window.t0 == 0 and cfg.window.M == 10 and cfg.window.N == 10
    assert cfg.epsilon is None and cfg.sandwich_epsilon == 0.02
    assert cfg.solver.rel_tol == 1e-8


def test_eta_default_tracks_curvature():
    cfg = config_from_dict(variant(MINIMAL, coefficients__E=-4.0))
    assert cfg.eta == pytest.approx(0.05 / 8)


@pytest.mark.parametrize("changes,field", [
    (dict(epsilons=[0.01, 0.05]), "epsilons"),
    (dict(epsilons=[]), "epsilons"),
    (dict(epsilons=[0.5]), "epsilons"),
    (dict(coefficients__A=0), "A"),
    (dict(coefficients__F=None), "F"),
    (dict(coefficients__B="1"), "B"),
    (dict(window__T=None), "T"),
    (dict(window__x0=-1.0), "window"),
    (dict(theta=1.5), "theta"),
    (dict(eta=0.5), "eta"),
    (dict(epsilon=0.0), "epsilon"),
    (dict(solver={"rel_tol": -1}), "solver"),
    (dict(solver={"bogus": 1}), "solver.bogus"),
    (dict(colour="red"), "colour"),
    (dict(workers=0), "workers"),
])
def test_validation_names_the_field(changes, field):
    with pytest.raises(ValidationError) as exc:
        config_from_dict(variant(MINIMAL, **changes))
    assert exc.value.field == field


def test_parse_error_reports_line(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_config(write(tmp_path, '{\n  "coefficients": {\n    "A": ,\n'))
    assert exc.value.line == 3
    assert ":3:" in str(exc.value)


def test_bundled_examples_all_load():
    names = set(bundled_examples())
    assert set(CANONICAL) | {"immediate_p2"} == names
    for path in bundled_examples().values():
        load_config(path)


# -- commands ----------------------------------------------------------------------


def test_classify_p1(tmp_path, capsys):
    code, out = run(tmp_path, "classify", example_dict("fast_predator_a"))
    assert code == 0
    assert capsys.readouterr().out.strip() == "Case1b / DelayedAtTStar / FastPredatorA"
    doc = read_json(out / "classify.json")
    assert doc["schema"] == SCHEMA_VERSION and doc["config"]["theta"] == 0.5
    assert doc["label"]["canonical_form"] == "FastPredatorA"


def test_classify_p2(tmp_path, capsys):
    assert run(tmp_path, "classify", example_dict("immediate_p2"))[0] == 0
    assert capsys.readouterr().out.strip() == "Case2b / ImmediateAtTc"


def test_classify_psi_outside_quadrant(tmp_path, capsys):
    code, _ = run(tmp_path, "classify", variant(MINIMAL, coefficients__F=-1.0))
    assert code == 0
    assert capsys.readouterr().out.strip() == "NotInQuadrant / NoSwitch"


def test_classify_degenerate_exits_2(tmp_path):
    code, out = run(tmp_path, "classify", variant(MINIMAL, window__x0=1.0))
    assert code == 2
    assert read_json(out / "classify.json")["label"] is None


def test_analyze_p1(tmp_path):
    code, out = run(tmp_path, "analyze", example_dict("fast_predator_a"))
    assert code == 0
    doc = read_json(out / "analysis.json")
    assert doc["t_c"] == pytest.approx(math.log(1.5), abs=1e-8)
    assert doc["t_star"] == pytest.approx(math.log(2), abs=1e-8)
    assert doc["G_min"] == pytest.approx(-0.117783, abs=1e-6)
    assert doc["blowup_time"] == pytest.approx(math.log(3))
    rows = read_csv(out / "g_profile.csv")
    assert rows[0] == ["t", "G"] and len(rows) - 1 == 1003
    ts = [float(r[0]) for r in rows[1:]]
    assert ts == sorted(ts)


def test_analyze_p2_has_no_exit_time(tmp_path):
    code, out = run(tmp_path, "analyze", example_dict("immediate_p2"))
    assert code == 0
    doc = read_json(out / "analysis.json")
    assert doc["t_c"] == pytest.approx(3.0, abs=1e-12)
    assert "t_star" not in doc
    assert not (out / "g_profile.csv").exists()


def test_analyze_no_switch(tmp_path):
    code, out = run(tmp_path, "analyze", variant(MINIMAL, coefficients__F=-1.0))
    assert code == 0
    doc = read_json(out / "analysis.json")
    assert doc["t_c"] is None and doc["t_star"] is None and doc["reason"]


def test_analyze_exit_after_window(tmp_path):
    code, out = run(tmp_path, "analyze", variant(MINIMAL, window__T=0.6))
    assert code == 3
    doc = read_json(out / "analysis.json")
    assert doc["t_star"] is None and doc["t_c"] == pytest.approx(math.log(1.5))
    assert "NoExitBeforeT" in doc["reason"]


def test_simulate_writes_both_files(tmp_path):
    code, out = run(tmp_path, "simulate", example_dict("fast_predator_a"))
    assert code == 0
    traj = read_csv(out / "trajectory.csv")
    comp = read_csv(out / "composite.csv")
    assert traj[0] == ["t", "x", "y", "w"] and comp[0] == ["t", "x_lim", "y_lim"]
    assert len(comp) - 1 == 1001
    t = [float(r[0]) for r in traj[1:]]
    y = [float(r[2]) for r in traj[1:]]
    assert t[-1] == 1.0
    # y sinks between t_c and t*, then climbs back toward phi(x) = x - 1
    mid = min(v for s, v in zip(t, y) if 0.45 < s < 0.65)
    assert mid < 0.02 and y[-1] > 1.0


def test_simulate_flag_overrides_config(tmp_path):
    code, out = run(tmp_path, "simulate", MINIMAL, "--epsilon", "0.1")
    assert code == 0
    assert read_json(out / "simulate.json")["epsilon"] == 0.1


def test_simulate_without_epsilon_is_usage_error(tmp_path):
    code, out = run(tmp_path, "simulate", MINIMAL)
    assert code == 1 and not out.exists()


def test_simulate_p2_decays_after_crossing(tmp_path):
    code, out = run(tmp_path, "simulate", example_dict("immediate_p2"))
    assert code == 0
    rows = [list(map(float, r)) for r in read_csv(out / "trajectory.csv")[1:]]
    early = [r for r in rows if 1.0 < r[0] < 2.0]
    late = [r for r in rows if r[0] > 4.0]
    # tracks phi(x) = 1 - 2x before, decays after
    assert all(abs(r[2] - (1 - 2 * r[1])) < 0.05 for r in early)
    assert max(r[2] for r in late) < 0.01


def test_sweep_outputs(tmp_path):
    code, out = run(tmp_path, "sweep", example_dict("fast_predator_a"))
    assert code == 0
    rows = read_csv(out / "convergence.csv")
    assert rows[0] == ["epsilon", "t_sw", "predicted", "abs_error"]
    assert [float(r[0]) for r in rows[1:]] == [0.1, 0.05, 0.02, 0.01, 0.005]
    doc = read_json(out / "sweep.json")
    assert doc["summary"]["trend_ok"] is True
    assert len(doc["observations"]) == 5


def test_sweep_without_switch_fails(tmp_path):
    code, out = run(tmp_path, "sweep", variant(MINIMAL, coefficients__F=-1.0))
    assert code == 3 and read_json(out / "sweep.json")["reason"]


def test_verify_p1_passes(tmp_path):
    code, out = run(tmp_path, "verify", example_dict("fast_predator_a"))
    assert code == 0
    doc = read_json(out / "verdict.json")
    assert doc["verdict"] == "pass" and doc["failures"] == []
    statuses = {c["name"]: c["status"] for c in doc["checks"]}
    assert statuses == {
        "classification": "pass", "assumptions": "pass", "oracle_crossing_bisection": "pass",
        "oracle_G_quadrature": "pass", "oracle_exit_residual": "pass", "sandwich": "pass",
    }
    assert doc["sandwich"]["lower_violations"] == 0
    assert doc["sweep"]["summary"]["trend_ok"] is True


def test_verify_flipped_e_lists_a9(tmp_path):
    code, out = run(tmp_path, "verify", variant(example_dict("fast_predator_a"), coefficients__E=1.0))
    assert code == 3
    assert "a9" in read_json(out / "verdict.json")["assumptions"]["failures"]


def test_verify_short_window_lists_a8(tmp_path):
    code, out = run(tmp_path, "verify", variant(example_dict("fast_predator_a"), window__T=0.6))
    assert code == 3
    doc = read_json(out / "verdict.json")
    assert doc["assumptions"]["failures"] == ["a8"]
    a8 = next(e for e in doc["assumptions"]["entries"] if e["name"] == "a8")
    assert a8["status"] == "fail" and a8["witness"] is None
    assert doc["t_star"] is None


@pytest.mark.parametrize("name", CANONICAL + ("immediate_p2",))
def test_verify_bundled(tmp_path, name):
    assert run(tmp_path, "verify", example_dict(name))[0] == 0


@pytest.mark.parametrize("command", ["classify", "analyze", "simulate", "sweep", "verify"])
def test_outputs_are_byte_identical_across_runs(tmp_path, command):
    cfg = write(tmp_path, example_dict("fast_predator_a"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main([command, "--config", str(cfg), "--out", str(a)]) == 0
    assert cli.main([command, "--config", str(cfg), "--out", str(b)]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_csv_float_format(tmp_path):
    _, out = run(tmp_path, "sweep", example_dict("fast_predator_a"))
    raw = (out / "convergence.csv").read_bytes()
    assert b"\r" not in raw
    first = raw.decode().splitlines()[1].split(",")
    assert first[0] == "0.10000000000000001"
    assert all(float(format(float(v), ".17g")) == float(v) for v in first)


def test_every_json_has_schema_and_echo(tmp_path):
    for command in ("classify", "analyze", "simulate", "sweep", "verify"):
        _, out = run(tmp_path, command, example_dict("immediate_p2"))
        for p in out.glob("*.json"):
            doc = read_json(p)
            assert doc["schema"] == SCHEMA_VERSION and doc["version"]
            assert doc["config"]["coefficients"]["F"] == -2.0


# -- CLI robustness ------------------------------------------------------------------


@pytest.mark.parametrize("argv", [
    [], ["frobnicate"], ["classify"], ["classify", "--config"],
])
def test_bad_arguments_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 1


def test_missing_and_malformed_files_exit_1(tmp_path):
    assert cli.main(["classify", "--config", str(tmp_path / "nope.json")]) == 1
    assert cli.main(["classify", "--config", str(write(tmp_path, "[1, 2"))]) == 1
    assert cli.main(["classify", "--config", str(write(tmp_path, "[1, 2]"))]) == 1


def test_epsilon_flag_only_for_simulate(tmp_path):
    assert run(tmp_path, "classify", MINIMAL, "--epsilon", "0.1")[0] == 1


def test_bundled_name_resolves(tmp_path, capsys):
    assert cli.main(["classify", "--config", "fast_prey_b", "--out", str(tmp_path)]) == 0
    assert "FastPreyB" in capsys.readouterr().out


def test_command_function_result_is_pure():
    from conftest import example_config

    cfg = example_config("fast_predator_a")
    assert cmd_classify(cfg).outputs == cmd_classify(cfg).outputs

import csv
import json
import math

import pytest

from concentrate.cli import load_scenario, main, parse_scenario, validate_scenario
from concentrate.errors import ParseError

BASE = """\
problem.n = 2
problem.k = 1
problem.p = 3
geometry.instance = circle
geometry.radius = 1.0
geometry.grid = 8
potential.model = constant
run.eps = 0.3, 0.5773502691896258, 1.2
"""


def write(tmp_path, text, name="sc.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, command, text, *extra, sub="out"):
    path = write(tmp_path, text)
    return main([command, "--scenario", path, "--out", str(tmp_path / sub), *extra])


# ---- parsing ----------------------------------------------------------------------------
def test_parse_defaults_and_types():
    sc = parse_scenario(BASE, environ={})
    assert sc["problem.n"] == 2 and sc["problem.p"] == 3.0
    assert sc["run.eps"] == [0.3, 0.5773502691896258, 1.2]
    assert sc["run.I"] == 3 and sc["run.delta"] == "auto"
    assert sc["geometry.period"] == pytest.approx(2 * math.pi)


def test_comments_and_blank_lines_are_ignored():
    sc = parse_scenario("# header\n\n" + BASE.replace("problem.p = 3", "problem.p = 3  # cubic"),
                        environ={})
    assert sc["problem.p"] == 3.0


def test_missing_equals_reports_line_and_column():
    with pytest.raises(ParseError) as info:
        parse_scenario("problem.n = 2\n  problem.p 3\n", "s.txt", environ={})
    assert "s.txt:2:3" in str(info.value)
    assert info.value.diagnostic["line"] == 2 and info.value.diagnostic["column"] == 3


def test_unknown_key_reports_location():
    with pytest.raises(ParseError) as info:
        parse_scenario(BASE + "run.colour = red\n", "s.txt", environ={})
    assert "s.txt:9:1" in str(info.value) and "run.colour" in str(info.value)


def test_bad_value_points_at_the_value():
    with pytest.raises(ParseError) as info:
        parse_scenario(BASE.replace("problem.p = 3", "problem.p = x3"), "s.txt", environ={})
    assert "s.txt:3:13" in str(info.value)


def test_missing_required_key_is_named():
    with pytest.raises(ParseError) as info:
        parse_scenario(BASE.replace("problem.p = 3\n", ""), environ={})
    assert "problem.p" in str(info.value)
    assert info.value.diagnostic["key"] == "problem.p"


@pytest.mark.parametrize("text", ["geometry.grid = 0", "run.lambda = -1", "run.eps = ,"])
def test_out_of_range_values_are_rejected(text):
    with pytest.raises(ParseError):
        parse_scenario(BASE + text + "\n", environ={})


def test_environment_overrides_file():
    sc = parse_scenario(BASE, environ={"CONC_RUN_I": "2", "CONC_PROBLEM_P": "2.5"})
    assert sc["run.I"] == 2 and sc["problem.p"] == 2.5
    with pytest.raises(ParseError, match="CONC_RUN_I"):
        parse_scenario(BASE, environ={"CONC_RUN_I": "two"})


def test_load_scenario_reads_file(tmp_path):
    assert load_scenario(write(tmp_path, BASE), environ={})["geometry.radius"] == 1.0


# ---- validation ---------------------------------------------------------------------------
def test_validate_reports_sigma_and_margin():
    rep = validate_scenario(parse_scenario(BASE, environ={}))
    assert rep["accepted"] and rep["N"] == 1
    assert rep["sigma"] == pytest.approx(1.5)
    assert math.isinf(rep["critical_exponent"])


def test_validate_accepts_three_dimensional_subcritical():
    rep = validate_scenario(parse_scenario(BASE.replace("problem.n = 2", "problem.n = 3")
                                           .replace("problem.p = 3", "problem.p = 5"), environ={}))
    assert rep["accepted"] and rep["N"] == 2


@pytest.mark.parametrize("edit,needle", [
    (("problem.n = 2", "problem.n = 5"), "N = 4"),
    (("problem.k = 1", "problem.k = 2"), "k = 2"),
    (("problem.p = 3", "problem.p = 1"), "p must exceed 1"),
    (("potential.model = constant", "potential.model = cubic"), "potential model"),
])
def test_validate_rejections(edit, needle):
    rep = validate_scenario(parse_scenario(BASE.replace(*edit), environ={}))
    assert not rep["accepted"] and any(needle in r for r in rep["reasons"])


def test_validate_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "validate", BASE) == 0
    assert run(tmp_path, "validate", BASE.replace("problem.n = 2", "problem.n = 5")) == 2
    assert "N = 4" in capsys.readouterr().out
    rep = json.loads((tmp_path / "out" / "validate.json").read_text())
    assert rep["accepted"] is False


def test_rejected_scenario_blocks_other_commands(tmp_path):
    assert run(tmp_path, "ground-state", BASE.replace("problem.n = 2", "problem.n = 5")) == 2


def test_parse_error_exit_code(tmp_path, capsys):
    assert run(tmp_path, "validate", BASE.replace("problem.p = 3\n", "")) == 1
    assert "problem.p" in capsys.readouterr().err


def test_missing_scenario_argument():
    assert main(["validate"]) == 1


def test_positional_scenario_and_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv("CONC_OUT", str(tmp_path / "envout"))
    from concentrate.cli import build_parser
    args = build_parser().parse_args(["validate", write(tmp_path, BASE)])
    assert args.out == str(tmp_path / "envout")
    assert main(["validate", write(tmp_path, BASE), "--out", args.out]) == 0
    assert (tmp_path / "envout" / "validate.json").exists()


# ---- commands -----------------------------------------------------------------------------
def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_ground_state_center_value(tmp_path):
    assert run(tmp_path, "ground-state", BASE) == 0
    row = read_csv(tmp_path / "out" / "ground_state_summary.csv")[0]
    assert float(row["w(0)"]) == pytest.approx(math.sqrt(2), abs=1e-6)


def test_spectrum_negative_eigenvalue(tmp_path):
    assert run(tmp_path, "spectrum", BASE) == 0
    rep = json.loads((tmp_path / "out" / "spectrum.json").read_text())
    assert rep["lambda0"] == pytest.approx(-3.0, abs=1e-6)


def test_gap_scan_flags_resonance(tmp_path):
    assert run(tmp_path, "gap-scan", BASE) == 0
    rows = read_csv(tmp_path / "out" / "gap_scan.csv")
    verdict = {float(r["epsilon"]): r["admissible"] for r in rows}
    assert verdict[0.5773502691896258] == "0"
    assert verdict[0.3] == "1" and verdict[1.2] == "1"
    rep = json.loads((tmp_path / "out" / "gap_scan.json").read_text())
    assert rep["resonances"][:3] == pytest.approx([math.sqrt(3) / l for l in (1, 2, 3)], rel=1e-6)


def test_geometry_check_and_jacobi(tmp_path):
    assert run(tmp_path, "geometry-check", BASE) == 0
    assert run(tmp_path, "jacobi", BASE) == 0
    rep = json.loads((tmp_path / "out" / "jacobi.json").read_text())
    assert max(rep["form_rel_errors"]) < 1e-8


def test_stationary_exit_code(tmp_path):
    gauss = BASE.replace("potential.model = constant", "potential.model = gaussian")
    assert run(tmp_path, "stationary", gauss.replace("geometry.radius = 1.0",
                                                    "geometry.radius = stationary")) == 0
    assert run(tmp_path, "stationary", gauss, sub="off") == 2


def test_outputs_are_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run(tmp_path, "gap-scan", BASE, "--threads", "2", sub=sub) == 0
        assert run(tmp_path, "jacobi", BASE, "--seed", "7", sub=sub) == 0
    for name in ("gap_scan.csv", "jacobi.csv", "jacobi.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


FLAT = """\
problem.n = 2
problem.p = 3
geometry.instance = line
geometry.grid = 8
potential.model = constant
run.I = 2
run.eps = 0.05
"""


def test_solve_flat_writes_manifest(tmp_path):
    assert run(tmp_path, "solve", FLAT) == 0
    out = tmp_path / "out"
    man = json.loads((out / "manifest.json").read_text())
    assert man["scenario"] == "sc"
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["converged"] and rep["positive"]
    assert (out / "fixedpoint_trace.csv").exists() and (out / "solution_on_curve.csv").exists()


def test_solve_resonant_eps_exits_two(tmp_path):
    res = FLAT.replace("run.eps = 0.05", f"run.eps = {math.sqrt(3) / 2!r}")
    assert run(tmp_path, "solve", res) == 2


def test_figures_are_rendered(tmp_path):
    pytest.importorskip("matplotlib")
    assert run(tmp_path, "gap-scan", BASE, "--figures") == 0
    assert (tmp_path / "out" / "gap_scan.png").exists()

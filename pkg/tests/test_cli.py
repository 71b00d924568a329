import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from alam import files
from alam.cli import RunConfig, main
from alam.errors import InputError
from alam.geometry import UNIT_SQUARE, PiecewiseConstantField
from alam.operator import Operator, builtin_operator


def _construct(tmp_path, name="lam.json", n=4):
    out = tmp_path / name
    code = main(["construct", "--operator", "div2", "--a", "0,1", "--b", "0,-1",
                 "--lambda", "0.5", "--n", str(n), "--out", str(out)])
    return code, out


def test_cone_example(capsys):
    assert main(["cone", "--operator", "sys4", "--lambda", "1,1,1,-1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("member=true")
    w = np.array([float(x) for x in out[1].split()[1].split(",")])
    assert np.allclose(np.abs(w), [2 ** -0.5, 2 ** -0.5])
    assert main(["cone", "--operator", "sys4", "--lambda", "1,0,1,0"]) == 0
    assert capsys.readouterr().out.startswith("member=false")


def test_construct_writes_field_and_manifest(tmp_path, capsys):
    code, out = _construct(tmp_path, n=100)
    assert code == 0
    assert "a=0.475 b=0.475 corners=0.05" in capsys.readouterr().out
    fld = files.load_field(out)
    assert len(fld.cells) == 6 * 100
    man = json.loads((tmp_path / "lam.manifest.json").read_text())
    assert man["passed"] is True
    assert man["config"]["schedule"]["n"] == 100
    assert abs(man["summary"]["fractions"]["corners"] - 0.05) < 1e-12


def test_construct_is_deterministic(tmp_path):
    _construct(tmp_path, "one.json")
    _construct(tmp_path, "two.json")
    assert (tmp_path / "one.json").read_bytes() == (tmp_path / "two.json").read_bytes()
    one = json.loads((tmp_path / "one.manifest.json").read_text())
    two = json.loads((tmp_path / "two.manifest.json").read_text())
    one["config"]["out"] = two["config"]["out"] = None
    assert one == two


def test_export_svg(tmp_path):
    _, field = _construct(tmp_path)
    svg = tmp_path / "lam.svg"
    assert main(["export-svg", "--field", str(field), "--out", str(svg)]) == 0
    text = svg.read_text()
    # one path per cell plus the domain outline
    assert text.count('<path fill="#') == 24
    assert text.count("<path ") == 25
    again = tmp_path / "again.svg"
    main(["export-svg", "--field", str(field), "--out", str(again)])
    assert again.read_bytes() == svg.read_bytes()


def test_export_svg_errors(tmp_path):
    _, field = _construct(tmp_path)
    assert main(["export-svg", "--field", str(field), "--component", "5",
                 "--out", str(tmp_path / "x.svg")]) == 2
    empty = PiecewiseConstantField(UNIT_SQUARE, [], np.zeros(2))
    with pytest.raises(InputError):
        files.field_svg(empty)


def test_bad_input_exit_code(tmp_path, capsys):
    assert main(["cone", "--operator", "div2", "--lambda", "1,2,3"]) == 2
    assert main(["cone", "--operator", "nope", "--lambda", "1,2"]) == 2
    assert main(["solve", "--problem", str(tmp_path / "missing.json")]) == 2
    assert main(["construct", "--operator", "div2", "--a", "0,1", "--b", "0,-1",
                 "--lambda", "0.3"]) == 2
    assert "error:" in capsys.readouterr().err


def test_verification_failure_exit_code(tmp_path):
    bad = PiecewiseConstantField.constant(UNIT_SQUARE, [1.0, 0.0], [0.0, 0.0])
    path = files.write_json(tmp_path / "bad.json", bad.to_dict())
    assert main(["verify", "--field", str(path), "--operator", "div2"]) == 1
    _, good = _construct(tmp_path)
    assert main(["verify", "--field", str(good), "--operator", "div2"]) == 0


def test_solve_circle_fixture(tmp_path):
    out = tmp_path / "sol.json"
    assert main(["solve", "--problem", "circle", "--dist-tol", "0.2", "--out", str(out)]) == 0
    man = json.loads((tmp_path / "sol.manifest.json").read_text())
    assert man["summary"]["dist_integral"] <= 0.2


def test_hull_command(tmp_path):
    out = tmp_path / "cloud.json"
    assert main(["hull", "--operator", "div2", "--points", "0,1;0,-1", "--depth", "1",
                 "--t-grid", "5", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["points"]) == 5


def test_run_config_rejects_unknown_keys():
    with pytest.raises(InputError):
        RunConfig("construct", tolerances={"tol_magic": 1.0})
    with pytest.raises(InputError):
        RunConfig("dance")


def test_fixtures_load():
    fx = files.fixtures()
    div2 = fx["div2"]
    assert (div2.n_space, div2.d_state, div2.m_eq) == (2, 2, 1)
    for name in files.FIXTURE_OPERATORS:
        assert fx[name].same_as(builtin_operator(name))
    assert np.array_equal(fx["circle"].xi, [0.5, 0.0])


def test_json_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    mats = rng.standard_normal((2, 2, 4)) * 10.0 ** rng.integers(-20, 20, size=(2, 2, 4))
    op = Operator.from_matrices(mats, name="random")
    path = files.write_json(tmp_path / "op.json", op.to_dict())
    again = files.load_operator(str(path))
    assert np.array_equal(np.asarray(again.matrices), np.asarray(op.matrices))
    assert files.dumps(again.to_dict()) == path.read_text()


def test_json_parse_error_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n "xi": [0, 1],\n "E_points": [[0, 1]\n}\n')
    with pytest.raises(InputError, match="line 4 column 1"):
        files.read_json(path)


@pytest.mark.skipif(shutil.which("alam") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["alam", "cone", "--operator", "div2", "--lambda", "0.3,-0.8"],
                         capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 0 and res.stdout.startswith("member=true")
    res = subprocess.run([sys.executable, "-m", "alam.cli", "cone", "--operator", "div2",
                          "--lambda", "x"], capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 2

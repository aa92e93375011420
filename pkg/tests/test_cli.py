import csv

import pytest

from cwchain.cli import main, parse_field, parse_grid, parse_window
from cwchain.errors import ValidationError


def run(argv, tmp_path, name="out.csv"):
    path = tmp_path / name
    code = main([*argv, "--out", str(path)])
    return code, path.read_text() if path.exists() else ""


def rows(text):
    return [r for r in csv.reader(line for line in text.splitlines() if not line.startswith("#"))]


def test_selftest_passes(tmp_path):
    code, text = run(["selftest"], tmp_path)
    assert code == 0
    body = rows(text)
    assert body[0] == ["check", "pass", "error"]
    assert all(r[1] == "1" for r in body[1:])


def test_profile_kink_and_header(tmp_path):
    code, text = run(["profile", "--J", "1.1", "--L", "25", "--w", "1", "--window", "g0=0.5,g1=0.25",
                      "--m", "0"], tmp_path)
    assert code == 0
    head = [l for l in text.splitlines() if l.startswith("#")]
    assert any(l.startswith("# model ") for l in head)
    assert any("precision=30" in l for l in head)
    body = rows(text)
    assert body[0] == ["z", "m_z", "m_z_continuum", "residual"]
    data = body[1:]
    assert len(data) == 51
    assert float(data[0][1]) < 0 < float(data[-1][1])
    assert max(abs(float(r[1]) - float(r[2])) for r in data[5:-5]) < 0.05


def test_output_is_byte_identical(tmp_path):
    argv = ["isotherm", "--J", "1.4", "--L", "10", "--m-grid=-0.2:0.2:0.1", "--format", "tsv"]
    _, a = run(argv, tmp_path, "a.tsv")
    _, b = run(argv, tmp_path, "b.tsv")
    assert a == b
    body = [l.split("\t") for l in a.splitlines() if not l.startswith("#")]
    assert body[0] == ["m", "h", "h_single_system", "converged"]
    assert len(body) == 6


def test_subcritical_isotherm_matches_single_system(tmp_path):
    code, text = run(["isotherm", "--J", "0.8", "--L", "10", "--m-grid=-0.5:0.5:0.25"], tmp_path)
    assert code == 0
    for r in rows(text)[1:]:
        assert abs(float(r[1]) - float(r[2])) < 1e-11
        assert r[3] == "1"


def test_free_energy_columns(tmp_path):
    code, text = run(["free-energy", "--J", "1.4", "--L", "10", "--m-grid=-0.2:0.2:0.2"], tmp_path)
    assert code == 0
    assert rows(text)[0] == ["m", "F_per_site", "F_kink_minus_const", "envelope"]


def test_numbers_capped_at_forty_digits(tmp_path):
    _, text = run(["profile", "--J", "1.4", "--L", "10", "--precision", "60", "--m", "0.1"], tmp_path)
    mantissa = rows(text)[1][1].split("e")[0].lstrip("-").replace(".", "")
    assert len(mantissa) == 40


@pytest.mark.parametrize("argv,code", [
    (["profile", "--J", "-1"], 2),
    (["profile", "--precision", "10"], 2),
    (["profile", "--window", "g0=-1"], 2),
    (["profile", "--delta", "1e-40"], 4),
    (["profile", "--max-iters", "3", "--method", "picard"], 3),
    (["table2", "--w-list", "4", "--precision", "20"], 4),
    (["profile", "--J=abc"], 2),
    (["profile", "--theta=q"], 2),
    (["profile", "--field=-0.1,x:0.5,0.5"], 2),
])
def test_exit_codes(tmp_path, capsys, argv, code):
    assert main([*argv, "--out", str(tmp_path / "x.csv")]) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("cwchain: error:")


def test_unwritable_output(tmp_path):
    assert main(["selftest", "--out", str(tmp_path / "missing" / "x.csv")]) == 2


def test_env_precision(tmp_path, monkeypatch):
    monkeypatch.setenv("CWCHAIN_PRECISION", "35")
    _, text = run(["profile", "--J", "1.4", "--L", "10"], tmp_path)
    assert "precision=35" in text


def test_model_file(tmp_path):
    f = tmp_path / "model.txt"
    f.write_text("J = 1.4\nL = 10\nw = 1\nwindow.kind = uniform\n")
    code, _ = run(["profile", "--model", str(f)], tmp_path)
    assert code == 0
    assert main(["profile", "--model", str(f), "--J", "1.2", "--out", str(tmp_path / "y")]) == 2


def test_parsers():
    assert parse_window("uniform", 3) == ("uniform", 3, None)
    kind, w, table = parse_window("g0=0.5,g1=0.25", None)
    assert (kind, w, table) == ("tabulated", 1, ["0.5", "0.25"])
    with pytest.raises(ValidationError):
        parse_window("g0=1,g2=x", None)
    assert parse_field("-0.1,0.1:0.5,0.5") == (["-0.1", "0.1"], ["0.5", "0.5"])
    assert [float(x) for x in parse_grid("-0.5:0.5:0.25")] == [-0.5, -0.25, 0.0, 0.25, 0.5]
    with pytest.raises(ValidationError):
        parse_grid("0:1")

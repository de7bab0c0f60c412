import csv

import pytest

from xqclme.cli import build_parser, main


def _err(capsys):
    return capsys.readouterr().err.strip().splitlines()[-1]


def test_invalid_spacing_exits_with_code_two(capsys):
    assert main(["solve-qc", "--h", "7"]) == 2
    line = _err(capsys)
    assert line.startswith("error: code=2 kind=ConfigError")
    assert "256" in line


def test_unknown_example(capsys):
    assert main(["solve-full", "--example", "hexagon"]) == 2
    assert "kind=ConfigError" in _err(capsys)


def test_config_file_and_overrides(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\nh = 9\n")
    assert main(["solve-qc", "--config", str(ini)]) == 2
    assert main(["solve-qc", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["optimize-gamma", "--mode", "pattern", "--no-enrich", "--h", "7"]) == 2


def test_no_enrich_needs_nonuniform(tmp_path, capsys):
    assert main(["optimize-gamma", "--mode", "uniform", "--no-enrich",
                 "-o", str(tmp_path)]) == 2
    assert "nonuniform" in _err(capsys)


def test_parser_lists_commands():
    p = build_parser()
    for cmd in ("solve-full", "solve-qc", "optimize-gamma", "bench", "report"):
        assert p.parse_args([cmd]).command == cmd
    with pytest.raises(SystemExit):
        p.parse_args(["optimize-gamma", "--mode", "fancy"])


def test_report_pivots_sweeps(tmp_path, capsys):
    sweep = tmp_path / "sweep"
    sweep.mkdir()
    rows = [["example", "scheme", "h", "n_dof", "eps_u", "wall_s"],
            ["circle", "linear-H", "16", "646", "0.01", ""],
            ["circle", "linear-H", "8", "2314", "0.002", ""],
            ["circle", "lme-uniform-H", "16", "726", "0.001", ""]]
    with open(sweep / "sweep_summary.csv", "w", newline="") as fh:
        fh.write("# header\n")
        csv.writer(fh).writerows(rows)
    (sweep / "gamma_circle_lme-uniform-H_16.csv").write_text(
        "# header\nrepatom_id,x,y,psi,gamma,enriched_flag\n0,0.0,0.0,1.0,1.5,0\n")
    out = tmp_path / "rep"
    assert main(["report", str(sweep), "-o", str(out)]) == 0
    text = (out / "table_eps_u.csv").read_text().splitlines()
    assert "example,scheme,16,8" in text
    assert "circle,lme-uniform-H,0.001,--" in text
    assert "circle,lme-uniform-H,1.5" in (out / "table_uniform_gamma.csv").read_text()
    assert main(["report", str(tmp_path / "nothing")]) == 2

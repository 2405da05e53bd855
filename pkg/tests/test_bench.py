import json

import pytest
from hypothesis import given, settings, strategies as st

from symamg.bench import PreconditionerSpec, emit_report, load_config, parse_csv, run_experiment
from symamg.bench.cli import main
from symamg.bench.config import parse_config, preset_names
from symamg.bench.report import COLUMNS, ReportRow

SMALL = """
[experiment]
name = small
seed = 3

[problem]
kind = mirrored
sizes = 8
s = 1

[preconditioners]
amg
amgr power_k=2
lrcfsai k=0
lrcfsai k=2
"""

finite = st.floats(allow_nan=False, allow_infinity=False)
rows_strategy = st.lists(st.builds(
    ReportRow, preconditioner=st.sampled_from(["AMG", "AMGR", "LRCFSAI(4)"]),
    method=st.sampled_from(["pcg", "gmres"]), s=st.none() | st.integers(0, 3), n_b=st.integers(1, 8),
    n=st.integers(1, 10**6), coarsening_ratio=st.none() | finite, avg_nnzr=st.none() | finite,
    iterations=st.integers(0, 2000), converged=st.booleans(), t_setup_seconds=finite, t_sol_seconds=finite,
    speedup_vs_baseline=finite), max_size=5)


def row(**kw):
    base = dict(preconditioner="AMG", method="pcg", s=1, n_b=2, n=32768, coarsening_ratio=0.477,
                avg_nnzr=18.76, iterations=10, converged=True, t_setup_seconds=0.5, t_sol_seconds=0.25,
                speedup_vs_baseline=1.0)
    base.update(kw)
    return ReportRow(**base)


def test_empty_rows_header_only():
    text = emit_report([], "csv")
    assert text == ",".join(COLUMNS) + "\r\n"
    assert parse_csv(text) == []


def test_one_row_two_lines():
    assert len(emit_report([row()], "csv").splitlines()) == 2


@settings(max_examples=50, deadline=None)
@given(rows_strategy)
def test_csv_round_trip_matches_json(rows):
    text = emit_report(rows, "csv")
    assert emit_report(parse_csv(text), "json") == emit_report(rows, "json")


def test_table_format():
    text = emit_report([row(), row(preconditioner="AMGR", coarsening_ratio=None, converged=False)], "table")
    lines = text.splitlines()
    assert lines[0].startswith("preconditioner")
    assert set(lines[1]) <= {"-", " "}
    assert "NO" in lines[3] and " - " in lines[3]


def test_bad_format():
    with pytest.raises(ValueError):
        emit_report([], "xml")


def test_spec_labels():
    assert PreconditionerSpec.parse("lrcfsai k=4 eig_tol=1e-6").label == "LRCFSAI(4)"
    assert PreconditionerSpec.parse("amgs k=16").label == "AMGS(16)"
    assert PreconditionerSpec.parse("amg").label == "AMG"
    with pytest.raises(ValueError):
        PreconditionerSpec.parse("ilu")
    with pytest.raises(ValueError):
        PreconditionerSpec.parse("amgr power_k")


def test_parse_config_repeated_names():
    cfg = parse_config(SMALL)
    assert [p.label for p in cfg.preconditioners] == ["AMG", "AMGR", "LRCFSAI(0)", "LRCFSAI(2)"]
    assert cfg.problem.cases == (1,) and cfg.problem.sizes == (8,) and cfg.seed == 3


def test_config_errors():
    with pytest.raises(ValueError):
        parse_config("[problem]\nsizes = 8\n")
    with pytest.raises(ValueError):
        parse_config("[experiment]\nmethod = bicg\n[problem]\nsizes = 8\n[preconditioners]\namg\n")
    with pytest.raises(FileNotFoundError):
        load_config("no-such-preset")


def test_presets_load():
    names = preset_names()
    assert {"table21", "table22", "table31", "table32", "table53-chain"} <= set(names)
    for n in names:
        load_config(n)
    t21 = load_config("table21")
    assert len(t21.preconditioners) == 7 and t21.problem.cases == (0, 1, 2, 3)


def test_run_small_and_deterministic():
    cfg = parse_config(SMALL)
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert [r.iterations for r in a] == [r.iterations for r in b]
    assert len(a) == 4 and all(r.converged for r in a)
    assert a[0].speedup_vs_baseline == 1.0
    assert [r.method for r in a] == ["pcg"] * 4
    assert a[0].coarsening_ratio is not None and a[2].coarsening_ratio is None


def test_auto_method_picks_gmres_for_nonsymmetric():
    cfg = parse_config(SMALL.replace("amgr power_k=2\nlrcfsai k=0\nlrcfsai k=2", "lrcamg k=1\namgs k=0"))
    rows = run_experiment(cfg)
    assert [r.method for r in rows] == ["pcg", "gmres", "gmres"]


def test_repeated_rejects_mirrored_only():
    text = SMALL.replace("kind = mirrored", "kind = repeated").replace("s = 1", "n_b = 2")
    with pytest.raises(ValueError, match="mirrored"):
        run_experiment(parse_config(text))


def test_cli(tmp_path, capsys):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL)
    out = tmp_path / "r.json"
    assert main(["run", str(cfg), "--format", "json", "--out", str(out), "--threads", "1"]) == 0
    data = json.loads(out.read_text())
    assert [d["preconditioner"] for d in data] == ["AMG", "AMGR", "LRCFSAI(0)", "LRCFSAI(2)"]
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    capsys.readouterr()
    assert main(["presets"]) == 0
    assert "table32" in capsys.readouterr().out


def test_cli_nonconvergence_exit_code(tmp_path, capsys):
    cfg = tmp_path / "fail.ini"
    cfg.write_text(SMALL.replace("seed = 3", "seed = 3\nmax_iterations = 2"))
    assert main(["run", str(cfg), "--format", "csv"]) == 1
    captured = capsys.readouterr()
    assert "did not converge" in captured.err
    assert "false" in captured.out

"""End-to-end tests of the command line front end."""

import json
import math

import pytest

from surfspec.cli import (
    ConfigError,
    build_objects,
    load_config,
    main,
    run,
    validate_config,
)
from surfspec.verify import recompute_pass


def base_config(tmp_path):
    return {
        "spec_version": 1,
        "metric": {"family": "euclidean"},
        "distance_function": "x",
        "domain": {
            "shape": "rectangle",
            "extents": [0.0, math.pi, 0.0, math.pi],
            "resolution": 8,
        },
        "checks": ["inequality"],
        "check_params": {"inequality": {"levels": 2}},
        "output": {"report": str(tmp_path / "report.json")},
    }


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def helicoid_config(tmp_path):
    cfg = base_config(tmp_path)
    cfg["metric"] = {
        "family": "warped",
        "params": {
            "phi": "sqrt(r^2 + c^2)",
            "constants": {"c": 1.0},
            "r_range": [-1.5, 1.5],
        },
    }
    cfg["distance_function"] = "r"
    cfg["domain"] = {
        "shape": "periodic_band",
        "extents": [-1.5, 1.5],
        "resolution": 8,
    }
    cfg["checks"] = ["curvature"]
    return cfg


# ---------------------------------------------------------------------------
# config validation (exit code 2, messages name the field)


def test_missing_metric_block(tmp_path, capsys):
    cfg = base_config(tmp_path)
    del cfg["metric"]
    code = main(["run", write_config(tmp_path, cfg)])
    assert code == 2
    assert "'metric' is a required property" in capsys.readouterr().err


def test_nested_field_named(tmp_path, capsys):
    cfg = base_config(tmp_path)
    cfg["domain"]["resolution"] = 1
    code = main(["run", write_config(tmp_path, cfg)])
    assert code == 2
    assert "domain/resolution" in capsys.readouterr().err


def test_unknown_check_rejected(tmp_path, capsys):
    cfg = base_config(tmp_path)
    cfg["checks"] = ["inequality", "bogus"]
    code = main(["run", write_config(tmp_path, cfg)])
    assert code == 2
    assert "checks" in capsys.readouterr().err


def test_nonpositive_warp_names_sample(tmp_path, capsys):
    cfg = helicoid_config(tmp_path)
    cfg["metric"]["params"] = {"phi": "r", "r_range": [0.0, 1.0]}
    code = main(["run", write_config(tmp_path, cfg)])
    assert code == 2
    err = capsys.readouterr().err
    assert "metric" in err and "phi(0" in err


def test_distance_function_required_by_lemma(tmp_path, capsys):
    cfg = base_config(tmp_path)
    del cfg["distance_function"]
    cfg["checks"] = ["lemma"]
    code = main(["run", write_config(tmp_path, cfg)])
    assert code == 2
    assert "distance_function" in capsys.readouterr().err


def test_extent_count_mismatch(tmp_path, capsys):
    cfg = base_config(tmp_path)
    cfg["domain"] = {"shape": "disk", "extents": [0.0, 1.0], "resolution": 4}
    cfg["checks"] = ["hodge-dims"]
    code = main(["run", write_config(tmp_path, cfg)])
    assert code == 2
    assert "domain/extents" in capsys.readouterr().err


def test_unreadable_config(capsys):
    assert main(["run", "/nonexistent/config.json"]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_bad_expression_rejected(tmp_path, capsys):
    cfg = base_config(tmp_path)
    cfg["distance_function"] = "x +"
    code = main(["run", write_config(tmp_path, cfg)])
    assert code == 2
    assert "distance_function" in capsys.readouterr().err


def test_unknown_distance_variable_rejected(tmp_path):
    cfg = validate_config(base_config(tmp_path))
    cfg["distance_function"] = "z"
    with pytest.raises(ConfigError, match="distance_function"):
        build_objects(cfg)


def test_resolved_config_revalidates(tmp_path):
    resolved = validate_config(base_config(tmp_path))
    again = validate_config(resolved)
    assert again == resolved


# ---------------------------------------------------------------------------
# run command


def test_flat_square_run_passes(tmp_path, capsys):
    cfg = base_config(tmp_path)
    cfg["checks"] = ["inequality", "hodge-dims", "curvature", "oracle"]
    code = main(["run", write_config(tmp_path, cfg)])
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4

    report = json.loads((tmp_path / "report.json").read_text())
    assert report["spec_version"] == 1
    assert [c["check"] for c in report["checks"]] == [
        "inequality", "hodge-dimension", "curvature", "oracle",
    ]
    margin = report["checks"][0]["quantities"]["extrapolated_margin"]
    assert margin == pytest.approx(1.0, abs=0.05)
    assert report["config"]["solver"]["seed"] == 42
    for check in report["checks"]:
        assert recompute_pass(check) == check["passed"]


def test_helicoid_curvature_run_fails(tmp_path):
    cfg = helicoid_config(tmp_path)
    code = main(["run", write_config(tmp_path, cfg)])
    assert code == 1
    report = json.loads((tmp_path / "report.json").read_text())
    q = report["checks"][0]["quantities"]["curvature"]
    assert q["min_margin"] < 0
    assert abs(q["min_point"][0]) == pytest.approx(1.5)


def test_reports_byte_identical_excluding_metadata(tmp_path):
    cfg = base_config(tmp_path)
    cfg["checks"] = ["inequality", "union", "oracle"]
    cfg["check_params"]["union"] = {"count": 6}

    def stripped(report):
        payload = {k: v for k, v in report.items() if k != "metadata"}
        return json.dumps(payload, indent=2, sort_keys=True)

    first, code1 = run(cfg)
    second, code2 = run(json.loads(json.dumps(cfg)), parallel=True)
    assert code1 == code2 == 0
    assert stripped(first) == stripped(second)
    assert "generated_at" in first["metadata"]
    assert "wall_time" not in stripped(first)


def test_run_csv_tables_round_trip(tmp_path):
    cfg = base_config(tmp_path)
    cfg["checks"] = ["union"]
    cfg["check_params"] = {"union": {"count": 5}}
    code = main([
        "run", write_config(tmp_path, cfg), "--csv-dir", str(tmp_path / "t"),
    ])
    assert code == 0
    lines = (tmp_path / "t" / "spectrum_union.csv").read_text().splitlines()
    assert lines[0] == "index,oneform,scalar_union"
    assert len(lines) == 6
    for line in lines[1:]:
        for cell in line.split(",")[1:]:
            assert repr(float(cell)) == cell


# ---------------------------------------------------------------------------
# single-purpose subcommands


def test_verify_subcommand_flat_square(tmp_path, capsys):
    cfg = base_config(tmp_path)
    path = write_config(tmp_path, cfg)
    code = main(["verify", path, "--report", str(tmp_path / "v.json")])
    assert code == 0
    out = capsys.readouterr().out
    assert "extrapolated margin" in out
    report = json.loads((tmp_path / "v.json").read_text())
    assert report["checks"][0]["check"] == "inequality"


def test_verify_subcommand_refuses_helicoid(tmp_path, capsys):
    cfg = helicoid_config(tmp_path)
    code = main(["verify", write_config(tmp_path, cfg)])
    assert code == 1
    assert "refused" in capsys.readouterr().out


def test_spectrum_csv(tmp_path, capsys):
    cfg = base_config(tmp_path)
    cfg["domain"]["resolution"] = 32
    csv_path = tmp_path / "spec.csv"
    code = main([
        "spectrum", write_config(tmp_path, cfg),
        "--bc", "neumann", "-k", "4", "--csv", str(csv_path),
    ])
    assert code == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "index,value,multiplicity,residual"
    assert len(lines) == 5
    rows = [line.split(",") for line in lines[1:]]
    assert [r[0] for r in rows] == ["1", "2", "3", "4"]
    # mu_2 of the flat pi x pi square, within one percent
    assert float(rows[1][1]) == pytest.approx(1.0, rel=0.01)
    assert int(rows[1][2]) == 2
    for r in rows:
        assert repr(float(r[1])) == r[1]
        assert repr(float(r[3])) == r[3]
        assert float(r[3]) < 1e-9


def test_spectrum_oneform(tmp_path, capsys):
    cfg = base_config(tmp_path)
    code = main(["spectrum", write_config(tmp_path, cfg), "--bc", "oneform"])
    assert code == 0
    assert "mult" in capsys.readouterr().out


def test_curvature_subcommand(tmp_path, capsys):
    cfg = helicoid_config(tmp_path)
    cfg["domain"]["extents"] = [-0.9, 0.9]
    cfg["metric"]["params"]["r_range"] = [-0.9, 0.9]
    code = main(["curvature-check", write_config(tmp_path, cfg)])
    assert code == 0
    assert "PASS" in capsys.readouterr().out


def test_convergence_subcommand_csv(tmp_path, capsys):
    cfg = base_config(tmp_path)
    cfg["domain"]["resolution"] = 4
    csv_path = tmp_path / "conv.csv"
    code = main([
        "convergence", write_config(tmp_path, cfg), "--csv", str(csv_path),
    ])
    assert code == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "level,h,value"
    assert len(lines) == 4
    values = [float(line.split(",")[2]) for line in lines[1:]]
    assert values == sorted(values, reverse=True)


def test_oracle_lines(capsys):
    assert main(["oracle", "--max-index", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("1,2,2,4,5,5,5,5")
    assert out[1].startswith("0,1,1,1,2,2,4,4,4")


def test_oracle_csv(tmp_path):
    csv_path = tmp_path / "oracle.csv"
    assert main(["oracle", "--max-index", "2", "--csv", str(csv_path)]) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "index,kind,value"
    assert "1,dirichlet,1" in lines
    assert "1,neumann,0" in lines


def test_oracle_invalid_index(capsys):
    assert main(["oracle", "--max-index", "0"]) == 2
    assert "max_index" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# loader helpers


def test_load_config_rejects_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(path)

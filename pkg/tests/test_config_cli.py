"""Field registry, scenario configs, the run manifest and the command line."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from kadvect.cli import main
from kadvect.config import ConfigError, diagnose, from_dict, load_config
from kadvect.registry import (FieldSpecError, build_form, build_vector_field,
                              referenced_primitives)

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "kadvect" / "configs"


# registry ----------------------------------------------------------------------------------
def test_linear_and_rotation_specs():
    b = build_vector_field({"name": "linear", "matrix": [[1, 2], [3, 4]], "offset": [1, 0]}, 2)
    np.testing.assert_allclose(b(np.array([[1.0, 1.0]]))[0], [4.0, 7.0])
    r = build_vector_field({"name": "rotation", "omega": 2.0, "plane": [1, 3]}, 3)
    np.testing.assert_allclose(r(np.array([[1.0, 0.0, 0.0]]))[0], [0.0, 0.0, 2.0])


def test_composite_specs():
    spec = {"sum": [{"name": "constant", "value": [1.0, 0.0]},
                    {"scale": 3.0, "field": {"name": "constant", "value": [0.0, 1.0]}}]}
    np.testing.assert_allclose(build_vector_field(spec, 2)(np.zeros((1, 2)))[0], [1.0, 3.0])
    assert referenced_primitives(spec) == ["constant", "constant"]


def test_random_spec_is_seeded():
    a = build_vector_field({"name": "random", "seed": 4, "scale": 0.5}, 2)
    b = build_vector_field({"name": "random", "seed": 4, "scale": 0.5}, 2)
    x = np.array([[0.3, -0.2]])
    np.testing.assert_array_equal(a(x), b(x))


def test_form_specs():
    K = build_form({"name": "trig", "wavevector": [1, 0], "value": [2.0]}, 2, 0)
    assert K(np.array([[np.pi / 2, 0.0]]))[0, 0] == pytest.approx(2.0)
    tab = build_form({"name": "tabulated", "lo": [0.0], "hi": [1.0], "values": [[0.0], [2.0]]},
                     1, 0)
    assert tab(np.array([[0.25]]))[0, 0] == pytest.approx(0.5)


@pytest.mark.parametrize("spec, n, k", [
    ({"name": "wobble"}, 2, 0),
    ({"name": "linear", "matrix": [[1.0]]}, 2, None),
    ({"name": "rotation"}, 1, None),
    ({"name": "linear", "matrix": [[1, 0], [0, 1]]}, 2, 1),
    ({"name": "radial_holder", "alpha": 1.5}, 2, None),
])
def test_bad_specs_raise(spec, n, k):
    with pytest.raises(FieldSpecError):
        build_vector_field(spec, n) if k is None else build_form(spec, n, k)


# configs ------------------------------------------------------------------------------------
def test_empty_config_names_missing_fields():
    diags = diagnose({})
    assert "missing required field 'scenario'" in diags
    assert "missing required field 'seed'" in diags


def test_degree_above_dimension_is_named():
    diags = diagnose({"scenario": "weak-residual", "seed": 1, "n": 2, "k": 3})
    assert any("invariant k <= n violated: k = 3 > n = 2" in d for d in diags)


def test_unknown_primitive_is_named():
    diags = diagnose({"scenario": "weak-residual", "seed": 1, "fields": {"b": {"name": "wobble"}}})
    assert any("unknown primitive 'wobble'" in d and "fields.b" in d for d in diags)


@pytest.mark.parametrize("raw, fragment", [
    ({"scenario": "nope", "seed": 1}, "unknown scenario"),
    ({"scenario": "kiw", "seed": -1}, "seed"),
    ({"scenario": "kiw", "seed": 1, "colour": "red"}, "unknown key"),
    ({"scenario": "kiw", "seed": 1, "n": 6}, "n <= 4"),
    ({"scenario": "kiw", "seed": 1, "eps_list": [0.1, 0.2, 0.05]}, "eps_list"),
    ({"scenario": "counterexample", "seed": 1, "k": 1}, "k = 0"),
])
def test_config_diagnostics(raw, fragment):
    diags = diagnose(raw)
    assert diags and any(fragment in d for d in diags), diags


def test_large_dimension_can_be_allowed():
    assert not any("n <= 4" in d for d in diagnose({"scenario": "calculus-identities", "seed": 1,
                                                    "n": 5, "allow_large_n": True}))


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_are_valid(path):
    assert diagnose(yaml.safe_load(path.read_text())) == []


def test_hash_ignores_output_and_tracks_content(tmp_path, monkeypatch):
    a = from_dict({"scenario": "kiw", "seed": 1, "output": "x"})
    b = from_dict({"scenario": "kiw", "seed": 1, "output": "y"})
    c = from_dict({"scenario": "kiw", "seed": 2, "output": "x"})
    assert a.hash() == b.hash() != c.hash()
    with pytest.raises(ConfigError):
        from_dict({"scenario": "kiw"})


def test_overrides_and_environment(tmp_path, monkeypatch):
    p = tmp_path / "c.yaml"
    p.write_text("scenario: kiw\nseed: 3\noutput: from-file\n")
    monkeypatch.setenv("KADVECT_OUT", str(tmp_path / "env"))
    cfg = load_config(p, seed=9)
    assert cfg.seed == 9 and cfg.output == str(tmp_path / "env")
    assert load_config(p, out="cli").output == "cli"


# command line --------------------------------------------------------------------------------
def _write(tmp_path, body: dict) -> str:
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(body))
    return str(p)


def test_cli_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name in ("calculus-identities", "commutator-sweep", "counterexample", "noise-selection"):
        assert name in out


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", _write(tmp_path, {})]) == 2
    out = capsys.readouterr().out
    assert "missing required field 'scenario'" in out
    assert main(["validate", _write(tmp_path, {"scenario": "kiw", "seed": 1})]) == 0
    assert "config is valid" in capsys.readouterr().out


def test_cli_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    cfg = _write(tmp_path, {"scenario": "kiw", "seed": 1})
    assert main(["run", cfg, "--threads", "0"]) == 2


def test_cli_run_writes_outputs(tmp_path):
    cfg = _write(tmp_path, {"scenario": "calculus-identities", "seed": 3, "n": 2,
                            "params": {"n_cases": 3}})
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["scenario"] == "calculus-identities"
    assert all(man["verdicts"].values())
    assert (out / "identities.csv").read_bytes().startswith(b"identity,case,n,k")
    assert b"\r\n" in (out / "identities.csv").read_bytes()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["verdicts"] == man["verdicts"]


def test_cli_reports_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = _write(tmp_path, {"scenario": "calculus-identities", "seed": 3, "n": 2,
                            "params": {"n_cases": 1}})
    assert main(["run", cfg, "--out", str(blocker / "sub")]) == 2


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "kadvect.cli", "list"], capture_output=True,
                       text=True, check=False)
    assert r.returncode == 0 and "kiw" in r.stdout

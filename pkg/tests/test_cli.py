import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ksmarch.cli import main
from ksmarch.runner import read_table

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RT = str(CONFIGS / "roundtrip.yaml")
NOISY = str(CONFIGS / "noisy_dimer.yaml")
FAST = ["--set", "march.z=40"]


def reconstruct(tmp_path, cfg=RT, extra=(), name="run"):
    out = tmp_path / name
    return main(["reconstruct", cfg, "--out", str(out), *FAST, *extra]), out


def test_generate_dimer(tmp_path):
    out = tmp_path / "gen"
    assert main(["generate", NOISY, "--out", str(out), "--set", "oracle.delta_n=0", "--set", "march.source_mode=exact"]) == 0
    header, data = read_table(out / "density.csv")
    assert header == ["t", "n_1", "n_2"]
    np.testing.assert_allclose(data[:, 1:].sum(axis=1), 1.0, atol=1e-12)
    doc = json.loads((out / "density.json").read_text())
    assert doc["N"] == 1


def test_seeded_noise_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", NOISY, "--out", str(a)]) == 0
    assert main(["generate", NOISY, "--out", str(b)]) == 0
    assert (a / "density.csv").read_bytes() == (b / "density.csv").read_bytes()
    c = tmp_path / "c"
    main(["generate", NOISY, "--out", str(c), "--set", "oracle.seed=8"])
    assert (a / "density.csv").read_bytes() != (c / "density.csv").read_bytes()


def test_trace_contains_stencil_points(tmp_path):
    out = tmp_path / "gen"
    main(["generate", NOISY, "--out", str(out)])
    meta = json.loads((out / "density.json").read_text())
    times = np.asarray(meta["times"])
    h, spacing = meta["meta"]["h"], meta["meta"]["spacing"]
    assert h / spacing == pytest.approx(round(h / spacing), abs=1e-9)
    for k in range(51):
        anchor = k / 50
        for s in (anchor - h, anchor, anchor + h):
            assert np.min(np.abs(times - s)) <= 1e-12


def test_reconstruct_and_validate(tmp_path, capsys):
    code, out = reconstruct(tmp_path)
    assert code == 0
    for f in ["potentials.csv", "density.csv", "target.csv", "source.csv", "K.csv", "diagnostics.csv",
              "bounds.json", "manifest.json"]:
        assert (out / f).exists(), f
    header, V = read_table(out / "potentials.csv")
    assert V.shape == (40, 5)
    assert main(["validate", str(out)]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_breakdown_exit_code(tmp_path):
    out = tmp_path / "bd"
    assert main(["reconstruct", str(CONFIGS / "breakdown.yaml"), "--out", str(out)]) == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] != "ok" and man["error_code"] == 3
    assert main(["validate", str(out)]) == 1


def test_missing_trace_is_usage_error(tmp_path):
    out = tmp_path / "none"
    assert main(["reconstruct", NOISY, "--out", str(out)]) == 2
    assert not out.exists()


def test_bad_override(tmp_path, capsys):
    assert main(["reconstruct", RT, "--out", str(tmp_path / "x"), "--set", "march.z=abc"]) == 2
    assert "march.z" in capsys.readouterr().err


def test_stencil_pipeline(tmp_path):
    gen, out = tmp_path / "trace", tmp_path / "noisy"
    assert main(["generate", NOISY, "--out", str(gen)]) == 0
    assert main(["reconstruct", NOISY, "--out", str(out), "--trace", str(gen / "density.json")]) == 0
    assert main(["validate", str(out)]) == 0
    _, n = read_table(out / "density.csv")
    assert n.shape == (51, 3)


def _rewrite(path, fn):
    header, data = read_table(path)
    data = fn(data)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[repr(float(x)) for x in row] for row in data])


def test_validate_detects_shifted_potential(tmp_path):
    _, out = reconstruct(tmp_path)

    def shift(d):
        d[:, 1:] += 0.25
        return d
    _rewrite(out / "potentials.csv", shift)
    assert main(["validate", str(out)]) == 1


def test_R_warning_is_not_failure(tmp_path, capsys):
    code, out = reconstruct(tmp_path, extra=["--set", "validate.R_warn=1e-6"])
    assert code == 0
    assert main(["validate", str(out)]) == 0
    assert "WARN" in capsys.readouterr().out.upper()


def test_lipschitz_budget_exit(tmp_path):
    code, out = reconstruct(tmp_path, extra=["--set", "march.L=1e-4", "--set", "march.max_restarts=0"])
    assert code == 4
    assert json.loads((out / "manifest.json").read_text())["error_code"] == 4


def test_tampered_bounds_exit_5(tmp_path):
    _, out = reconstruct(tmp_path)
    doc = json.loads((out / "bounds.json").read_text())
    doc["comparison"]["predicted_phi"] = [0.0] * len(doc["comparison"]["predicted_phi"])
    doc["comparison"]["predicted_phi"][0] = 1.0
    (out / "bounds.json").write_text(json.dumps(doc))
    assert main(["validate", str(out)]) == 5


def test_sweep(tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", RT, "--out", str(out), "--grid", "march.z=20,40"]) == 0
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["overrides"] for r in rows] == ["march.z=20", "march.z=40"]
    assert all(r["status"] == "ok" for r in rows)
    assert float(rows[1]["max_density_error"]) <= float(rows[0]["max_density_error"]) * 1.05


def test_sweep_stencil_keeps_trace(tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", NOISY, "--out", str(out), "--grid", "oracle.seed=1,2"]) == 0
    for p in ("point_000", "point_001"):
        assert (out / p / "trace" / "density.json").exists()
        assert (out / p / "density.csv").exists()


def test_bounds_command(capsys):
    assert main(["bounds", "--L", "1", "--kappa", "0.5", "--E-L", "1", "--M", "2", "--eps", "0.1",
                 "--r", "10"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["cost"]["cost_classical"] == pytest.approx(238400)
    assert doc["cost"]["z"] == 29800

"""Command-line entry points: artifacts, determinism, and exit codes."""

from __future__ import annotations

import json

import numpy as np
import pytest

import qfpt.cli as cli
from qfpt.kur import KurReport
from qfpt.models import decay_qubit, model_payload, save_model


def run(args, tmp_path):
    return cli.main([*args, "--outdir", str(tmp_path)])


def test_fpt_jump_artifacts(tmp_path):
    code = run(
        [
            "fpt-jump", "--builtin", "thermal-qubit", "--gamma", "1", "--omega", "1",
            "--nbar", "0.2", "--threshold", "3", "--horizon", "6",
        ],
        tmp_path,
    )
    assert code == 0
    csv = tmp_path / "fpt_jump.csv"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert csv.exists()
    assert manifest["config_hash"]
    assert "fpt_jump.csv" in manifest["artifacts"]
    assert manifest["versions"]["qfpt"]
    body = np.loadtxt(csv, delimiter=",", skiprows=3)
    assert body.shape[1] == 3
    assert body[0, 1] == 1.0


def test_fpt_jump_rerun_is_byte_identical(tmp_path):
    args = [
        "fpt-jump", "--builtin", "thermal-qubit", "--gamma", "1", "--omega", "1",
        "--nbar", "0.2", "--threshold", "3", "--horizon", "6",
    ]
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    a_dir.mkdir(), b_dir.mkdir()
    assert run(args, a_dir) == 0
    assert run(args, b_dir) == 0
    assert (a_dir / "fpt_jump.csv").read_bytes() == (b_dir / "fpt_jump.csv").read_bytes()


def test_fpt_diffusion_artifacts(tmp_path):
    code = run(
        [
            "fpt-diffusion", "--builtin", "homodyne-qubit", "--gamma", "1",
            "--omega", "1", "--threshold", "1", "--delta", "0.05", "--horizon", "3",
        ],
        tmp_path,
    )
    assert code == 0
    assert (tmp_path / "fpt_diffusion.csv").exists()
    # survivors remain at this horizon, so the conditioned histogram is written
    assert (tmp_path / "final_distribution.csv").exists()


def test_trajectories_parallel_matches_serial(tmp_path):
    base = [
        "trajectories", "--builtin", "thermal-qubit", "--gamma", "1", "--omega", "1",
        "--nbar", "0.2", "--unravelling", "jump", "--ntraj", "60", "--seed", "5",
        "--threshold", "2", "--horizon", "4",
    ]
    a_dir = tmp_path / "serial"
    b_dir = tmp_path / "parallel"
    a_dir.mkdir(), b_dir.mkdir()
    assert run(base, a_dir) == 0
    assert run([*base, "--workers", "3"], b_dir) == 0
    assert (a_dir / "trajectories.csv").read_bytes() == (b_dir / "trajectories.csv").read_bytes()
    assert (a_dir / "fpt_mc.csv").read_bytes() == (b_dir / "fpt_mc.csv").read_bytes()


def test_outdir_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTDIR_ENV, str(tmp_path))
    code = cli.main(
        [
            "fpt-jump", "--builtin", "thermal-qubit", "--gamma", "1", "--omega", "1",
            "--nbar", "0.1", "--threshold", "2", "--horizon", "4",
        ]
    )
    assert code == 0
    assert (tmp_path / "fpt_jump.csv").exists()


def test_model_file_and_builtin_conflict(tmp_path):
    path = tmp_path / "model.json"
    save_model(decay_qubit(1.0), path)
    code = run(
        ["fpt-jump", "--model", str(path), "--builtin", "thermal-qubit",
         "--threshold", "1"],
        tmp_path,
    )
    assert code == cli.EXIT_CONFIG


def test_builtin_params_rejected_with_model_file(tmp_path):
    path = tmp_path / "model.json"
    save_model(decay_qubit(1.0), path)
    code = run(
        ["fpt-jump", "--model", str(path), "--gamma", "2", "--threshold", "1"],
        tmp_path,
    )
    assert code == cli.EXIT_CONFIG


def test_bad_model_file_exits_config(tmp_path):
    payload = model_payload(decay_qubit(1.0))
    payload["surprise"] = True
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(payload))
    code = run(["fpt-jump", "--model", str(path), "--threshold", "1"], tmp_path)
    assert code == cli.EXIT_CONFIG


def test_kur_scan_rejects_omega_flag(tmp_path, capsys):
    code = run(
        ["kur-scan", "--omega-range", "0.5:1:2", "--omega", "1"],
        tmp_path,
    )
    assert code == cli.EXIT_CONFIG
    assert "omega-range" in capsys.readouterr().err


def test_kur_scan_artifacts(tmp_path):
    code = run(
        ["kur-scan", "--omega-range", "0.4:0.6:2", "--nbar", "0.1",
         "--threshold", "3", "--horizon", "30"],
        tmp_path,
    )
    assert code == 0
    lines = (tmp_path / "kur_scan.csv").read_text().splitlines()
    header = lines[1].split(",")
    assert header[:4] == ["omega", "gamma", "nbar", "activity"]
    assert len(lines) == 4


def test_kur_scan_all_failed_exits_convergence(tmp_path, monkeypatch):
    def fake_scan(omegas, **kwargs):
        return [KurReport.failed(o, 1.0, 0.0, "nope") for o in omegas]

    monkeypatch.setattr(cli, "kur_scan", fake_scan)
    code = run(["kur-scan", "--omega-range", "0.5:1:2"], tmp_path)
    assert code == cli.EXIT_CONVERGENCE


def test_kur_scan_quantum_violation_exits_physics(tmp_path, monkeypatch):
    def fake_scan(omegas, **kwargs):
        return [
            KurReport(
                omega=o, gamma=1.0, nbar=0.0, activity=1.0,
                quantum_correction=0.1, mean_fpt=1.0, var_fpt=0.1,
                snr=20.0, classical_bound=1.0, quantum_bound=1.1,
                classical_violated=True, quantum_violated=True,
                absorbed_probability=1.0, horizon=50.0,
            )
            for o in omegas
        ]

    monkeypatch.setattr(cli, "kur_scan", fake_scan)
    code = run(["kur-scan", "--omega-range", "0.5:1:2"], tmp_path)
    assert code == cli.EXIT_PHYSICS
    # artifacts are still written before the failure is signalled
    assert (tmp_path / "kur_scan.csv").exists()


def test_validate_reports_incoherent_note(capsys):
    code = cli.main(
        ["validate", "--builtin", "thermal-qubit", "--gamma", "1", "--omega", "0",
         "--nbar", "0.3", "--threshold", "4"]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "incoherent regime" in out
    assert "window" in out


def test_validate_checks_diffusion_spacing(capsys):
    code = cli.main(
        ["validate", "--builtin", "homodyne-qubit", "--gamma", "1", "--omega", "1",
         "--threshold", "1.5", "--delta", "0.05"]
    )
    assert code == 0
    assert "Peclet" in capsys.readouterr().out


def test_unknown_builtin_exits_config(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(["fpt-jump", "--builtin", "nonsense", "--threshold", "1"], tmp_path)
    assert exc.value.code == 2


def test_config_hash_ignores_outdir(tmp_path):
    args = [
        "fpt-jump", "--builtin", "thermal-qubit", "--gamma", "1", "--omega", "1",
        "--nbar", "0.2", "--threshold", "2", "--horizon", "4",
    ]
    a_dir = tmp_path / "one"
    b_dir = tmp_path / "two"
    a_dir.mkdir(), b_dir.mkdir()
    run(args, a_dir)
    run(args, b_dir)
    ha = json.loads((a_dir / "manifest.json").read_text())["config_hash"]
    hb = json.loads((b_dir / "manifest.json").read_text())["config_hash"]
    assert ha == hb

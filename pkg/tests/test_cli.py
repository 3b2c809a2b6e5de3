import json
import os

from lichtorus.cli import main, verify_manifest


def write_config(tmp_path, body, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return str(path)


def base_config(mode, out, **params):
    return {
        "mode": mode,
        "grid": {"dim": 3, "resolutions": [8, 8, 8], "periods": [1.0, 1.0, 1.0]},
        "coefficients": {
            "h": {"constant": 1.0},
            "f": {"constant": 1.0},
            "a": {"constant": 1.0},
        },
        "parameters": params,
        "output": {"directory": out},
        "seed": 3,
    }


def test_solve_mode(tmp_path):
    out = str(tmp_path / "out")
    cfgp = write_config(tmp_path, base_config("solve", out, theta=0.1))
    assert main(["solve", "--config", cfgp]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["quantities"]["residual_norm"] <= 1e-10
    assert abs(report["quantities"]["max_u"] - 0.8014635435028197) <= 1e-9
    assert verify_manifest(out) == []


def test_fold_mode_report_and_csv(tmp_path):
    out = str(tmp_path / "out")
    cfg = base_config("fold", out, theta_hint=0.1)
    cfg["solver"] = {"fold_tol": 1e-4}
    cfgp = write_config(tmp_path, cfg)
    assert main(["fold", "--config", cfgp]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert abs(report["quantities"]["theta_star"] - 0.148148148148) <= 5e-4
    csv = (tmp_path / "out" / "branch.csv").read_text().splitlines()
    assert csv[0] == "theta,lambda,min_u,max_u,energy,iterations,converged"
    assert len(csv) >= 2


def test_fold_determinism(tmp_path):
    cfg = base_config("fold", "ignored", theta_hint=0.1)
    cfgp = write_config(tmp_path, cfg)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["fold", "--config", cfgp, "--out", out1, "--seed", "11"]) == 0
    assert main(["fold", "--config", cfgp, "--out", out2, "--seed", "11"]) == 0
    b1 = (tmp_path / "a" / "branch.csv").read_bytes()
    b2 = (tmp_path / "b" / "branch.csv").read_bytes()
    assert b1 == b2


def test_branch_mode_csv_rows(tmp_path):
    out = str(tmp_path / "out")
    thetas = [round(0.01 + 0.012 * i, 6) for i in range(10)]
    cfgp = write_config(tmp_path, base_config("branch", out,
                                              theta_schedule=thetas))
    assert main(["branch", "--config", cfgp]) == 0
    rows = (tmp_path / "out" / "branch.csv").read_text().splitlines()
    assert len(rows) == 11  # header + 10 points
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["quantities"]["n_points"] == 10
    assert report["quantities"]["lambda_min"] > 0


def test_certificate_mode(tmp_path):
    out = str(tmp_path / "out")
    cfgp = write_config(tmp_path, base_config("certificate", out))
    assert main(["certificate", "--config", cfgp]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["quantities"]["C_n"] == 0.015625


def test_stability_mode_csv_rows(tmp_path):
    out = str(tmp_path / "out")
    qs = [6.0 - 1.0 / k for k in range(1, 7)]
    cfgp = write_config(tmp_path, base_config("stability-test", out,
                                              theta=0.1, q_schedule=qs))
    assert main(["stability-test", "--config", cfgp]) == 0
    rows = (tmp_path / "out" / "stability.csv").read_text().splitlines()
    assert len(rows) == 7  # header + 6 members
    assert all(row.endswith("CONVERGED") for row in rows[1:])


def test_stability_blowup_exit_code(tmp_path):
    out = str(tmp_path / "out")
    cfgp = write_config(tmp_path, base_config(
        "stability-test", out, theta=0.1,
        q_schedule=[5.0, 5.2, 5.4, 5.6],
        a_perturbations=[0.0, 0.3, -0.2, 0.25]))
    assert main(["stability-test", "--config", cfgp]) == 4


def test_bubble_mode(tmp_path):
    out = str(tmp_path / "out")
    cfg = base_config("bubble-check", out)
    cfg["solver"] = {"bubble_f0": 3.0, "bubble_window": 0.5}
    cfgp = write_config(tmp_path, cfg)
    assert main(["bubble-check", "--config", cfgp]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["quantities"]["residual"] <= 1e-4
    assert 12.0 <= report["quantities"]["refinement_ratio"] <= 20.0


def test_mountain_pass_mode(tmp_path):
    out = str(tmp_path / "out")
    cfgp = write_config(tmp_path, base_config(
        "mountain-pass", out, theta=0.1,
        epsilon_schedule=[1e-2, 1e-4, 1e-6],
        q_schedule=[5.5, 5.75, 5.875]))
    assert main(["mountain-pass", "--config", cfgp]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    q = report["quantities"]
    assert q["energy_minimal"] < q["eta"] <= q["second_energy"] + 1e-9
    assert q["distinct"] and not q["merged_within_tolerance"]
    assert abs(q["second_energy"] - 0.3516613758116537) <= 1e-6
    assert os.path.exists(tmp_path / "out" / "second.field")


def test_config_error_exit_code(tmp_path):
    cfg = base_config("fold", str(tmp_path / "out"))
    cfg["metrics"] = "yes"
    cfgp = write_config(tmp_path, cfg)
    assert main(["fold", "--config", cfgp]) == 2


def test_mode_mismatch_exit_code(tmp_path):
    cfgp = write_config(tmp_path, base_config("fold", str(tmp_path / "out")))
    assert main(["certificate", "--config", cfgp]) == 2


def test_missing_config_io_exit_code(tmp_path):
    assert main(["fold", "--config", str(tmp_path / "nope.json")]) == 5


def test_solver_failure_exit_code(tmp_path):
    # theta above the fold: no solution anywhere near the hint
    out = str(tmp_path / "out")
    cfgp = write_config(tmp_path, base_config("solve", out, theta=0.2))
    assert main(["solve", "--config", cfgp]) == 3


def test_manifest_tamper_detected(tmp_path):
    out = str(tmp_path / "out")
    cfgp = write_config(tmp_path, base_config("solve", out, theta=0.1))
    assert main(["solve", "--config", cfgp]) == 0
    target = tmp_path / "out" / "solution.field"
    blob = bytearray(target.read_bytes())
    blob[-1] ^= 0xFF
    target.write_bytes(bytes(blob))
    problems = verify_manifest(out)
    assert problems and "mismatch" in problems[0]


def test_field_dump_roundtrip_through_cli(tmp_path):
    from lichtorus.fieldio import read_field
    out = str(tmp_path / "out")
    cfgp = write_config(tmp_path, base_config("solve", out, theta=0.1))
    assert main(["solve", "--config", cfgp]) == 0
    sol = read_field(tmp_path / "out" / "solution.field")
    assert abs(sol.values - 0.8014635435028197).max() <= 1e-9

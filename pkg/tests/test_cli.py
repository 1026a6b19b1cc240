import json

import numpy as np
import pytest

from qbnet import cli, presets
from qbnet.cli import EXIT_ASSUMPTION, EXIT_CONFIG, main


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj, indent=2))
    return str(p)


SMALL = {"sampling": {"T": 0.05, "N_d": 120}, "noise": {"sigma": [0.0, 0.01], "seed": 5},
         "fit": {"sets": cli.DEFAULT_SETS[:2]}}


def test_check_verb_reports_circuit(tmp_path, capsys):
    assert main(["check", "--out", str(tmp_path / "o")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["regular"] and rep["impulse_free"] and rep["stable"] and rep["ok"]
    assert sorted(p[0] for p in rep["transfer_poles"]) == pytest.approx([-3.0, -0.75])


def test_half_nyquist_aborts_at_check(tmp_path, capsys):
    code = main(["fit", "--omega0", str(np.pi / 0.05), "--nd", "50", "--out", str(tmp_path / "o")])
    assert code == EXIT_ASSUMPTION
    assert "(e)" in capsys.readouterr().err
    assert not (tmp_path / "o" / "nonparam.csv").exists()


def test_config_errors_carry_line_numbers(tmp_path, capsys):
    bad = write(tmp_path, "bad.json", '{\n  "sampling": {\n    "T": -1\n  }\n}\n')
    assert main(["check", "--config", bad]) == EXIT_CONFIG
    assert "line 3" in capsys.readouterr().err
    broken = write(tmp_path, "broken.json", '{\n  "noise": {"seed": 1,,}\n}')
    assert main(["check", "--config", broken]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err
    unknown = write(tmp_path, "unknown.json", '{\n\n  "modle": {}\n}')
    assert main(["check", "--config", unknown]) == EXIT_CONFIG
    assert "line 3" in capsys.readouterr().err


def test_bad_flags_rejected():
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--sigma", "0.1,-2"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["fit", "--truncation", "0"])


def test_negative_weights_rejected(tmp_path):
    cfg = {"fit": {"sets": [{"label": "w", "estimates": [{"tuple": [1]}], "weights": [-1.0]}]}}
    assert main(["check", "--config", write(tmp_path, "c.json", cfg)]) == EXIT_CONFIG


def test_deterministic_rerun_identical_csv(tmp_path):
    cfg = write(tmp_path, "c.json", SMALL)
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["fit", "--config", cfg, "--out", str(d)]) == 0
        outs.append(d)
    for name in ("nonparam.csv", "param.csv", "estimates.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rows = (outs[0] / "param.csv").read_text().splitlines()
    assert rows[0] == "sigma,replica,N_d,set,theta1,theta2,converged,jacobian_rcond"
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert set(summary["runtimes"]) == {"check", "simulate", "estimate", "fit"}


def test_seed_changes_noisy_rows_only(tmp_path):
    cfg = write(tmp_path, "c.json", SMALL)
    main(["estimate", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["estimate", "--config", cfg, "--seed", "6", "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "nonparam.csv").read_text().splitlines()
    b = (tmp_path / "b" / "nonparam.csv").read_text().splitlines()
    clean = [r for r in a if r.startswith("0,")]
    assert clean == [r for r in b if r.startswith("0,")]
    assert a != b


def test_simulate_verb_writes_trajectory(tmp_path):
    cfg = write(tmp_path, "c.json", SMALL)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    lines = (tmp_path / "s" / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,y1,y2"
    assert len(lines) == 1 + 120 * 20 + 1


def _inline_circuit():
    subs, basis, J = presets.circuit()
    keys = ("E", "A_xx", "B_xv", "B_xu", "C_zx", "C_yx", "Gamma_xx")
    return {"subsystems": [{k: getattr(s, k).tolist() for k in keys} for s in subs],
            "basis": [b.tolist() for b in basis.basis], "input_map": J.tolist(),
            "theta": list(presets.CIRCUIT_THETA)}


def test_inline_model_equals_preset(tmp_path):
    cfg = dict(SMALL, model=_inline_circuit())
    text = json.dumps(cfg)
    exp_inline = cli.build_experiment(*cli.load_config(text=text))
    exp_preset = cli.build_experiment(*cli.load_config(text=json.dumps(SMALL)))
    for k in ("E", "A", "B", "C", "D", "Gamma_x", "Gamma_u"):
        assert np.array_equal(getattr(exp_inline.model, k), getattr(exp_preset.model, k))


def test_checkpoints_log_spaced():
    pts = cli.checkpoints(10 ** 4)
    assert pts[0] == 1 and pts[-1] == 10 ** 4
    assert pts == sorted(set(pts))
    assert {10, 100, 1000} <= set(pts)
    big = np.array([p for p in pts if p >= 100])
    assert np.allclose(big[1:] / big[:-1], 10 ** 0.1, rtol=0.02)
    assert cli.checkpoints(5, full=True) == [1, 2, 3, 4, 5]


def test_noiseless_pipeline_recovers_theta(tmp_path):
    """Noiseless run at omega0 = 4.5 rad/s, T = 0.05 s: first-order fit within 1 percent of the truth."""
    out = tmp_path / "full"
    assert main(["fit", "--sigma", "0", "--nd", "10000", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    rel = summary["fits"][0]["sets"]["phi(1)"]["rel_error"]
    print("noiseless pipeline relative errors:", rel)
    assert max(rel) <= 0.01

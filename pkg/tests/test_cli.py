import csv
import json
import math

import numpy as np
import pytest

from avlm import __version__
from avlm.cli import main
from avlm.dgp import NonlinearModel


def _r(v):
    return repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


def _stream(tmp_path, n=300, delta=0.0, rho=0.5, seed=0, name="data.csv", sd1=1.0, sd0=1.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    t = (rng.random(n) < rho).astype(int)
    e = rng.normal(size=n) * np.where(t == 1, sd1, sd0)
    y = 1.0 + 0.5 * x + delta * t + e
    rows = [[_r(a), _r(b), _r(c - rho), int(c)] for a, b, c in zip(y, x, t)]
    return _write_csv(tmp_path / name, ["y", "x1", "z", "t"], rows)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_power_sample_size(capsys):
    assert main(["power", "--xi", _r(0.2 / math.sqrt(1.5)), "--alpha", "0.01", "--power", "0.95"]) == 0
    assert capsys.readouterr().out.strip() == "2676"


def test_power_rounded_effect(capsys):
    assert main(["power", "--alpha", "0.01", "--power", "0.95", "--xi", "0.16330"]) == 0
    assert capsys.readouterr().out.strip() == "2676"


def test_power_rejection_bound(capsys):
    xi = _r(0.2 / math.sqrt(1.5))
    assert main(["power", "--xi", xi, "--alpha", "0.01", "--n", "2676"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.7382, abs=1e-4)


def test_usage_errors_exit_2(capsys):
    assert main(["simulate", "--reps", "0"]) == 2
    assert "--reps" in capsys.readouterr().err
    assert main(["power"]) == 2
    assert main(["monitor", "--bogus"]) == 2
    assert main([]) == 2


def test_monitor_strong_signal_rejects(tmp_path, capsys):
    data = _stream(tmp_path, n=200, delta=5.0)
    out = tmp_path / "traj.csv"
    code = main(["monitor", "--data", data, "--x", "x1", "--z", "z", "--intercept", "--phi", "1",
                 "--out", str(out)])
    assert code == 10
    err = capsys.readouterr().err
    assert "verdict=reject" in err and "tau=NA" not in err
    rows = _rows(out)
    assert rows[0]["n"] == "4" and rows[-1]["n"] == "200"
    assert float(rows[-1]["p_running_min"]) <= 0.05
    assert float(rows[-1]["ci_lo"]) > 0


def test_monitor_null_streams_mostly_accept(tmp_path):
    verdicts = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        W, y = NonlinearModel().chunk(rng, 0, 2000)
        path = _write_csv(tmp_path / f"n{seed}.csv", ["y", "x1", "x2", "x3", "z"],
                          [[_r(v), *map(_r, w[1:])] for v, w in zip(y, W)])
        verdicts.append(main(["monitor", "--data", path, "--x", "x1,x2,x3", "--z", "z", "--intercept",
                              "--lambda", "1", "--rho", "0.5", "--out", str(tmp_path / "o.csv")]))
    assert verdicts.count(0) >= 4


def test_monitor_input_errors(tmp_path, capsys):
    empty = _write_csv(tmp_path / "e.csv", ["y", "x1", "z"], [])
    assert main(["monitor", "--data", empty, "--z", "z", "--phi", "1", "--out", str(tmp_path / "o.csv")]) == 2
    assert "no observations" in capsys.readouterr().err
    data = _stream(tmp_path)
    assert main(["monitor", "--data", data, "--z", "zz", "--phi", "1", "--out", str(tmp_path / "o.csv")]) == 2
    assert "did you mean 'z'" in capsys.readouterr().err
    assert main(["monitor", "--data", data, "--z", "z", "--out", str(tmp_path / "o.csv")]) == 2
    assert main(["monitor", "--data", data, "--z", "z", "--phi", "1", "--xi-mde", "1",
                 "--out", str(tmp_path / "o.csv")]) == 2


@pytest.mark.parametrize("method,mix", [("exact", ["--xi-mde", "0.5"]), ("plugin", ["--zeta", "3"]),
                                        ("infinity", ["--lambda", "20", "--rho", "0.5"]),
                                        ("g", ["--lambda", "20"])])
def test_monitor_methods_run(tmp_path, method, mix):
    data = _stream(tmp_path, delta=0.3)
    out = tmp_path / f"{method}.csv"
    code = main(["monitor", "--data", data, "--x", "x1", "--z", "z", "--intercept", "--method", method,
                 *mix, "--out", str(out)])
    assert code in (0, 10)
    rows = _rows(out)
    assert len(rows) > 290 and rows[-1]["n"] == "300"
    p = [float(r["p_running_min"]) for r in rows]
    assert all(a >= b for a, b in zip(p, p[1:]))


def test_ate_matches_monitor_infinity(tmp_path):
    data = _stream(tmp_path, n=400, delta=0.2)
    a_out, m_out = tmp_path / "ate.csv", tmp_path / "mon.csv"
    main(["ate", "--data", data, "--covariates", "x1", "--treatment", "t", "--rho", "0.5",
          "--lambda", "50", "--out", str(a_out)])
    main(["monitor", "--data", data, "--x", "x1", "--z", "z", "--intercept", "--method", "infinity",
          "--lambda", "50", "--rho", "0.5", "--out", str(m_out)])
    a, m = _rows(a_out), _rows(m_out)
    assert len(a) == len(m) == 397
    for ra, rm in zip(a, m):
        assert ra["n"] == rm["n"]
        for key in ("delta_hat", "log_bf", "ci_lo", "ci_hi", "p_running_min"):
            assert float(ra[key]) == pytest.approx(float(rm[key]), rel=1e-9, abs=1e-12)


def test_ate_default_lambda_and_errors(tmp_path, capsys):
    data = _stream(tmp_path)
    out = str(tmp_path / "a.csv")
    assert main(["ate", "--data", data, "--covariates", "x1", "--treatment", "t", "--rho", "0.5",
                 "--sigma-pre", "1", "--tau-mde", "0.5", "--out", out]) in (0, 10)
    assert main(["ate", "--data", data, "--covariates", "x1", "--treatment", "t", "--rho", "0.5",
                 "--out", out]) == 2
    assert main(["ate", "--data", data, "--covariates", "x1", "--treatment", "t", "--rho", "0.5",
                 "--lambda", "4", "--alpha", "1.5", "--out", out]) == 2
    bad = _write_csv(tmp_path / "b.csv", ["y", "x1", "t"], [["1", "0", "2"]])
    assert main(["ate", "--data", bad, "--covariates", "x1", "--treatment", "t", "--rho", "0.5",
                 "--lambda", "4", "--out", out]) == 2
    assert "treatment must be 0 or 1" in capsys.readouterr().err


def test_ate_hc0_wider_when_minority_arm_is_noisy(tmp_path):
    data = _stream(tmp_path, n=4000, delta=0.0, rho=0.2, sd1=2.0, sd0=1.0)
    widths = {}
    for est in ("model_s2", "hc0"):
        out = tmp_path / f"{est}.csv"
        main(["ate", "--data", data, "--covariates", "x1", "--treatment", "t", "--rho", "0.2",
              "--lambda", "100", "--estimator", est, "--out", str(out)])
        last = _rows(out)[-1]
        widths[est] = float(last["ci_hi"]) - float(last["ci_lo"])
    assert widths["hc0"] > 1.2 * widths["model_s2"]


def test_monitor_resume_is_equivalent(tmp_path):
    data = _stream(tmp_path, n=300, delta=0.2)
    with open(data) as fh:
        lines = fh.read().splitlines()
    first = tmp_path / "first.csv"
    second = tmp_path / "second.csv"
    first.write_text("\n".join(lines[:151]) + "\n")
    second.write_text("\n".join([lines[0]] + lines[151:]) + "\n")
    common = ["--x", "x1", "--z", "z", "--intercept"]
    main(["monitor", "--data", data, *common, "--phi", "2", "--out", str(tmp_path / "full.csv"),
          "--checkpoint-out", str(tmp_path / "full.json")])
    main(["monitor", "--data", str(first), *common, "--phi", "2", "--out", str(tmp_path / "a.csv"),
          "--checkpoint-out", str(tmp_path / "half.json")])
    main(["monitor", "--data", str(second), *common, "--resume", str(tmp_path / "half.json"),
          "--out", str(tmp_path / "b.csv"), "--checkpoint-out", str(tmp_path / "end.json")])
    assert (tmp_path / "end.json").read_bytes() == (tmp_path / "full.json").read_bytes()
    full = (tmp_path / "full.csv").read_text().splitlines()
    split = (tmp_path / "a.csv").read_text().splitlines() + (tmp_path / "b.csv").read_text().splitlines()[1:]
    assert split == full


def test_ate_resume_with_sandwich(tmp_path):
    data = _stream(tmp_path, n=200, rho=0.3)
    with open(data) as fh:
        lines = fh.read().splitlines()
    (tmp_path / "a.csv").write_text("\n".join(lines[:101]) + "\n")
    (tmp_path / "b.csv").write_text("\n".join([lines[0]] + lines[101:]) + "\n")
    common = ["--covariates", "x1", "--treatment", "t"]
    main(["ate", "--data", data, *common, "--rho", "0.3", "--lambda", "10", "--out", str(tmp_path / "f.csv"),
          "--checkpoint-out", str(tmp_path / "f.json")])
    main(["ate", "--data", str(tmp_path / "a.csv"), *common, "--rho", "0.3", "--lambda", "10",
          "--out", str(tmp_path / "o1.csv"), "--checkpoint-out", str(tmp_path / "h.json")])
    main(["ate", "--data", str(tmp_path / "b.csv"), *common, "--resume", str(tmp_path / "h.json"),
          "--out", str(tmp_path / "o2.csv"), "--checkpoint-out", str(tmp_path / "e.json")])
    assert json.loads((tmp_path / "e.json").read_text())["sandwich"] is not None
    assert (tmp_path / "e.json").read_bytes() == (tmp_path / "f.json").read_bytes()
    assert _rows(tmp_path / "o2.csv")[-1] == _rows(tmp_path / "f.csv")[-1]


def test_resume_rejects_wrong_checkpoint_kind(tmp_path, capsys):
    data = _stream(tmp_path)
    main(["ate", "--data", data, "--covariates", "x1", "--treatment", "t", "--rho", "0.5", "--lambda", "4",
          "--out", str(tmp_path / "o.csv"), "--checkpoint-out", str(tmp_path / "ate.json")])
    assert main(["monitor", "--data", data, "--z", "z", "--resume", str(tmp_path / "ate.json"),
                 "--out", str(tmp_path / "o.csv")]) == 2
    (tmp_path / "bad.json").write_text('{"version": 9}')
    assert main(["checkpoint", str(tmp_path / "bad.json")]) == 2
    assert "version 9" in capsys.readouterr().err


def test_checkpoint_command(tmp_path, capsys):
    data = _stream(tmp_path)
    ck = tmp_path / "c.json"
    main(["monitor", "--data", data, "--x", "x1", "--z", "z", "--intercept", "--phi", "1",
          "--out", str(tmp_path / "o.csv"), "--checkpoint-out", str(ck)])
    capsys.readouterr()
    assert main(["checkpoint", str(ck), "--resave", str(tmp_path / "c2.json")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n"] == 300 and info["p"] == 2 and info["full_rank"]
    assert (tmp_path / "c2.json").read_bytes() == ck.read_bytes()


def test_region_command(tmp_path, capsys):
    data = _stream(tmp_path, delta=0.5)
    assert main(["region", "--data", data, "--x", "x1", "--z", "z", "--intercept", "--phi", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["kind"] == "ellipsoid" and out["n"] == 300
    lo, hi = float(out["lower"][0]), float(out["upper"][0])
    assert hi - lo == pytest.approx(2 * float(out["interval_radius"]), rel=1e-12)
    assert main(["region", "--data", data, "--x", "x1", "--z", "z", "--intercept", "--phi", "1",
                 "--method", "plugin"]) == 0
    assert json.loads(capsys.readouterr().out)["kind"] == "ellipsoid"


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# power run\nxi = 0.16329931618554522\nalpha = 0.01\npower = 0.95\n")
    assert main(["power", "--config", str(cfg)]) == 0
    assert capsys.readouterr().out.strip() == "2676"
    # command line wins over the file
    assert main(["power", "--config", str(cfg), "--power", "0.5"]) == 0
    assert int(capsys.readouterr().out) < 2676
    cfg.write_text("xi = 0.2\npowr = 0.9\n")
    assert main(["power", "--config", str(cfg)]) == 2
    assert "unknown config key 'powr'" in capsys.readouterr().err
    cfg.write_text("xi = abc\n")
    assert main(["power", "--config", str(cfg)]) == 2
    cfg.write_text("dgp = alternating\nreps = 3\nnmax = 50\nuse-pre = false\n")
    assert main(["simulate", "--config", str(cfg), "--seed", "1"]) == 0
    assert "dgp=alternating" in capsys.readouterr().out


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    args = ["simulate", "--dgp", "alternating", "--reps", "5", "--nmax", "200", "--delta", "1"]
    monkeypatch.setenv("AVLM_SEED", "42")
    assert main(args) == 0
    env_out = capsys.readouterr().out
    assert "seed=42" in env_out
    assert main(args + ["--seed", "42"]) == 0
    assert capsys.readouterr().out == env_out
    monkeypatch.setenv("AVLM_SEED", "x")
    assert main(args) == 2


def test_simulate_outputs(tmp_path, capsys):
    summary, samples = tmp_path / "s.csv", tmp_path / "r.csv"
    assert main(["simulate", "--dgp", "nonlinear", "--reps", "6", "--nmax", "300", "--seed", "3",
                 "--out", str(summary), "--samples-out", str(samples)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("method=AnytimeExact dgp=nonlinear seed=3 reps=6")
    assert out[1].startswith("method=FixedNRepeated")
    rows = _rows(samples)
    assert len(rows) == 12 and set(r["method"] for r in rows) == {"AnytimeExact", "FixedNRepeated"}
    s = _rows(summary)
    assert s[0] == {"n": "0", "ecdf": "0", "method": "AnytimeExact", "dgp": "nonlinear"}


def test_simulate_bootstrap(tmp_path, capsys):
    rng = np.random.default_rng(1)
    pre = rng.lognormal(size=400)
    ctl = _write_csv(tmp_path / "c.csv", ["y", "pre"], [[_r(a + b), _r(b)] for a, b in
                                                         zip(rng.normal(size=400), pre)])
    trt = _write_csv(tmp_path / "t.csv", ["y", "pre"], [[_r(a + b + 1), _r(b)] for a, b in
                                                         zip(rng.normal(size=400), pre)])
    args = ["simulate", "--dgp", "bootstrap", "--control", ctl, "--treatment-sample", trt, "--reps", "4",
            "--nmax", "400", "--seed", "2", "--lambda", "4"]
    assert main(args + ["--use-pre"]) == 0
    assert "rejections=4" in capsys.readouterr().out
    assert main(["simulate", "--dgp", "bootstrap", "--control", ctl, "--reps", "2"]) == 2
    empty = _write_csv(tmp_path / "e.csv", ["y"], [])
    assert main(["simulate", "--dgp", "bootstrap", "--control", empty, "--mode", "aa", "--reps", "2"]) == 2

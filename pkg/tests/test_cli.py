import json
import subprocess
import sys

import numpy as np
import pytest

from fbcool.cli import DATA_COLUMNS, main
from fbcool.config import bundled_path
from fbcool.io import read_csv

BASE = bundled_path().read_text()


def write_config(tmp_path, text=BASE, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def fast_config(tmp_path):
    text = BASE.replace("points = 41", "points = 9")
    text = text.replace("cooperativities = [0.1, 0.2, 0.5, 1.0, 2.0, 2.4, 5.0, 10.0, 20.0, 50.0, 100.0]",
                        "cooperativities = [1.0, 10.0]")
    return write_config(tmp_path, text, "fast.toml")


def run(tmp_path, *args, out="out"):
    target = tmp_path / out
    code = main([*args, "--out", str(target)])
    return code, target


def load_json(path):
    return json.loads(path.read_text())


def test_validate(tmp_path, capsys):
    assert main(["validate"]) == 0
    assert "ok" in capsys.readouterr().out


def test_budget(tmp_path):
    code, out = run(tmp_path, "budget")
    assert code == 0
    body = load_json(out / "budget.json")
    assert body["c_q"] == pytest.approx(2.4)
    assert body["eta"] == pytest.approx(0.77 * 2.4 / 3.4)
    assert body["sql"]["minimum_ratio"] == pytest.approx(body["budget"]["heisenberg_product"], rel=1e-6)
    assert load_json(out / "manifest.json")["files"] == ["budget.json"]


def test_budget_at_infinite_cooperativity(tmp_path):
    cfg = write_config(tmp_path, BASE.replace("cooperativity = 2.4", "cooperativity = inf"))
    code, out = run(tmp_path, "budget", "--config", cfg)
    assert code == 0
    body = load_json(out / "budget.json")
    assert body["eta_budget"] == 0.77
    assert body["nbar_est"] == pytest.approx(0.5 * (0.77**-0.5 - 1))


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, BASE.replace("order = 2", "order = 2\nwobble = 1"))
    code, out = run(tmp_path, "budget", "--config", cfg)
    assert code == 2
    assert "wobble" in capsys.readouterr().err
    assert not (out / "manifest.json").exists()


def test_missing_config_exits_2(tmp_path):
    assert run(tmp_path, "budget", "--config", str(tmp_path / "nope.toml"))[0] == 2


def test_bad_threads_exits_2(tmp_path):
    assert run(tmp_path, "sweep-gain", "--threads", "0")[0] == 2


def test_bad_phase_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["budget", "--phase", "warm"])
    assert info.value.code == 2


def test_unstable_loop_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path, BASE.replace("order = 2", "order = 2\ngain = 1.0e4"))
    code, _ = run(tmp_path, "spectrum", "--config", cfg)
    assert code == 3
    assert "unstable" in capsys.readouterr().err


def test_spectrum(tmp_path):
    code, out = run(tmp_path, "spectrum")
    assert code == 0
    table = read_csv(out / "spectrum.csv", ("frequency_hz", "syy_closed", "sxx_closed", "syy_sql"))
    assert table["frequency_hz"].size == 6001
    body = load_json(out / "spectrum.json")
    assert 0 < body["nbar_closed"] < 1
    assert (out / "transfer.csv").exists()


def test_sweep_gain(tmp_path):
    code, out = run(tmp_path, "sweep-gain", "--config", fast_config(tmp_path), "--threads", "2")
    assert code == 0
    header = (out / "sweep_gain.csv").read_text().splitlines()[1]
    assert header == "g_fb,feedback_damping_hz,gamma_eff_hz,nbar,stable,squashing"
    body = load_json(out / "sweep_gain.json")
    table = read_csv(out / "sweep_gain.csv", ("nbar",))
    assert body["optimum"]["nbar"] <= np.nanmin(table["nbar"]) + 1e-9
    assert body["advantage_db"] > 5


@pytest.mark.parametrize("command", ["sideband", "limits", "heating", "calibrate-g0", "noise"])
def test_commands_succeed(tmp_path, command):
    code, out = run(tmp_path, command, "--config", fast_config(tmp_path))
    assert code == 0
    manifest = load_json(out / "manifest.json")
    assert manifest["command"] == command
    for name in manifest["files"]:
        assert (out / name).exists()


@pytest.mark.parametrize("model", sorted(DATA_COLUMNS))
def test_fit_synthetic_and_from_file(tmp_path, model):
    stem = "fit_" + model.replace("-", "_")
    code, out = run(tmp_path, "fit", model, "--seed", "3")
    assert code == 0
    first = load_json(out / f"{stem}.json")
    assert first["fit"]["converged"]
    code, again = run(tmp_path, "fit", model, "--data", str(out / f"{stem}_data.csv"), out="again")
    assert code == 0
    second = load_json(again / f"{stem}.json")
    for name, value in first["fit"]["estimates"].items():
        assert second["fit"]["estimates"][name] == pytest.approx(value, rel=1e-9)


def test_fit_data_missing_column(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("t,y\n0,1\n1,2\n")
    code, _ = run(tmp_path, "fit", "heating", "--data", str(data))
    assert code == 2
    assert "time_s" in capsys.readouterr().err


def test_outputs_are_byte_identical_per_seed(tmp_path):
    _, a = run(tmp_path, "fit", "lorentzian", "--seed", "5", out="a")
    _, b = run(tmp_path, "fit", "lorentzian", "--seed", "5", out="b")
    _, c = run(tmp_path, "fit", "lorentzian", "--seed", "6", out="c")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "fit_lorentzian_data.csv").read_bytes() != (c / "fit_lorentzian_data.csv").read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fbcool.cli", "validate"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "config hash" in proc.stdout

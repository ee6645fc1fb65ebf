import csv
import hashlib
import json
import subprocess
import sys

import pytest

from levnmr import cli
from levnmr.config import preset_names, read_preset
from levnmr.spin import NVParams, eslac_field

FAST_ALIGN = "[align]\nn_scenarios = 2\nmax_offset_deg = 10\n"


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def _cfg(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def test_levels_header_and_crossing(tmp_path):
    code, out = _run(tmp_path, "levels")
    assert code == 0
    assert (out / "levels_ground.csv").read_text().splitlines()[0] == "B_gauss,level_label,energy_MHz"
    doc = json.loads((out / "levels.json").read_text())
    assert doc["excited_crossing_in_sweep_g"] == pytest.approx(eslac_field(NVParams()), abs=0.5)
    assert doc["excited_crossing_in_sweep_g"] == pytest.approx(510.0, abs=1.0)
    assert (out / "levels_p1.csv").exists()


def test_empty_sweep_exit_2(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[levels]\nb_min = 100\nb_max = 0\nb_step = 1\n")
    code, out = _run(tmp_path, "levels", "--config", cfg)
    assert code == 2
    assert "b_max" in capsys.readouterr().err
    assert not out.exists()


def test_missing_key_exit_2(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[levels]\nb_min = 0\nb_step = 1\n")
    code, _ = _run(tmp_path, "levels", "--config", cfg)
    assert code == 2
    assert "missing key 'b_max'" in capsys.readouterr().err


def test_unknown_subcommand_exit_2(capsys):
    assert cli.main(["plot"]) == 2
    assert "usage" in capsys.readouterr().err


def test_no_subcommand_exit_2(capsys):
    assert cli.main([]) == 2


@pytest.mark.parametrize("seed", ["-1", str(2**64), "abc"])
def test_seed_validation(seed, capsys):
    assert cli.main(["rabi", "--seed", seed]) == 2


def test_seed_accepts_full_range(tmp_path):
    code, out = _run(tmp_path, "rabi", "--seed", str(2**64 - 1))
    assert code == 0
    assert json.loads((out / "manifest.json").read_text())["seed"] == 2**64 - 1


def test_config_and_preset_exclusive(tmp_path):
    cfg = _cfg(tmp_path, FAST_ALIGN)
    code, _ = _run(tmp_path, "align", "--config", cfg, "--preset", "main_alignment_campaign")
    assert code == 2


def test_unknown_preset_and_file(tmp_path):
    assert _run(tmp_path, "rabi", "--preset", "nope")[0] == 2
    assert _run(tmp_path, "rabi", "--config", str(tmp_path / "missing.ini"))[0] == 2


def test_unknown_nv_key_exit_2(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[nv]\nDex = 1400\n[levels]\nb_min = 0\nb_max = 10\nb_step = 1\n")
    assert _run(tmp_path, "levels", "--config", cfg)[0] == 2
    assert "Dex" in capsys.readouterr().err


def test_ramsey_preset_fit(tmp_path):
    code, out = _run(tmp_path, "ramsey")
    assert code == 0
    fit = json.loads((out / "ramsey.json").read_text())["fit"]
    assert fit["decay_us"] == pytest.approx(120.0, abs=1.0)
    assert fit["frequency_khz"] == pytest.approx(10.0, rel=1e-3)


def test_odnmr_preset_centers(tmp_path):
    code, out = _run(tmp_path, "odnmr")
    assert code == 0
    lines = json.loads((out / "odnmr.json").read_text())["lines"]
    assert sorted(l["center"] for l in lines) == pytest.approx([4.806, 5.074], abs=5e-3)


def test_manifest_lists_every_file(tmp_path):
    code, out = _run(tmp_path, "levels", "--preset", "sm_energy_levels")
    man = json.loads((out / "manifest.json").read_text())
    listed = {f["name"]: f for f in man["files"]}
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert set(listed) == on_disk
    for name, entry in listed.items():
        data = (out / name).read_bytes()
        assert entry["sha256"] == hashlib.sha256(data).hexdigest()
        assert entry["bytes"] == len(data)
    assert man["config_source"] == "preset:sm_energy_levels"
    assert man["exit_code"] == 0
    assert "wall_time_s" not in man
    assert set(man["versions"]) == {"levnmr", "python", "numpy", "scipy"}


def test_timing_flag(tmp_path):
    code, out = _run(tmp_path, "confine", "--timing")
    assert json.loads((out / "manifest.json").read_text())["wall_time_s"] >= 0


def test_formats(tmp_path):
    _, csv_only = _run(tmp_path, "odmr", "--format", "csv", name="a")
    assert sorted(p.name for p in csv_only.iterdir()) == ["manifest.json", "odmr.csv"]
    _, js = _run(tmp_path, "odmr", "--format", "json", name="b")
    assert sorted(p.name for p in js.iterdir()) == ["manifest.json", "odmr.json"]
    doc = json.loads((js / "odmr.json").read_text())
    assert doc["data"]["columns"] == ["frequency_MHz", "pl"]
    assert len(doc["data"]["rows"]) == len(_rows(csv_only / "odmr.csv")) - 1


def test_csv_encoding(tmp_path):
    _, out = _run(tmp_path, "confine")
    raw = (out / "confine.csv").read_bytes()
    assert b"\r" not in raw
    raw.decode("utf-8")
    rows = _rows(out / "confine.csv")
    assert rows[0] == ["radius_um", "dtheta_deg_2000Hz", "dtheta_deg_100Hz"]
    assert all(len(r) == 3 for r in rows)


def test_confine_min_diameters(tmp_path):
    _, out = _run(tmp_path, "confine")
    d = json.loads((out / "confine.json").read_text())["min_diameter_um"]
    assert d["100.0"] == pytest.approx(11.3, abs=0.5)
    assert d["2000.0"] == pytest.approx(3.4, abs=0.1)


def test_fit_failure_exit_3(tmp_path, monkeypatch):
    from levnmr import dynamics

    real = dynamics.fit_damped_cosine

    def bad(trace, **kw):
        r = real(trace, **kw)
        return type(r)(**{**r.__dict__, "converged": False, "message": "forced"})

    monkeypatch.setattr(cli, "fit_damped_cosine", bad)
    code, out = _run(tmp_path, "rabi")
    assert code == 3
    assert json.loads((out / "manifest.json").read_text())["exit_code"] == 3


def test_presets_subcommand(capsys):
    assert cli.main(["presets"]) == 0
    assert capsys.readouterr().out.split() == preset_names()


def _dir_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.mark.parametrize("argv", [
    ("levels",), ("odmr", "--preset", "sm_odmr_misaligned"), ("odnmr", "--preset", "sm_odnmr_lambda_436G"),
    ("rabi",), ("ramsey", "--preset", "sm_ramsey_bulk"), ("confine",),
])
def test_byte_identical_reruns(tmp_path, argv):
    _, a = _run(tmp_path, *argv, "--seed", "7", name="a")
    _, b = _run(tmp_path, *argv, "--seed", "7", name="b")
    assert _dir_bytes(a) == _dir_bytes(b)


def test_align_deterministic_and_jobs_independent(tmp_path):
    cfg = _cfg(tmp_path, FAST_ALIGN)
    _, a = _run(tmp_path, "align", "--config", cfg, "--seed", "3", name="a")
    _, b = _run(tmp_path, "align", "--config", cfg, "--seed", "3", name="b")
    _, c = _run(tmp_path, "align", "--config", cfg, "--seed", "3", "--jobs", "2", name="c")
    assert _dir_bytes(a) == _dir_bytes(b)
    ca = {k: v for k, v in _dir_bytes(a).items() if k != "manifest.json"}
    cc = {k: v for k, v in _dir_bytes(c).items() if k != "manifest.json"}
    assert ca == cc
    rows = _rows(a / "align.csv")
    assert rows[0][:2] == ["scenario_seed", "success"]
    assert [r[0] for r in rows[1:]] == ["3", "4"]


def test_noisy_trace_seeded(tmp_path):
    cfg = _cfg(tmp_path, "[rabi]\nrabi_khz = 8.5\nt1_rho_us = 840\nt_min_us = 0\nt_max_us = 600\n"
                         "t_step_us = 2\nnoise_sigma = 0.02\n")
    _, a = _run(tmp_path, "rabi", "--config", cfg, "--seed", "1", name="a")
    _, b = _run(tmp_path, "rabi", "--config", cfg, "--seed", "2", name="b")
    assert (a / "rabi.csv").read_bytes() != (b / "rabi.csv").read_bytes()


def test_dnp_small_map(tmp_path):
    cfg = _cfg(tmp_path, "[dnp]\nb_min = 500\nb_max = 520\nb_step = 5\ntheta_min = 0\ntheta_max = 1\n"
                         "theta_step = 0.5\nangle_std_deg = 0.5\nn_samples = 50\n")
    code, out = _run(tmp_path, "dnp", "--config", cfg)
    assert code == 0
    rows = _rows(out / "dnp_map.csv")
    assert rows[0] == ["B_gauss", "theta_deg", "P", "p_plus1", "p_0", "p_minus1"]
    assert len(rows) == 1 + 5 * 3
    summary = json.loads((out / "dnp_map.json").read_text())
    assert summary["argmax"]["theta_deg"] == 0.0
    assert "levitated" in summary and "uncalibrated" in summary


@pytest.mark.parametrize("name", [n for n in preset_names() if n not in ("main_alignment_campaign", "sm_dnp_map")])
def test_every_preset_runs(tmp_path, name):
    cp = read_preset(name)
    cmd = next(s for s in cp.sections() if s in cli.COMMANDS)
    assert _run(tmp_path, cmd, "--preset", name)[0] == 0


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "levnmr.cli", "confine", "--out", str(tmp_path / "o")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "levnmr.cli", "bogus"], capture_output=True, text=True)
    assert r.returncode == 2 and "usage" in r.stderr

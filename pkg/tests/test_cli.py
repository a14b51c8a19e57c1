import json

import pytest

from layerbound import cli
from layerbound.scenario import canonical_json, load_scenario

PRESET = ["--preset", "paper-vi"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_bound_bits_mode(capsys):
    code, out, _ = run(capsys, "bound", *PRESET, "--snr-dB", "6", "--hops", "3", "--epsilon", "1e-6",
                       "--frame-bits", "1.1e6")
    assert code == 0
    meta, rows = cli.read_csv(out)
    assert meta["command"] == "bound" and list(rows[0]) == list(cli.BOUND_COLUMNS)
    row = rows[0]
    assert row["mode"] == "bits" and row["stable"] == "true"
    assert 0.8e6 < float(row["d_bits"]) < 1.1e6
    assert float(row["avg_capacity_bps"]) == pytest.approx(4.24e6, rel=0.01)


def test_bound_probability_mode_cap(capsys):
    code, out, _ = run(capsys, "bound", *PRESET, "--snr-dB", "10", "--hops", "3", "--d-bits", "2e6",
                       "--frame-bits", "1.5e6")
    row = cli.read_csv(out)[1][0]
    assert code == 0 and float(row["epsilon"]) == 1.0 and row["capped"] == "true"


def test_exit_codes(capsys):
    assert run(capsys, "bound", *PRESET, "--snr-dB", "3", "--hops", "3", "--epsilon", "1e-6",
               "--frame-bits", "2.5e6")[0] == cli.EXIT_UNSTABLE
    code, out, _ = run(capsys, "bound", *PRESET, "--snr-dB", "3", "--hops", "3", "--epsilon", "1e-6",
                       "--frame-bits", "2.5e6", "--allow-unstable")
    assert code == 0 and cli.read_csv(out)[1][0]["stable"] == "false"
    assert run(capsys, "bound", "--snr-dB", "3", "--epsilon", "1e-6", "--frame-bits", "1e6")[0] == cli.EXIT_USAGE
    assert run(capsys, "bound", *PRESET, "--snr-dB", "3", "--epsilon", "2", "--frame-bits", "1e6")[0] == cli.EXIT_USAGE
    assert run(capsys, "bound", *PRESET, "--snr-dB", "3", "--epsilon", "0.1")[0] == cli.EXIT_USAGE
    assert run(capsys, "bound", "--scenario", "/no/such.json")[0] == cli.EXIT_USAGE
    assert run(capsys, "simulate", *PRESET, "--snr-dB", "10", "--frame-bits", "1e6",
               "--slots", "1000")[0] == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        cli.main(["bound", "--out", "xml"])
    assert e.value.code == 2


def test_logs_go_to_stderr(capsys):
    code, out, err = run(capsys, "bound", *PRESET, "--snr-dB", "3", "--hops", "3", "--epsilon", "1e-6",
                         "--frame-bits", "2.5e6")
    assert out == "" and "unstable" in err


def test_json_output(capsys):
    code, out, _ = run(capsys, "bound", *PRESET, "--snr-dB", "10", "--hops", "1", "--epsilon", "1e-3",
                       "--layers", "10", "--out", "json")
    doc = json.loads(out)
    assert doc["command"] == "bound" and doc["columns"] == list(cli.BOUND_COLUMNS)
    assert doc["rows"][0]["layers"] == 10.0


def test_sweep_snr_axis_monotone(capsys):
    code, out, _ = run(capsys, "sweep", *PRESET, "--hops", "3", "--frame-bits", "1.6e6", "--d-bits", "1.2e6",
                       "--axis", "snr_dB=8:14:4")
    rows = cli.read_csv(out)[1]
    eps = [float(r["epsilon"]) for r in rows]
    assert code == 0 and len(rows) == 4 and all(a > b for a, b in zip(eps, eps[1:]))


def test_sweep_frame_axis_interior_optimum_and_fluid_columns(capsys):
    code, out, _ = run(capsys, "sweep", *PRESET, "--hops", "3", "--snr-dB", "6", "--epsilon", "1e-6",
                       "--axis", "layers=2:20:10")
    rows = cli.read_csv(out)[1]
    d = [float(r["d_eps_bits"]) for r in rows]
    k = d.index(max(d))
    assert 0 < k < len(d) - 1
    for r in rows:
        if r["stable"] == "true" and r["capped"] == "false" and float(r["d_eps_bits"]) > 0:
            assert float(r["fluid_d_eps_bits"]) == pytest.approx(float(r["d_eps_bits"]))


def test_sweep_hops_ordering(capsys):
    code, out, _ = run(capsys, "sweep", *PRESET, "--snr-dB", "10", "--frame-bits", "1.6e6",
                       "--epsilon", "1e-5", "--axis", "hops=1,3,5")
    d = [float(r["d_eps_bits"]) for r in cli.read_csv(out)[1]]
    assert d[0] >= d[1] >= d[2]


def test_sweep_two_axes_and_validation(capsys):
    code, out, _ = run(capsys, "sweep", *PRESET, "--epsilon", "1e-5", "--frame-bits", "1e6",
                       "--axis", "snr_dB=6,10", "--axis", "hops=1,3")
    assert code == 0 and len(cli.read_csv(out)[1]) == 4
    for bad in (["--axis", "color=1"], ["--axis", "hops=1.5"], [], ["--axis", "snr_dB="],
                ["--axis", "d_bits=1", "--axis", "epsilon=0.1"]):
        assert run(capsys, "sweep", *PRESET, "--epsilon", "1e-5", "--frame-bits", "1e6", *bad)[0] == cli.EXIT_USAGE


def test_simulate_seed_repeat_identical(capsys):
    args = ["simulate", *PRESET, "--snr-dB", "10", "--hops", "3", "--frame-bits", "2.08e6",
            "--slots", "200000", "--seed", "9"]
    a = run(capsys, *args)
    b = run(capsys, *args)
    assert a[0] == 0 and a[1] == b[1]
    rows = cli.read_csv(a[1])[1]
    assert len(rows) == 20 and all(r["dominated"] == "true" for r in rows)


def test_simulate_flags_near_saturation(capsys):
    code, out, err = run(capsys, "simulate", *PRESET, "--snr-dB", "8", "--hops", "3", "--frame-bits",
                         "2.08e6", "--slots", "100000", "--d-grid", "8e5,1.6e6")
    rows = cli.read_csv(out)[1]
    assert code == 0 and all(r["near_saturation"] == "true" for r in rows)
    assert "saturation" in err


def test_simulate_reports_dominance_violation(capsys, monkeypatch):
    from layerbound import bounds
    real = bounds.departure_tail_closed

    def too_small(*a, **k):
        res = real(*a, **k)
        return bounds.BoundResult(0.0, res.theta_star, True)

    monkeypatch.setattr(bounds, "departure_tail_closed", too_small)
    code, _, _ = run(capsys, "simulate", *PRESET, "--snr-dB", "8", "--hops", "3", "--frame-bits", "2.08e6",
                     "--slots", "100000")
    assert code == cli.EXIT_DOMINANCE


def test_adapt_fig9_echo_and_switch(capsys):
    code, out, _ = run(capsys, "adapt", "--scenario", "fig9")
    meta, rows = cli.read_csv(out)
    assert code == 0
    assert meta["scenario"] == canonical_json(load_scenario("fig9").raw)
    assert [r["path"] for r in rows] == ["direct", "direct", "relay3"]
    assert [r["path_switch"] for r in rows] == ["false", "false", "true"]
    assert float(rows[2]["start_s"]) == 70.0


def test_adapt_fig8_with_simulation(capsys):
    code, out, _ = run(capsys, "adapt", "--scenario", "fig8", "--simulate", "--slots", "100000")
    rows = cli.read_csv(out)[1]
    r = [float(x["r_bits"]) for x in rows]
    assert code == 0 and r[1] < r[0] == r[2]
    assert all(x["sim_reliable"] == "true" for x in rows)


def test_adapt_opt_column(capsys, tmp_path):
    raw = load_scenario("fig8").raw | {"video": {"layer_payload_bits": 100000, "max_layers": 4}}
    raw["epochs"] = raw["epochs"][:1]
    f = tmp_path / "s.json"
    f.write_text(json.dumps(raw))
    code, out, _ = run(capsys, "adapt", "--scenario", str(f), "--opt", "--slots", "100000")
    row = cli.read_csv(out)[1][0]
    assert code == 0 and int(row["opt_layers"]) == 4


def test_adapt_empty_epoch_list(capsys, tmp_path):
    raw = dict(load_scenario("fig8").raw)
    del raw["epochs"]
    f = tmp_path / "s.json"
    f.write_text(json.dumps(raw))
    code, out, _ = run(capsys, "adapt", "--scenario", str(f), "--out", "json")
    doc = json.loads(out)
    assert code == 0 and len(doc["rows"]) == 1 and doc["scenario"] == raw


def test_adapt_needs_scenario(capsys):
    assert run(capsys, "adapt", *PRESET, "--epsilon", "1e-5")[0] == cli.EXIT_USAGE


def test_scenario_flags_override(capsys):
    code, out, _ = run(capsys, "bound", "--scenario", "fig9", "--path-id", "relay3", "--layers", "10",
                       "--snr-dB", "12")
    row = cli.read_csv(out)[1][0]
    assert code == 0 and row["hops"] == "3" and float(row["snr_dB"]) == 12.0
    assert float(row["epsilon"]) == 1e-5

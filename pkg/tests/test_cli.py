import json
import math

import pandas as pd
import pytest

from cli.experiments import COVARIANCE_BINS_REQUIRED, corrected_limit, covariance_law
from crem_sim import build_parser, run
from modules.crem.oracles import first_moment_b3
from modules.crem.phases import classify, m_of_t
from reports.render import CSV_COLUMNS, PROVENANCE_FILE, RESULTS_FILE, VERDICTS_FILE, schema_line


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in ("CREM_SEED", "CREM_POPULATION_CAP", "CREM_WORKERS"):
        monkeypatch.delenv(name, raising=False)


def _config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _results(out):
    return pd.read_csv(out / RESULTS_FILE, comment="#")


def _verdicts(out):
    return json.loads((out / VERDICTS_FILE).read_text(encoding="utf-8"))


def _named(out, name):
    return [v for v in _verdicts(out)["verdicts"] if v["name"] == name]


def test_parser_lists_every_subcommand():
    parser = build_parser()
    args = parser.parse_args(["oracle", "--seed", "3"])
    assert args.command == "oracle"
    assert args.seed == 3
    assert args.out == "out"
    with pytest.raises(SystemExit):
        parser.parse_args(["nonsense"])


def test_oracle_writes_all_three_files(tmp_path):
    cfg = _config(tmp_path, "betas = 0.3,1.1\ntimes = 4, 6\nrho = 0.7\n")
    out = tmp_path / "out"
    assert run(["oracle", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / RESULTS_FILE).read_text(encoding="utf-8").splitlines()
    assert lines[0] == schema_line("oracle")
    assert lines[1] == ",".join(CSV_COLUMNS["oracle"])
    assert len(lines) == 4
    verdicts = json.loads((out / VERDICTS_FILE).read_text(encoding="utf-8"))
    assert verdicts["experiment"] == "oracle"
    assert verdicts["passed"] is True
    provenance = json.loads((out / PROVENANCE_FILE).read_text(encoding="utf-8"))
    assert provenance["config"]["rho"] == 0.7
    assert provenance["config_source"]["source"] == "text file"


def test_zero_temperature_sum_is_population(tmp_path):
    cfg = _config(tmp_path, "t = 3\nreplicas = 6\nbetas = 0,0\n")
    out = tmp_path / "out"
    assert run(["run", "--config", cfg, "--out", str(out)]) == 0
    frame = _results(out)
    assert len(frame) == 6
    assert (frame["value_re"] == frame["n_t"]).all()
    assert (frame["value_im"] == 0).all()


def test_run_is_byte_identical_across_workers(tmp_path):
    cfg = _config(tmp_path, "t = 3\nreplicas = 8\nbetas = 0,0; 0.3,1.1; 2,0\nrho = 0.4\nseed = 5\n")
    outs = []
    for workers, label in ((1, "a"), (1, "b"), (2, "c")):
        out = tmp_path / label
        assert run(["run", "--config", cfg, "--out", str(out), "--workers", str(workers)]) == 0
        outs.append(out)
    for name in (RESULTS_FILE, VERDICTS_FILE, PROVENANCE_FILE):
        first = (outs[0] / name).read_bytes()
        assert all((o / name).read_bytes() == first for o in outs[1:])


def test_seed_flag_changes_the_draws(tmp_path):
    cfg = _config(tmp_path, "t = 3\nreplicas = 4\nbetas = 0.3,1.1\n")
    a, b = tmp_path / "a", tmp_path / "b"
    run(["run", "--config", cfg, "--out", str(a), "--seed", "1"])
    run(["run", "--config", cfg, "--out", str(b), "--seed", "2"])
    assert (a / RESULTS_FILE).read_bytes() != (b / RESULTS_FILE).read_bytes()


def test_wrong_phase_is_a_config_error(tmp_path, capsys):
    cfg = _config(tmp_path, "t = 3\nreplicas = 4\nbetas = 0.3,0.3\n")
    assert run(["b3", "--config", cfg, "--out", str(tmp_path / "out")]) == 2
    assert "needs B3" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_missing_config_exits_with_two(tmp_path):
    assert run(["oracle", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "out")]) == 2


def test_validate_speed_reports_ok(tmp_path):
    cfg = _config(tmp_path, "speed = exp:3.0\n")
    out = tmp_path / "out"
    assert run(["validate-speed", "--config", cfg, "--out", str(out)]) == 0
    frame = _results(out)
    assert list(frame["condition"]) == ["ok"]


def test_covariance_rows_follow_bins(tmp_path):
    cfg = _config(tmp_path, "t = 2\nreplicas = 120\nrho = 0.5\n")
    out = tmp_path / "out"
    run(["covariance", "--config", cfg, "--out", str(out)])
    frame = _results(out)
    assert list(frame.columns) == list(CSV_COLUMNS["covariance"])
    assert len(frame) == 20


GOLDEN = [
    ("oracle", "betas = 0.3,1.1\ntimes = 4, 6\nrho = 0.7\n", 2, {"oracle_plateau"}),
    (
        "b1",
        "betas = 0.3,0.4\nrho = 0.5\ntimes = 2, 3\nreplicas = 40\n",
        80,
        {"b1_mean_one", "b1_second_moment", "b1_variance_plateau"},
    ),
    (
        "b2",
        "betas = 2,0\ntimes = 3, 4\nreplicas = 120\n",
        240,
        {"b2_centering", "b2_cluster_counts", "b2_tail_index", "b2_centering_drift"},
    ),
    (
        "b3",
        "betas = 0.3,1.1\nrho = 0.7\nt = 3\nreplicas = 120\n",
        120,
        {"b3_second_moment", "b3_diagonal_inclusion", "b3_mixed_moments", "b3_phase_uniform", "b3_gaussianity", "b3_c2_ratio"},
    ),
    ("envelope", "t = 4\nreplicas = 30\nenvelope_C = 0.5, 5\n", 2, {"envelope_union_bound", "envelope_monotone_in_C"}),
    ("scan", "betas = 0.3,0.4; 2,0\nt = 4\nreplicas = 8\n", 2, {"scan_within_tolerance"}),
    ("moment", "betas = 0.3,0.4\nrho = 0.5\nt = 2\nreplicas = 50\n", 2, {"first_moment_selected", "first_moment_rejected"}),
]


@pytest.mark.parametrize("command, text, rows, names", GOLDEN, ids=[g[0] for g in GOLDEN])
def test_experiment_files_are_golden(tmp_path, command, text, rows, names):
    cfg = _config(tmp_path, text + "seed = 7\n")
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = {run([command, "--config", cfg, "--out", str(out)]) for out in outs}
    assert len(codes) == 1 and codes <= {0, 1}
    lines = (outs[0] / RESULTS_FILE).read_text(encoding="utf-8").splitlines()
    assert lines[0] == schema_line(command)
    assert lines[1] == ",".join(CSV_COLUMNS[command])
    assert len(lines) == rows + 2
    verdicts = _verdicts(outs[0])
    assert verdicts["schema"].startswith(f"{command}/v")
    assert {v["name"] for v in verdicts["verdicts"]} == names
    assert verdicts["passed"] is (codes == {0})
    for name in (RESULTS_FILE, VERDICTS_FILE, PROVENANCE_FILE):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_oracle_rows_carry_the_exact_first_moment(tmp_path):
    cfg = _config(tmp_path, "betas = 0.3,0.4\ntimes = 2\nrho = 0.5\n")
    out = tmp_path / "out"
    assert run(["oracle", "--config", cfg, "--out", str(out)]) == 0
    row = _results(out).iloc[0]
    assert row["first_moment_re"] == pytest.approx(math.exp(2.0 * (1.0 + 0.5 * (0.09 - 0.16))) * math.cos(0.12), rel=1e-12)
    assert row["first_moment_im"] == pytest.approx(math.exp(2.0 * (1.0 + 0.5 * (0.09 - 0.16))) * math.sin(0.12), rel=1e-12)


def test_b3_gate_accepts_a_correct_simulation(tmp_path):
    sigma, tau, rho, t = 0.3, 1.1, 0.7, 3.0
    cfg = _config(tmp_path, f"betas = {sigma},{tau}\nrho = {rho}\nt = {t}\nreplicas = 600\nseed = 3\n")
    out = tmp_path / "out"
    run(["b3", "--config", cfg, "--out", str(out)])
    (mixed,) = _named(out, "b3_mixed_moments")
    mean = first_moment_b3(sigma, tau, rho, t)
    assert mixed["center"] == pytest.approx([mean.real, mean.imag], rel=1e-12)
    assert mixed["mixed_moment_z"]["1,0"] <= 4.0
    assert mixed["mixed_moment_z"]["2,0"] <= 4.0
    assert mixed["passed"] is True
    (phase,) = _named(out, "b3_phase_uniform")
    if not phase["settled"]:
        assert phase["passed"] is None


def test_scan_b2_target_includes_the_centred_maximum():
    label = classify(2.0, 0.0)
    t = 10.0
    assert corrected_limit(label, 2.0, t, [-1.6, -1.5, -1.4]) == pytest.approx(2.0 * (m_of_t(t) - 1.5) / t)
    assert math.isnan(corrected_limit(label, 2.0, t, []))
    b1 = classify(0.3, 0.4)
    assert corrected_limit(b1, 0.3, t, [-1.5]) == b1.predicted_limit


def test_scan_b2_point_within_tolerance(tmp_path):
    cfg = _config(tmp_path, "betas = 2,0\nt = 8\nreplicas = 16\nseed = 2\n")
    out = tmp_path / "out"
    assert run(["scan", "--config", cfg, "--out", str(out)]) == 0
    frame = _results(out)
    assert bool(frame["within_tolerance"].iloc[0])
    assert frame["corrected"].iloc[0] != pytest.approx(2.0 * m_of_t(8.0) / 8.0)


def test_envelope_constants_share_one_set_of_replicas(tmp_path):
    cfg = _config(tmp_path, "t = 5\nreplicas = 60\nenvelope_C = 20, 0.5, 2\nseed = 8\n")
    out = tmp_path / "out"
    run(["envelope", "--config", cfg, "--out", str(out)])
    frame = _results(out)
    assert list(frame["C"]) == [0.5, 2.0, 20.0]
    assert list(frame["p_hat"]) == sorted(frame["p_hat"], reverse=True)
    (monotone,) = _named(out, "envelope_monotone_in_C")
    assert monotone["passed"] is True


def _bins(n_within, n_filled, bins=20):
    rows = []
    for k in range(bins):
        if k < n_filled:
            cov = 1.0 if k < n_within else 10.0
            rows.append({"n": 50, "cov": cov, "se": 0.1, "predicted": 1.0})
        else:
            rows.append({"n": 0, "cov": math.nan, "se": math.nan, "predicted": math.nan})
    return pd.DataFrame(rows)


def test_covariance_law_counts_bins_out_of_twenty():
    assert covariance_law(_bins(5, 5)) == (False, 5, 5)
    assert covariance_law(_bins(COVARIANCE_BINS_REQUIRED, 20)) == (True, COVARIANCE_BINS_REQUIRED, 20)
    assert covariance_law(_bins(COVARIANCE_BINS_REQUIRED - 1, 19)) == (False, COVARIANCE_BINS_REQUIRED - 1, 19)


def test_b2_clusters_sorted_by_count_and_no_isotropy_at_zero_tau(tmp_path):
    cfg = _config(tmp_path, "betas = 2,0\nt = 5\nreplicas = 120\nsnapshot = 4\nseed = 6\n")
    out = tmp_path / "out"
    run(["b2", "--config", cfg, "--out", str(out)])
    assert _named(out, "b2_isotropy") == []
    (clusters,) = _named(out, "b2_cluster_counts")
    counts = [k for k, _ in clusters["histogram"]]
    assert counts == sorted(counts)
    assert sum(n for _, n in clusters["histogram"]) == 120

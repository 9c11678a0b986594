import json
import math

import numpy as np
import pytest

from vecmec.cli import main
from vecmec.config import preset_config
from vecmec.harness import RunReport, SweepCell, emit_plot_data, read_plot_data, run_experiment, run_sweep


def quick(**kw):
    base = dict(n_slots=15, eval_episodes=2, episodes=2, actor_hidden=8, critic_hidden=8, warmup=16, batch_size=16)
    base.update(kw)
    return preset_config("desk").replace(**base)


def test_no_arrivals_means_zero_throughput_full_success():
    rep = run_experiment(quick(beta=0.0, policy="single_hop"))
    assert rep.throughput == 0.0 and rep.success_rate == 1.0


@pytest.mark.parametrize("policy", ["single_hop", "multihop_greedy", "maddpg"])
def test_summary_recomputes_from_rows(policy):
    rep = run_experiment(quick(policy=policy))
    assert len(rep.rows) == 2 * 15
    assert math.isclose(rep.throughput, np.mean([r["completed_bits"] for r in rep.rows]), rel_tol=1e-9)
    gen = sum(r["generated_tasks"] for r in rep.rows)
    assert math.isclose(rep.success_rate, sum(r["completed_tasks"] for r in rep.rows) / gen, rel_tol=1e-12)


def test_outputs_identical_across_runs(tmp_path):
    cfg = quick(policy="maddpg", seed=3)
    a = run_experiment(cfg, out_dir=tmp_path / "a")
    b = run_experiment(cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
    assert (tmp_path / "a/train_log.csv").read_bytes() == (tmp_path / "b/train_log.csv").read_bytes()
    assert a.config_hash == b.config_hash and a.rows == b.rows


def test_report_json_round_trip(tmp_path):
    rep = run_experiment(quick(policy="single_hop"))
    rep.write_json(tmp_path / "r.json")
    back = RunReport.read_json(tmp_path / "r.json")
    assert back.rows == rep.rows and back.throughput == rep.throughput


def test_metric_csv_columns(tmp_path):
    run_experiment(quick(policy="single_hop"), out_dir=tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "slot,generated_bits,completed_bits,expired_bits,success_rate"
    assert [int(l.split(",")[0]) for l in lines[1:]] == list(range(30))


def test_sweep_shape_and_single_repeat():
    table = run_sweep("J", [1, 2], quick(), repeats=1, policies=("single_hop", "multihop_greedy"))
    thr = table["throughput"]
    assert [(c.x, c.policy) for c in thr] == [(1, "single_hop"), (1, "multihop_greedy"), (2, "single_hop"),
                                               (2, "multihop_greedy")]
    assert all(c.stderr == 0.0 and c.n == 1 for c in thr)


def test_sweep_repeats_give_stderr():
    table = run_sweep("beta", [0.5], quick(), repeats=3, policies=("single_hop",))
    cell = table["throughput"][0]
    assert cell.n == 3 and cell.stderr >= 0


def test_sweep_rejects_bad_input():
    with pytest.raises(ValueError):
        run_sweep("speed", [1], quick())
    with pytest.raises(ValueError):
        run_sweep("beta", [], quick())


def test_plot_data_round_trip(tmp_path):
    cells = [SweepCell(x, p, x * 10.0 + k, 0.5, 3) for x in (1, 2, 3, 4) for k, p in enumerate("abc")]
    path = emit_plot_data(cells, tmp_path / "fig.csv")
    rows = read_plot_data(path)
    assert len(rows) == 12
    assert rows == [(c.x, c.policy, c.mean, c.stderr) for c in cells]
    assert emit_plot_data([], tmp_path / "none.csv") is None
    assert not (tmp_path / "none.csv").exists()


def test_cli_run_and_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_slots": 10, "eval_episodes": 1}))
    assert main(["run", "--config", str(cfg), "--policy", "single_hop", "--seed", "2", "--out", str(tmp_path / "o")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["policy"] == "single_hop" and out["seed"] == 2
    assert (tmp_path / "o/report.json").exists()
    cfg.write_text(json.dumps({"gamma": 2.0}))
    assert main(["run", "--config", str(cfg)]) == 2
    assert "gamma" in capsys.readouterr().err


def test_cli_sweep_and_train(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_slots": 8, "eval_episodes": 1, "actor_hidden": 8, "critic_hidden": 8,
                               "warmup": 8, "batch_size": 8}))
    assert main(["sweep", "--config", str(cfg), "--axis", "servers", "--values", "1", "2", "--repeats", "1",
                 "--policies", "single_hop", "--out", str(tmp_path / "s")]) == 0
    assert len(read_plot_data(tmp_path / "s/servers_throughput.csv")) == 2
    assert main(["train", "--config", str(cfg), "--episodes", "1", "--ckpt", str(tmp_path / "ck")]) == 0
    assert len(list((tmp_path / "ck").glob("agent_*.json"))) == 20

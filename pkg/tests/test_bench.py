import dataclasses as dc

import pytest

from deepckpt import bench
from deepckpt.bench import SCENARIOS, Scenario, calibrate, load_scenario, run_scenario
from deepckpt.ckpt_engine import Strategy
from deepckpt.cluster_model import build_cluster, default_spec
from deepckpt.errors import Infeasible, ScenarioError
from deepckpt.recovery import FailureKind


def calibrated_xpic(**changes):
    cal = calibrate("scr-overhead=8%")
    return dc.replace(SCENARIOS["xpic-scr"], iter_seconds=float(cal.overrides["workload.iter_seconds"]), **changes)


def test_named_scenarios_are_complete():
    for name, s in SCENARIOS.items():
        s.validate(default_spec())
        assert s.name == name
        assert all(getattr(s, f.name) is not None for f in dc.fields(s) if f.name not in ("fail_at", "flush"))


def test_xpic_parameters():
    s = SCENARIOS["xpic-scr"]
    assert (s.iterations, s.cp_interval, s.bytes_per_node, s.fail_at, s.strategy) == (100, 10, 8e9, 60, Strategy.PARTNER)


@pytest.mark.parametrize("bad", [
    {"cp_interval": 0},
    {"iterations": -1},
    {"fail_at": 101},
    {"kind": "mystery"},
    {"nodes": 40},
    {"victim": 8},
])
def test_inconsistent_scenarios(bad):
    with pytest.raises(ScenarioError):
        run_scenario(dc.replace(SCENARIOS["xpic-scr"], **bad))


def test_four_bars():
    table = run_scenario(calibrated_xpic())
    runs = [r["run"] for r in table.rows]
    assert runs == ["nocp-noerr", "cp-noerr", "nocp-err", "cp-err"]
    totals = {r["run"]: r["total_s"] for r in table.rows}
    assert min(totals, key=totals.get) == "nocp-noerr"
    cp_overhead = table.row("cp-noerr")["ckpt_overhead_s"]
    assert totals["cp-err"] <= totals["nocp-err"] + cp_overhead


@pytest.mark.parametrize("fail_at", [5, 15, 60, 99, 100])
@pytest.mark.parametrize("strategy", [Strategy.PARTNER, Strategy.BUDDY, Strategy.DIST_XOR])
def test_savings_sign(fail_at, strategy):
    table = run_scenario(calibrated_xpic(fail_at=fail_at, strategy=strategy))
    err, cp_err = table.row("nocp-err")["total_s"], table.row("cp-err")
    assert cp_err["total_s"] <= err + cp_err["ckpt_overhead_s"] + cp_err["recovery_s"] + 1e-9


def test_restart_resumes_at_last_checkpoint():
    s = calibrated_xpic()
    spec = default_spec()
    run = bench.run_app(s, spec, s.strategy, checkpoint=True, fail=True)
    assert run.restored_step == 50
    # 10..50 before the failure, 60..100 after the restart
    assert run.checkpoints == 10


def test_infeasible_recovery_flagged():
    s = calibrated_xpic(strategy=Strategy.SINGLE)
    table = run_scenario(s)
    assert table.infeasible
    assert table.row("cp-err")["total_s"] > table.row("nocp-err")["total_s"]


def test_transient_single_recovers_locally():
    table = run_scenario(calibrated_xpic(strategy=Strategy.SINGLE, fail_kind=FailureKind.PROCESS_TRANSIENT))
    assert not table.infeasible


def test_metrics_columns():
    text = run_scenario(SCENARIOS["weak-scale-io"]).to_csv()
    assert text.splitlines()[0] == ",".join(bench.METRIC_COLUMNS)
    assert bench.METRIC_COLUMNS == ("scenario", "strategy", "nodes", "run", "total_s", "ckpt_overhead_s",
                                    "recovery_s", "bytes_local", "bytes_remote", "bytes_global", "bytes_nam",
                                    "savings_pct")


def test_repetitions_run_sequentially():
    table = run_scenario(dc.replace(SCENARIOS["xor-vs-nam"], repetitions=2))
    assert [r["run"] for r in table.rows] == ["cp.0", "cp.0", "cp.1", "cp.1"]
    assert table.rows[0]["total_s"] == table.rows[2]["total_s"]


def test_calibration_algebra():
    cal = calibrate("scr-overhead=8%")
    assert cal.values["t_iter"] == pytest.approx(10 * cal.values["t_cp"] / 0.08 / 100)
    assert cal.values["t_iter"] == pytest.approx(1.25 * cal.values["t_cp"])
    assert "workload.iter_seconds" in cal.config_text()


def test_zero_overhead_is_infeasible():
    with pytest.raises(Infeasible):
        calibrate("scr-overhead=0%")


def test_saving_band_report():
    cal = calibrate("nam-xor-saving∈[50,65]%")
    assert cal.in_band is True
    assert 50 <= cal.values["saving_pct"] <= 65
    assert calibrate("nam-xor-saving=[90,95]%").in_band is False


def test_unknown_target():
    with pytest.raises(ScenarioError):
        calibrate("speed=11")


def test_scenario_file(tmp_path):
    p = tmp_path / "mine.cfg"
    p.write_text("scenario.base = xpic-scr\nscenario.strategy = buddy\nworkload.iterations = 20\n"
                 "scenario.fail_at = 15\nnetwork.link_bw = 25e9\n")
    s, spec = load_scenario(str(p))
    assert (s.strategy, s.iterations, s.fail_at) == (Strategy.BUDDY, 20, 15)
    assert spec.network.link_bw == 25e9


def test_scenario_unknown_key(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("scenario.colour = blue\n")
    with pytest.raises(ScenarioError):
        load_scenario(str(p))


def test_unknown_scenario_name():
    with pytest.raises(ScenarioError):
        load_scenario("no-such-thing")


def test_calibration_override_file(tmp_path):
    cal = calibrate("scr-overhead=8%")
    p = tmp_path / "cal.cfg"
    p.write_text(cal.config_text())
    s, _ = load_scenario("xpic-scr", [p])
    assert s.iter_seconds == pytest.approx(cal.values["t_iter"])


def test_weak_scaling_rows():
    rows = run_scenario(SCENARIOS["weak-scale-io"]).rows
    assert [(r["strategy"], r["nodes"]) for r in rows] == [(m, n) for m in ("local", "global") for n in (2, 4, 8, 16)]
    assert all(r["bytes_local"] > 0 for r in rows if r["strategy"] == "local")
    assert all(r["bytes_global"] > 0 for r in rows if r["strategy"] == "global")


def test_fwi_rows():
    rows = run_scenario(SCENARIOS["fwi-offload"]).rows
    assert [r["run"] for r in rows] == ["nofail", "resilient", "naive"]


def test_events_csv():
    table = run_scenario(SCENARIOS["xor-vs-nam"])
    lines = table.events_csv().splitlines()
    assert lines[0] == "time_s,seq,kind,node,bytes,detail"
    assert any("[namxor.cp]" in line for line in lines)


def test_scenario_from_custom_machine():
    spec = default_spec().replace(cluster_nodes=4, booster_nodes=0)
    s = Scenario("tiny", "app", Strategy.PARTNER, nodes=4, iterations=10, iter_seconds=1.0,
                 bytes_per_node=10**6, cp_interval=2, fail_at=7)
    table = run_scenario(s, spec)
    assert table.row("cp-err")["recovery_s"] > 0
    build_cluster(spec)

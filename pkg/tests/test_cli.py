import subprocess
import sys

import pytest

from deepckpt.cli import main


def test_run_to_stdout(capsys):
    assert main(["run", "--scenario", "weak-scale-io"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("scenario,strategy,nodes,run,total_s")


def test_run_with_overrides(tmp_path):
    out, ev = tmp_path / "m.csv", tmp_path / "e.csv"
    rc = main(["run", "--scenario", "xpic-scr", "--strategy", "buddy", "--nodes", "4", "--cp-interval", "5",
               "--fail-at", "33", "--fail-kind", "transient", "--out", str(out), "--events", str(ev)])
    assert rc == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 5 and ",buddy,4,cp-err," in rows[-1]
    assert ev.read_text().startswith("time_s,seq,kind,node,bytes,detail")


def test_infeasible_recovery_exit_code(tmp_path):
    rc = main(["run", "--scenario", "xpic-scr", "--strategy", "single", "--out", str(tmp_path / "m.csv")])
    assert rc == 2


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["run", "--scenario", "xpic-scr", "--strategy", "raid6"])
    assert exc.value.code == 1
    assert main(["run", "--scenario", "nope"]) == 1
    assert main(["run", "--scenario", "xpic-scr", "--cp-interval", "0"]) == 1


def test_calibrate_writes_override(tmp_path, capsys):
    cfg = tmp_path / "cal.cfg"
    assert main(["calibrate", "scr-overhead=8%", "--out", str(cfg)]) == 0
    assert "t_iter=" in capsys.readouterr().out
    assert main(["run", "--scenario", "xpic-scr", "--config", str(cfg), "--out", str(tmp_path / "m.csv")]) == 0


def test_calibrate_infeasible():
    assert main(["calibrate", "scr-overhead=0%"]) == 2


def test_calibrate_band(capsys):
    assert main(["calibrate", "nam-xor-saving=[50,65]%"]) == 0
    assert "in_band=yes" in capsys.readouterr().out


def test_agg_commands(tmp_path, capsys):
    files = []
    for i in range(3):
        p = tmp_path / f"r{i}.bin"
        p.write_bytes(bytes([i]) * (100 * i + 1))
        files.append(str(p))
    c = tmp_path / "c.agg"
    assert main(["agg", "pack", str(c), *files]) == 0
    assert main(["agg", "inspect", str(c)]) == 0
    assert "container: VALID" in capsys.readouterr().out
    assert main(["agg", "verify", str(c)]) == 0
    assert main(["agg", "unpack", str(c), str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "rank00002.bin").read_bytes() == bytes([2]) * 201
    raw = bytearray(c.read_bytes())
    raw[-1] ^= 0xFF
    c.write_bytes(raw)
    assert main(["agg", "verify", str(c)]) == 2
    (tmp_path / "junk").write_bytes(b"nope")
    assert main(["agg", "inspect", str(tmp_path / "junk")]) == 2


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "deepckpt.cli", "agg", "verify", "/nonexistent/x.agg"],
                          capture_output=True, text=True)
    assert proc.returncode == 1

import json
import re
import subprocess
import sys

import pytest

from tilegraph.cli import EXIT_UNROUTABLE, main
from tilegraph.cronet import build_cronet
from tilegraph.cronet.model import load_config


def call(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_characterize_json_and_table(capsys):
    code, out, _ = call(capsys, "characterize", "--model", "cronet", "--size", "30x20")
    rep = json.loads(out)
    assert code == 0 and rep["totals"]["parameter_count"] == 418688
    assert [r["name"] for r in rep["layers"]][:2] == ["T1", "T2"]
    code, out, _ = call(capsys, "characterize", "--size", "30x20", "--table")
    assert code == 0 and out.splitlines()[-1].split()[0] == "total"


def test_characterize_model_file(tmp_path, capsys):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(load_config("30x10").to_dict()))
    code, out, _ = call(capsys, "characterize", "--model", str(path))
    assert code == 0 and json.loads(out)["size"] == "30x10"


def test_build_and_fuse(capsys, tmp_path):
    code, out, _ = call(capsys, "build", "--size", "30x10", "--emit-graph", str(tmp_path / "g.json"))
    assert code == 0 and json.loads(out)["findings"] == []
    assert (tmp_path / "g.json").exists()
    code, out, _ = call(capsys, "fuse", "--size", "30x20")
    rep = json.loads(out)
    assert rep["passes"] == ["l1", "l2", "l3"] and rep["external_nets"] == ["F", "U", "X"]
    assert rep["resources"]["engines"] == 223


def test_simulate_compare(capsys):
    code, out, _ = call(capsys, "simulate", "--size", "30x20", "--etype", "bf16", "--compare", "fp32")
    rep = json.loads(out)
    assert code == 0
    assert rep["compare"]["rel_l2"] <= 1e-2
    assert rep["compare"]["reference_forward"]["max_abs"] == 0.0
    assert max(rep["latency"]["breakdown"], key=rep["latency"]["breakdown"].get) == "B2"
    assert rep["traffic"]["intermediate_dram_bytes"] == 0


def test_place_naive_is_unroutable(capsys):
    code, out, _ = call(capsys, "place", "--strategy", "naive", "--model", "cronet", "--size", "30x20")
    rep = json.loads(out)
    assert code == EXIT_UNROUTABLE and rep["route"]["feasible"] is False
    code, out, _ = call(capsys, "route", "--size", "30x20")
    assert code == 0 and json.loads(out)["route"]["feasible"] is True


@pytest.mark.parametrize("suffix", [".txt", ".svg"])
def test_emit_map(capsys, tmp_path, suffix):
    path = tmp_path / f"map{suffix}"
    code, _, _ = call(capsys, "place", "--size", "30x10", "--emit-map", str(path))
    assert code == 0
    n = len(build_cronet("30x10").kernels)
    text = path.read_text()
    if suffix == ".svg":
        assert len(re.findall("<title>", text)) == n
    else:
        assert sum(tok.strip(".") != "" for tok in text.split()) == n


def test_reports_are_byte_identical(capsys):
    a = call(capsys, "report", "--size", "30x20", "--seed", "5")
    b = call(capsys, "report", "--size", "30x20", "--seed", "5")
    assert a == b and a[0] == 0


def test_fit(capsys, tmp_path):
    code, out, _ = call(capsys, "fit", "--write-assets", str(tmp_path))
    assert code == 0 and json.loads(out)["total_params"] == 418688
    assert (tmp_path / "cronet_60x20.json").exists()


def test_arch_flag_and_env(capsys, tmp_path, monkeypatch):
    small = tmp_path / "small.json"
    small.write_text(json.dumps({"columns": 38, "rows": 4}))
    code, _, err = call(capsys, "fuse", "--arch", str(small))
    assert code == 1 and "rows" in err
    monkeypatch.setenv("TILEGRAPH_ARCH", str(small))
    code, _, err = call(capsys, "fuse")
    assert code == 1 and err.startswith("tilegraph: error:")
    code, _, _ = call(capsys, "fuse", "--arch", str(tmp_path / "missing.json"))
    assert code == 1
    monkeypatch.delenv("TILEGRAPH_ARCH")
    code, _, err = call(capsys, "build", "--arch", str(tmp_path / "missing.json"))
    assert code == 1 and "not found" in err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["place", "--no-such-flag"])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        main([])
    assert ei.value.code == 2


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "tilegraph.cli", "characterize", "--size", "30x10", "--table"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and "B2" in r.stdout

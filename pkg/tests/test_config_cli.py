import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from gfrag.cli import EXIT_CONFIG, EXIT_EXACT, EXIT_OK, run
from gfrag.config import ConfigError, load_config, parse_config
from gfrag.parallel import WorkerError, chunks, compensated_sum, parallel_map

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

RW_TOML = """
[kernel]
type = "random_walk"
p = 0.25

[scaling]
gamma = 1.0

[triplet]
drift = -0.5

[model]
p_bar = 2.0
freezing = {freezing}

[grids]
n = [40, 80]
q = [1.0, 2.0]

[run]
reps = 20
seed = 3
"""


def write_cfg(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def rw_doc(**model):
    doc = {"kernel": {"type": "random_walk", "p": 0.25}, "scaling": {"gamma": 1.0},
           "model": {"p_bar": 2.0, **model}}
    return doc


def test_missing_gamma_names_field():
    doc = rw_doc()
    del doc["scaling"]["gamma"]
    with pytest.raises(ConfigError) as ei:
        parse_config(doc)
    assert ei.value.field == "scaling.gamma"


def test_bad_eps_names_field():
    with pytest.raises(ConfigError) as ei:
        parse_config(rw_doc(eps=1.5))
    assert ei.value.field == "model.eps"


def test_auto_freezing_resolves_to_one():
    cfg = parse_config(rw_doc(freezing="auto"))
    assert cfg.freezing == 1 and cfg.freezing_auto
    assert cfg.kernel.threshold == 1


def test_defaults():
    cfg = parse_config(rw_doc())
    assert cfg.omega == 2 and cfg.eps == 0.1
    assert cfg.n_grid == [100, 1000] and cfg.h_grid == [1, 2, 4, 8]
    assert cfg.q_grid == [0.5, 1.0, 1.5, 2.0]
    assert cfg.reps == 1000 and cfg.seed == 0


def test_shipped_configs_load():
    for name in ("ex_rw.toml", "ex_levy.toml", "ex_table.toml"):
        cfg = load_config(CONFIGS / name)
        assert cfg.kernel.threshold >= cfg.base_kernel.min_state - 1


def test_bad_table_row_names_n(tmp_path):
    (tmp_path / "k.csv").write_text("n,m,prob\n2,3,0.5\n2,1,0.4\n")
    p = write_cfg(tmp_path, '[kernel]\ntype = "table"\npath = "k.csv"\n[scaling]\ngamma = 1.0\n'
                            '[model]\np_bar = 2.0\nfreezing = 1\n')
    with pytest.raises(ConfigError, match="n=2"):
        load_config(p)


def test_resolved_config_records_auto(tmp_path):
    p = write_cfg(tmp_path, RW_TOML.format(freezing='"auto"'))
    out = tmp_path / "o"
    assert run(["exponents", "--config", str(p), "--out", str(out)]) == EXIT_OK
    res = json.loads((out / "resolved_config.json").read_text())
    assert res["model"]["freezing"] == 1 and res["model"]["freezing_auto"] is True
    assert "workers" not in res["run"]
    assert (out / "exponents.csv").exists() and (out / "assumptions.json").exists()


def test_cli_missing_gamma_exit_code(tmp_path, capsys):
    p = write_cfg(tmp_path, RW_TOML.format(freezing=1).replace("gamma = 1.0", ""))
    assert run(["exponents", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "scaling.gamma" in capsys.readouterr().err


def test_cli_unknown_flag(tmp_path):
    p = write_cfg(tmp_path, RW_TOML.format(freezing=1))
    assert run(["exponents", "--config", str(p), "--bogus"]) == EXIT_CONFIG
    assert run(["no-such-command"]) == EXIT_CONFIG


def test_cli_broken_threshold_exits_3(tmp_path):
    p = write_cfg(tmp_path, RW_TOML.format(freezing=0))
    out = tmp_path / "o"
    assert run(["verify", "--suite", "exact", "--config", str(p), "--out", str(out)]) == EXIT_EXACT
    reps = json.loads((out / "reports.json").read_text())
    thr = [r for r in reps if r["name"] == "freezing_threshold"][0]
    assert thr["pass"] is False and thr["details"]["violating_n"] == [1]
    assert (out / "skipped.json").exists()


def test_cli_exact_suite_passes(tmp_path):
    out = tmp_path / "o"
    assert run(["verify", "--suite", "exact", "--config", str(CONFIGS / "ex_table.toml"),
                "--out", str(out)]) == EXIT_OK
    assert all(r["pass"] for r in json.loads((out / "reports.json").read_text()))


def _artifacts(out: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_simulate_system_byte_identical(tmp_path):
    p = write_cfg(tmp_path, RW_TOML.format(freezing=1))
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["simulate-system", "--config", str(p), "--out", str(out),
                    "--reps", "100", "--seed", "7"]) == EXIT_OK
    assert _artifacts(a) == _artifacts(b)
    rows = [json.loads(l) for l in (a / "system.jsonl").read_text().splitlines()]
    assert len(rows) == 200 and all(r["extinct"] for r in rows)
    assert all(r["scaled_extinction_time"] == r["extinction_time"] / r["n"] for r in rows)


@pytest.mark.parametrize("cmd", ["simulate-system", "simulate-spine", "simulate-limit", "tree-stats"])
def test_workers_do_not_change_output(tmp_path, cmd):
    p = write_cfg(tmp_path, RW_TOML.format(freezing=1))
    outs = []
    for w in (1, 8):
        out = tmp_path / f"w{w}"
        assert run([cmd, "--config", str(p), "--out", str(out), "--reps", "60",
                    "--workers", str(w)]) == EXIT_OK
        outs.append(_artifacts(out))
    assert outs[0] == outs[1]


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gfrag.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate-system" in r.stdout


def test_parallel_map_empty_and_order():
    assert parallel_map([], abs) == []
    assert parallel_map([], abs, reducer=sum) == 0
    assert parallel_map([-3, 1, -2], abs, workers=2) == [3, 1, 2]


def _fail_on_two(x):
    if x == 2:
        raise ValueError("boom")
    return x


def test_worker_error_carries_replicate_id():
    with pytest.raises(WorkerError) as ei:
        parallel_map([0, 1, 2, 3], _fail_on_two, workers=1)
    assert ei.value.index == 2


def test_compensated_sum():
    vals = [1e16, 1.0, -1e16] * 1000
    assert compensated_sum(vals) == 1000.0
    assert compensated_sum([0.1] * 10) == 1.0
    assert math.isclose(compensated_sum(range(10**4)), 10**4 * (10**4 - 1) / 2)


def test_chunks_cover_reps():
    assert chunks(0) == []
    cs = chunks(4500, 2000)
    assert cs == [(0, 2000), (1, 2000), (2, 500)]

import json
import subprocess
import sys

import pytest

from convexq.cli import SCHEMAS, ConfigError, build_parser, load_config, main


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_tabular_check_exits_zero_and_writes_artifacts(tmp_path, capsys):
    code = main(["tabular-check", "--out", str(tmp_path), "--check"])
    assert code == 0
    lines = (tmp_path / "tabular_check.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=") and "seed=0" in lines[0]
    assert lines[1] == "mdp,x,u,theta,q_star"
    report = json.loads((tmp_path / "tabular_check.json").read_text())
    assert report["command"] == "tabular-check"
    assert all(r["status"] == "Optimal" and r["greedy_match"] for r in report["results"].values())


def test_failed_check_exits_one_only_with_flag(tmp_path):
    cfg = _write(tmp_path, "[tabular-check]\nmdps = ring4\ntol = -1\n")  # no error can meet this
    code_check = main(["tabular-check", "--config", cfg, "--out", str(tmp_path / "a"), "--check"])
    code_plain = main(["tabular-check", "--config", cfg, "--out", str(tmp_path / "b")])
    assert code_plain == 0
    assert code_check == 1


def test_unknown_key_names_key_and_line(tmp_path, capsys):
    cfg = _write(tmp_path, "[tabular-check]\nmdps = ring4\nbogus_key = 3\n")
    assert main(["tabular-check", "--config", cfg, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "bogus_key" in err and ":3:" in err


def test_bad_value_names_key(tmp_path):
    cfg = _write(tmp_path, "[inventory-sweep]\nhorizon = 2.5\n")
    with pytest.raises(ConfigError, match="horizon"):
        load_config("inventory-sweep", cfg)


def test_unknown_section_is_rejected(tmp_path):
    cfg = _write(tmp_path, "[qlearn-train]\nN = 10\n")
    with pytest.raises(ConfigError, match="unknown section"):
        load_config("tabular-check", cfg)


def test_defaults_fill_missing_keys(tmp_path):
    cfg = load_config("inventory-sweep", _write(tmp_path, "[inventory-sweep]\nreplicates = 10\n"))
    assert cfg.values["replicates"] == 10
    assert cfg.values["horizon"] == 10**4
    assert set(cfg.values) == set(SCHEMAS["inventory-sweep"])


def test_config_hash_depends_on_values(tmp_path):
    a = load_config("inventory-sweep", _write(tmp_path, "[inventory-sweep]\nreplicates = 10\n", "a.ini"))
    b = load_config("inventory-sweep", _write(tmp_path, "[inventory-sweep]\nreplicates = 11\n", "b.ini"))
    c = load_config("inventory-sweep", _write(tmp_path, "[inventory-sweep]\nreplicates = 1e1\n", "c.ini"))
    assert a.hash() != b.hash()
    assert a.hash() == c.hash()


def test_bundled_configs_parse():
    from importlib.resources import files
    data = files("convexq") / "data"
    for name in SCHEMAS:
        path = data / f"{name}.ini"
        if path.is_file():
            load_config(name, str(path))


def test_parser_lists_every_subcommand():
    p = build_parser()
    for name in SCHEMAS:
        args = p.parse_args([name])
        assert args.command == name and args.seed == 0 and args.workers == 1


def test_sweep_csv_is_byte_identical_across_runs(tmp_path):
    cfg = _write(tmp_path, "[inventory-sweep]\ngrid_points = 5\nhorizon = 200\nreplicates = 20\n")
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["inventory-sweep", "--config", cfg, "--seed", "3", "--out", str(out)]) == 0
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]
    csvs = [n for n in outs[0] if n.endswith(".csv")]
    assert csvs
    for n in csvs:
        assert outs[0][n].startswith(b"# config_hash=")


def test_seed_changes_output(tmp_path):
    cfg = _write(tmp_path, "[inventory-sweep]\ngrid_points = 3\nhorizon = 100\nreplicates = 10\n")
    texts = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        main(["inventory-sweep", "--config", cfg, "--seed", seed, "--out", str(out)])
        texts.append(sorted((p.name, p.read_text()) for p in out.iterdir() if p.suffix == ".csv"))
    assert texts[0] != texts[1]


def test_nonpositive_workers_is_a_config_error(tmp_path):
    assert main(["tabular-check", "--workers", "0", "--out", str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "convexq.cli", "tabular-check", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "ring4" in res.stdout

import csv
import io
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pesinchart.cli import main
from pesinchart.config import RunConfig, dump_config, load_config, parse_config
from pesinchart.errors import ConfigError
from pesinchart.report import read_csv_header

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_defaults_and_hash():
    cfg = RunConfig()
    assert cfg.system_label == "pcat2(0.01)"
    assert cfg.config_hash() == RunConfig(output_dir="elsewhere").config_hash()
    assert cfg.config_hash() != RunConfig(seed=1).config_hash()


@pytest.mark.parametrize("text", [
    "[system]\nname = cat2\ncolour = red\n",
    "[nonsense]\nx = 1\n",
    "[charts]\nchi = -1\n",
    "[charts]\nepsilon = 1.5\n",
    "[charts]\nmode = exact\n",
    "[charts]\nwindow = lots\n",
    "[manifold]\ngrid_res = 32\n",
    "no sections at all\n",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["cat2", "plastic3", "pcat2"]), st.floats(0.05, 0.9), st.floats(0.01, 0.5),
       st.integers(0, 2**63), st.floats(1e-12, 1e-3))
def test_config_round_trip(system, chi, eps, seed, tol):
    cfg = RunConfig(system=system, chi=chi, epsilon=eps, seed=seed,
                    tolerances={**RunConfig().tolerances, "markov": tol})
    assert parse_config(dump_config(cfg)) == cfg


def test_seed_streams_are_independent():
    cfg = RunConfig(seed=5)
    a = cfg.rng("net").random(4)
    assert np.array_equal(a, RunConfig(seed=5).rng("net").random(4))
    assert not np.array_equal(a, cfg.rng("orbits").random(4))
    with pytest.raises(KeyError):
        cfg.rng("other")


def test_shipped_configs_parse():
    assert load_config(CONFIGS / "cat2_smoke.ini").system == "cat2"
    assert load_config(CONFIGS / "pcat2_default.ini") == RunConfig()


def test_exponents_command(tmp_path, capsys):
    code = main(["exponents", "--config", str(CONFIGS / "cat2_smoke.ini"), "--out", str(tmp_path)])
    assert code == 0
    meta, rows = read_csv_header(tmp_path / "exponents.csv")
    assert len(rows) == 2
    lam = math.log((3 + math.sqrt(5)) / 2)
    for r in rows:
        vals = [float(v) for v in r["exponents"].split()]
        assert np.allclose(vals, [lam, -lam], atol=1e-9)
    assert meta["mode"] == "practical" and meta["constants"]["mode"] == "practical"
    assert "exponents: PASS" in capsys.readouterr().out


def test_degenerate_chi_exit(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[system]\nname = cat2\n[charts]\nchi = 1.0\n")
    assert main(["exponents", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "DegenerateSplitting" in capsys.readouterr().err


def test_config_error_exit(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[system]\nname = cat2\nspeed = 3\n")
    assert main(["frames", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert main(["frames", "--config", str(tmp_path / "missing.ini")]) == 2


def test_literal_mode_rejects_geometry(tmp_path):
    out = tmp_path / "o"
    assert main(["code", "--config", str(CONFIGS / "cat2_smoke.ini"), "--mode", "literal", "--out", str(out)]) == 2
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "failed" and man["failed_stage"] == "chains"
    assert main(["check", "frames", "--config", str(CONFIGS / "cat2_smoke.ini"), "--mode", "literal",
                 "--out", str(tmp_path / "lit")]) == 0


def test_corrupted_tolerance_fails(tmp_path, capsys):
    cfg = tmp_path / "tight.ini"
    cfg.write_text("[system]\nname = cat2\n[tolerances]\noff_block = 1e-30\n")
    assert main(["check", "frames", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    out = capsys.readouterr().out
    assert "frames.off_block" in out and "FAIL" in out
    verdict = json.loads((tmp_path / "o" / "check.json").read_text())
    assert not verdict["passed"]
    assert [c["name"] for c in verdict["checks"] if not c["ok"]] == ["frames.off_block"]


def test_check_frames_cat2(tmp_path):
    assert main(["check", "frames", "--config", str(CONFIGS / "cat2_smoke.ini"), "--out", str(tmp_path)]) == 0


def _bundle(path: Path) -> dict:
    out = {}
    for f in sorted(path.iterdir()):
        if f.name == "manifest.json":
            doc = json.loads(f.read_text())
            doc.pop("timings")
            doc["config"].pop("output_dir")
            out[f.name] = doc
        else:
            out[f.name] = f.read_bytes()
    return out


@pytest.fixture(scope="module")
def smoke_bundles(tmp_path_factory):
    dirs = []
    for k in range(2):
        d = tmp_path_factory.mktemp(f"smoke{k}")
        assert main(["pipeline", "--config", str(CONFIGS / "cat2_smoke.ini"), "--out", str(d)]) == 0
        dirs.append(d)
    return dirs


def test_pipeline_is_deterministic(smoke_bundles):
    a, b = (_bundle(d) for d in smoke_bundles)
    assert a == b


def test_every_file_carries_the_header(smoke_bundles):
    d = smoke_bundles[0]
    h = RunConfig(system="cat2", seed=1).config_hash()
    names = {f.name for f in d.iterdir()}
    for need in ("manifest.json", "graph.dot", "graph.json", "chains.json", "coded.csv", "inverse.csv",
                 "hoelder.csv", "cover.json", "manifold.json", "checks.csv", "frames.csv", "exponents.csv"):
        assert need in names
    for f in d.iterdir():
        if f.suffix == ".png":
            from PIL import Image
            desc = json.loads(Image.open(f).info["Description"])
        elif f.suffix == ".csv":
            desc = read_csv_header(f)[0]
        elif f.suffix == ".json":
            desc = json.loads(f.read_text())["meta"]
        else:
            desc = {line.split(": ", 1)[0][3:]: json.loads(line.split(": ", 1)[1])
                    for line in f.read_text().splitlines() if line.startswith("// ")}
        assert desc["config_hash"] == h, f.name
        assert desc["constants"]["mode"] == "practical", f.name


def test_csv_is_rfc4180(smoke_bundles):
    raw = (smoke_bundles[0] / "checks.csv").read_bytes().decode()
    body = "".join(line for line in raw.splitlines(keepends=True) if not line.startswith("#"))
    assert body.endswith("\r\n")
    rows = list(csv.DictReader(io.StringIO(body)))
    assert rows and set(rows[0]) == {"name", "stage", "measured", "bound", "ok"}


def test_graph_json_matches_manifest(smoke_bundles):
    d = smoke_bundles[0]
    g = json.loads((d / "graph.json").read_text())
    man = json.loads((d / "manifest.json").read_text())
    assert man["status"] == "complete" and man["passed"]
    assert g["meta"]["vertices"] == len(g["vertices"])
    assert all(0 <= a < len(g["vertices"]) and 0 <= b < len(g["vertices"]) for a, b in g["edges"])


def test_pcat2_check_all_passes(pcat2_run):
    failed = [c.name for c in pcat2_run.checks if not c.ok]
    assert pcat2_run.passed, failed
    verdict = json.loads((pcat2_run.out / "check.json").read_text())
    assert verdict["passed"] and verdict["suite"] == "all"

from __future__ import annotations

import csv
import json
import stat
from pathlib import Path

import pytest

from mfglab import io as aio
from mfglab.cli import load_config, main, schema_for
from mfglab.errors import MfgLabError

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = sorted((ROOT / "configs").glob("*.toml"))


def run(cfg, out, *extra):
    return main(["run", str(cfg), "--out", str(out), "--quiet", *extra])


@pytest.fixture(scope="module")
def outputs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    codes = {c.stem: run(c, base / c.stem) for c in CONFIGS}
    return base, codes


def test_bundled_configs_exist():
    names = {c.stem for c in CONFIGS}
    assert {"three_solutions", "unique_regime", "quadratic_game", "regime_diagram", "mc_mean_law",
            "optimality_probe", "monotone", "threshold", "density_bound", "twopop"} <= names


@pytest.mark.parametrize("name", [c.stem for c in CONFIGS])
def test_config_runs_clean(outputs, name):
    base, codes = outputs
    assert codes[name] == 0
    man = json.loads((base / name / "manifest.json").read_text())
    assert man["passed"] is True and man["error"] is None
    assert man["checks"] and all(c["passed"] for c in man["checks"])
    assert aio.verify_manifest(base / name) == []


def test_catalog_sizes(outputs):
    base, _ = outputs
    three = json.loads((base / "three_solutions" / "catalog.json").read_text())
    assert three["size"] == 3 and len(three["branches"]) == 3
    assert all(b["residual"] <= 1e-3 for b in three["branches"])
    unique = json.loads((base / "unique_regime" / "catalog.json").read_text())
    assert unique["size"] == 1


def test_roots_json(outputs):
    base, _ = outputs
    body = json.loads((base / "quadratic_game" / "roots.json").read_text())
    assert body["count"] == 2 and [r["M"] for r in body["roots"]] == [-2.0, 4.0]


def test_twopop_outputs(outputs):
    base, _ = outputs
    body = json.loads((base / "twopop" / "twopop.json").read_text())
    assert body["matrix_check"]["verdict"] == "ProvablyMultiple"
    assert [b["seeds"] for b in body["branches"]] == [["+", "+"], ["-", "-"]]
    assert all(b["residual"] <= 1e-3 for b in body["branches"])
    assert [d["seeds"] for d in body["not_constructed"]] == ["+-"]


def test_manifest_lists_every_file(outputs):
    base, _ = outputs
    d = base / "three_solutions"
    man = json.loads((d / "manifest.json").read_text())
    on_disk = {p.name for p in d.iterdir() if p.name != "manifest.json"}
    assert set(man["files"]) == on_disk
    assert man["config"]["kind"] == "branches" and man["seeds"] == {"seed": 0}
    assert "wall_clock_seconds" in man and man["version"]
    assert man["domains"] == [{"n_x": 256, "x_max": 5.0, "x_min": -5.0}]
    assert json.loads((base / "threshold" / "manifest.json").read_text())["domains"] == []


def test_manifest_detects_tampering(outputs, tmp_path):
    base, _ = outputs
    src = base / "threshold"
    dst = tmp_path / "copy"
    dst.mkdir()
    for p in src.iterdir():
        (dst / p.name).write_bytes(p.read_bytes())
    assert aio.verify_manifest(dst) == []
    (dst / "threshold.json").write_text("{}\n")
    assert aio.verify_manifest(dst) == ["threshold.json"]


@pytest.mark.parametrize("name", ["three_solutions", "quadratic_game", "twopop", "mc_mean_law"])
def test_reruns_are_byte_identical(outputs, tmp_path, name):
    base, _ = outputs
    assert run(ROOT / "configs" / f"{name}.toml", tmp_path / name) == 0
    first = aio.file_hashes(base / name)
    assert aio.file_hashes(tmp_path / name) == first


def test_seed_override_recorded(tmp_path):
    assert run(ROOT / "configs" / "mc_mean_law.toml", tmp_path / "s", "--seed", "17") == 0
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["seeds"] == {"seed": 17}


def test_csv_format_and_permissions(outputs):
    base, _ = outputs
    path = base / "three_solutions" / "mean_curves.csv"
    raw = path.read_bytes()
    assert raw.count(b"\r\n") == raw.count(b"\n") > 1
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0][0] == "t" and float(rows[-1][0]) == 1.0
    assert stat.S_IMODE(path.stat().st_mode) == 0o644


def test_failed_assertion_exits_one(tmp_path):
    cfg = (ROOT / "configs" / "quadratic_game.toml").read_text().replace("root_count = 2", "root_count = 3")
    p = tmp_path / "wrong.toml"
    p.write_text(cfg)
    assert run(p, tmp_path / "out") == 1
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["passed"] is False
    assert [c["name"] for c in man["checks"] if not c["passed"]] == ["root count"]


BAD = {
    "unknown_key": ('kind = "simple-game"\n[problem]\nc0 = 1.0\nT = 1.0\nmean_init = 0.0\nbogus = 3\n',
                    6, "bogus"),
    "wrong_type": ('kind = "simple-game"\n[problem]\nc0 = "one"\nT = 1.0\nmean_init = 0.0\n', 3, "c0"),
    "syntax": ('kind = "simple-game"\n[problem\nc0 = 1.0\n', 2, ""),
    "bad_kind": ('kind = "nonsense"\n', 1, "kind"),
    "semantic": ('kind = "simple-game"\n[problem]\nc0 = 1.0\nT = 1.0\nmean_init = 0.0\nsigma = 1.0\n'
                 '[numerics]\nn_x = 8\n', 8, "n_x"),
}


@pytest.mark.parametrize("case", sorted(BAD))
def test_malformed_config_exit_two(tmp_path, capsys, case):
    text, line, word = BAD[case]
    p = tmp_path / f"{case}.toml"
    p.write_text(text)
    out = tmp_path / "never"
    assert run(p, out) == 2
    err = capsys.readouterr().err
    assert f"{p}:{line}:" in err and word in err
    assert not out.exists()


def test_missing_config_exit_two(tmp_path, capsys):
    assert run(tmp_path / "absent.toml", tmp_path / "o") == 2
    assert "absent.toml" in capsys.readouterr().err


def test_schema_rejects_unknown_top_level():
    for kind in ("branches", "twopop", "regime-diagram"):
        assert schema_for(kind)["additionalProperties"] is False


def test_load_config_round_trip():
    cfg = load_config(ROOT / "configs" / "three_solutions.toml")
    assert cfg["kind"] == "branches" and cfg["numerics"]["n_x"] == 256


def read_diagram(path):
    rows = list(csv.DictReader(path.read_text().splitlines()))
    return {(float(r["T"]), float(r["mean_init"])): r["root_count"] for r in rows}


def test_regime_diagram_subcommand(tmp_path):
    code = main(["regime-diagram", "--c0", "1", "--t-range", "0.5:4.5:9", "--mean-range=-3:3:13",
                 "--out", str(tmp_path / "rd"), "--quiet"])
    assert code == 0
    d = read_diagram(tmp_path / "rd" / "regime_diagram.csv")
    assert len(d) == 9 * 13
    for (T, M), c in d.items():
        assert d[(T, -M)] == c
        if T < 2:
            assert c == "1"
        elif T == 2:
            assert c == ("inf" if M == 0 else "1")
        elif abs(abs(M) - (T - 2)) < 1e-12:
            assert c == "2"
        else:
            assert c == ("3" if abs(M) < T - 2 else "1")
    assert (tmp_path / "rd" / "regime_diagram.svg").exists()
    assert aio.verify_manifest(tmp_path / "rd") == []


def test_regime_diagram_single_row(tmp_path):
    code = main(["regime-diagram", "--c0", "1", "--t-range", "0.1:0.1:1", "--mean-range=-2:2:21",
                 "--out", str(tmp_path / "row"), "--quiet"])
    assert code == 0
    assert set(read_diagram(tmp_path / "row" / "regime_diagram.csv").values()) == {"1"}


def test_regime_diagram_bad_arguments(tmp_path, capsys):
    assert main(["regime-diagram", "--c0", "0", "--t-range", "1:2:3", "--mean-range", "0:1:2",
                 "--out", str(tmp_path / "x")]) == 2
    with pytest.raises(SystemExit):
        main(["regime-diagram", "--c0", "1", "--t-range", "1:2", "--mean-range", "0:1:2"])


def test_errors_share_a_base_class():
    from mfglab import errors
    for name in ("NonPositiveDiffusion", "MassDrift", "KinkWithoutHint", "NotApplicable",
                 "SignConditionViolated", "PreconditionFail", "NoConvergence", "NoPositiveThreshold"):
        assert issubclass(getattr(errors, name), MfgLabError)

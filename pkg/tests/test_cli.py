import json

import numpy as np
import pytest

from leap import cli
from leap import datagen as dg
from leap import trainer as tr

SMALL = {"max_epochs": 2, "steps_per_epoch": 4, "hidden": 16, "prior_hidden": 8,
         "disc_hidden": 16, "warm_steps": 30, "val_windows": 128}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen", "--kind", "var", "--out", str(root / "var"), "--seed", "1",
                     "--points", "2000", "--n", "2"]) == 0
    assert cli.main(["gen", "--kind", "np", "--out", str(root / "np"), "--seed", "1",
                     "--points", "1500", "--n", "2", "--lag", "1", "--sparse",
                     "--regimes", "5"]) == 0
    (root / "cfg.json").write_text(json.dumps(SMALL))
    return root


def _train(work, data, out, extra=()):
    return cli.main(["train", "--data", str(work / data), "--config", str(work / "cfg.json"),
                     "--out", str(work / out), *extra])


def test_gen_default_var_size(tmp_path):
    assert cli.main(["gen", "--kind", "var", "--out", str(tmp_path), "--seed", "1"]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["total_points"] == 50_000 and manifest["seed"] == 1


def test_gen_variability_regimes(tmp_path):
    assert cli.main(["gen", "--kind", "viol-variability", "--regimes", "5", "--points", "1000",
                     "--out", str(tmp_path)]) == 0
    assert dg.load(tmp_path).num_regimes == 5


def test_gen_points_pass_through(tmp_path):
    assert cli.main(["gen", "--kind", "np", "--points", "1000", "--out", str(tmp_path)]) == 0
    assert dg.load(tmp_path).manifest()["total_points"] == 1000


def test_usage_and_data_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["gen", "--kind", "var", "--out", str(tmp_path), "--colour", "red"])
    assert exc.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        cli.main(["gen", "--kind", "nope", "--out", str(tmp_path)])
    assert exc.value.code == cli.EXIT_USAGE
    assert cli.main(["gen", "--kind", "var", "--points", "10", "--out", str(tmp_path)]) == 3
    assert cli.main(["eval", "--data", str(tmp_path / "missing"), "--out",
                     str(tmp_path / "e.json"), "--debug-truth"]) == cli.EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_bad_config_is_usage_error(work, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"beta": -1.0}))
    code = cli.main(["train", "--data", str(work / "var"), "--config", str(bad),
                     "--out", str(tmp_path / "run")])
    assert code == cli.EXIT_USAGE


def test_train_resolves_and_is_repeatable(work):
    assert _train(work, "var", "run_a") == 0
    assert _train(work, "var", "run_b") == 0
    resolved = json.loads((work / "run_a" / "resolved_config.json").read_text())
    assert (resolved["beta"], resolved["gamma"], resolved["sigma"]) == (3e-3, 9e-3, 1e-6)
    assert resolved["z_dim"] == 2 and resolved["seed"] == 0
    for name in ("metrics.csv", "mcc_trajectory.csv", "resolved_config.json"):
        assert (work / "run_a" / name).read_bytes() == (work / "run_b" / name).read_bytes()


def test_eval_debug_truth_is_perfect(work):
    out = work / "truth.json"
    assert cli.main(["eval", "--data", str(work / "var"), "--out", str(out),
                     "--debug-truth"]) == 0
    report = json.loads(out.read_text())
    assert report["mcc"] == pytest.approx(1.0, abs=1e-12)
    assert report["aligned_matrix_error"]["max"] == pytest.approx(0.0, abs=1e-9)


def test_eval_var_run(work):
    if not (work / "run_a").exists():
        _train(work, "var", "run_a")
    out = work / "eval_var.json"
    assert cli.main(["eval", "--run", str(work / "run_a"), "--data", str(work / "var"),
                     "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["method"] == "pearson" and "aligned_matrix_error" in report
    assert 0.0 <= report["mcc"] <= 1.0
    again = work / "eval_var2.json"
    cli.main(["eval", "--run", str(work / "run_a"), "--data", str(work / "var"),
              "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()


def test_eval_np_run(work):
    assert _train(work, "np", "run_np") == 0
    out = work / "eval_np.json"
    assert cli.main(["eval", "--run", str(work / "run_np"), "--data", str(work / "np"),
                     "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["method"] == "spearman"
    assert "skeleton" in report and 0 <= report["shd"] <= 2 * 2 * 1


def test_eval_dimension_mismatch(work, tmp_path):
    if not (work / "run_a").exists():
        _train(work, "var", "run_a")
    other = tmp_path / "wide"
    cli.main(["gen", "--kind", "var", "--points", "1000", "--n", "3", "--out", str(other)])
    assert cli.main(["eval", "--run", str(work / "run_a"), "--data", str(other),
                     "--out", str(tmp_path / "e.json")]) == cli.EXIT_DATA


def test_ablate_writes_table(work):
    out = work / "abl"
    assert cli.main(["ablate", "--data", str(work / "var"), "--config", str(work / "cfg.json"),
                     "--out", str(out), "--seeds", "0"]) == 0
    table = json.loads((out / "ablation.json").read_text())
    assert [row["rung"] for row in table] == ["baseline", "+prior", "+flow", "+disc"]


def test_verify_fresh_checkout(capsys):
    code = cli.main(["verify"])
    out = capsys.readouterr().out
    assert code == 0, out


def test_verify_detects_corrupted_flows(work, tmp_path, capsys):
    if not (work / "run_a").exists():
        _train(work, "var", "run_a")
    header, arrays = tr.load_checkpoint(work / "run_a" / "last.ckpt")
    assert cli.main(["verify", "--flows", str(work / "run_a" / "last.ckpt")]) in (0, 4)
    assert "PASS  saved flows monotone" in capsys.readouterr().out
    arrays["model/flow.raw_h"] = arrays["model/flow.raw_h"].copy()
    arrays["model/flow.raw_h"][0, 0, 0] = np.nan
    bad = tmp_path / "bad.ckpt"
    tr.save_checkpoint(bad, arrays, header)
    assert cli.main(["verify", "--flows", str(bad)]) == cli.EXIT_NUMERIC
    assert "FAIL  saved flows monotone" in capsys.readouterr().out

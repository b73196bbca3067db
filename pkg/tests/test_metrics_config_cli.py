import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from kgmolgen.chem import parse_smiles
from kgmolgen.chem.corpus import bundled_corpus_path, read_smiles_file
from kgmolgen.cli import main, run_train_kge
from kgmolgen.config import ConfigError, load_config
from kgmolgen.ddpo import training_fingerprints
from kgmolgen.metrics import evaluate_smiles, metrics_from_file

TINY = """\
kge.epochs = 20
kge.n_seeds = 2
diffusion.steps = 30
diffusion.T = 20
diffusion.checkpoint_every = 0
pin.steps = 20
pin.n_molecules = 50
corpus.limit = 200
generate.n = 20
finetune.iterations = 2
finetune.batch_size = 8
finetune.checkpoint_every = 0
finetune.max_grad_norm = 10
guidance.context = _,targets,protein1_0
"""


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    p.write_text(TINY)
    return p


# -- metrics -------------------------------------------------------------------

def test_duplicate_molecule_uniqueness():
    m = evaluate_smiles(["CC(O)N"] * 100, np.zeros((0, 1024), bool))
    assert m["validity"] == 100.0 and m["uniqueness"] == 1.0


def test_invalid_strings_give_zero_validity():
    m = evaluate_smiles(["C(", "Xx", "C1CC", "*"], np.zeros((0, 1024), bool))
    assert m["validity"] == 0.0 and m["invalid_lines"] == [1, 2, 3, 4]


def test_training_molecules_are_not_novel():
    rows = read_smiles_file(bundled_corpus_path())[:50]
    fps = training_fingerprints([g for _, _, g in rows])
    m = evaluate_smiles([s for _, s, _ in rows], fps)
    assert m["novelty"] == 0.0 and m["fcd"] is None


def test_metrics_cli_reports_bad_lines(tmp_path, capsys):
    smi = tmp_path / "s.smi"
    smi.write_text("CCO\nC(\nOC=O\n")
    assert main(["metrics", str(smi)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n"] == 3 and out["invalid_lines"] == [2]


# -- config ----------------------------------------------------------------------

def test_unknown_key_named(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("kge.dimm = 3\n")
    with pytest.raises(ConfigError, match="kge.dimm"):
        load_config(p)


def test_include_and_override(tmp_path):
    (tmp_path / "base.cfg").write_text("kge.dim = 8\nseed = 3\n")
    (tmp_path / "run.cfg").write_text("include = base.cfg\nkge.dim = 12  # wider\n")
    cfg = load_config(tmp_path / "run.cfg", {"seed": "5"})
    assert cfg["kge.dim"] == 12 and cfg["seed"] == 5
    assert cfg.section("kge")["dim"] == 12


def test_bad_value_type(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("kge.dim = wide\n")
    with pytest.raises(ConfigError, match="kge.dim"):
        load_config(p)


def test_cli_rejects_unknown_key_before_compute(tmp_path, capsys):
    out = tmp_path / "kge"
    assert main(["train-kge", "--set", "kge.bogus=1", "--out", str(out)]) == 2
    assert "kge.bogus" in capsys.readouterr().err
    assert not out.exists()


# -- train-kge -------------------------------------------------------------------

def test_kge_report_ten_seeds_deterministic(tmp_path):
    cfg = load_config(None, {"kge.epochs": 3, "kge.n_seeds": 10})
    run_train_kge(cfg, tmp_path / "a")
    run_train_kge(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "report.json").read_text()
    assert a == (tmp_path / "b" / "report.json").read_text()
    rep = json.loads(a)
    assert len(rep["per_seed"]) == 10 and set(rep["std"]) == {"amr", "mrr", "hits@1", "hits@10"}
    assert (tmp_path / "a" / "report.txt").read_text().count("±") == 4


# -- pipeline and downstream commands ---------------------------------------------

@pytest.fixture(scope="module")
def pipeline_run(tiny_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "pipe"
    assert main(["pipeline", "--config", str(tiny_cfg), "--out", str(out)]) == 0
    return out


def test_dry_run_does_no_compute(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "dry"
    assert main(["pipeline", "--config", str(tiny_cfg), "--out", str(out), "--dry-run"]) == 0
    assert "kge -> context -> pin -> diffusion -> finetune -> generate" in capsys.readouterr().out
    assert not out.exists()


def test_manifest_lists_six_hashed_artifacts(pipeline_run):
    man = json.loads((pipeline_run / "manifest.json").read_text())
    assert set(man["stages"]) == {"kge", "context", "pin", "diffusion", "finetune", "generate"}
    for entry in man["stages"].values():
        assert len(entry["sha256"]) == 64 and (pipeline_run / entry["artifact"]).is_file()


def test_rerun_skips_completed_stages(tiny_cfg, pipeline_run):
    assert main(["pipeline", "--config", str(tiny_cfg), "--out", str(pipeline_run)]) == 0
    man = json.loads((pipeline_run / "manifest.json").read_text())
    assert all(e["skipped"] for e in man["stages"].values())


def test_changed_input_reruns_downstream(tiny_cfg, pipeline_run, tmp_path):
    out = tmp_path / "pipe"
    shutil.copytree(pipeline_run, out)
    assert main(["pipeline", "--config", str(tiny_cfg), "--out", str(out),
                 "--set", "generate.n=5"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert [k for k, e in man["stages"].items() if not e["skipped"]] == ["generate"]
    assert len((out / "samples.smi").read_text().splitlines()) == 5


def test_stage_failure_names_stage(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "bad"
    code = main(["pipeline", "--config", str(tiny_cfg), "--out", str(out),
                 "--set", "guidance.context=no_such_entity"])
    assert code == 2 and "'context'" in capsys.readouterr().err
    man = json.loads((out / "manifest.json").read_text())
    assert man["failed"] == "context" and (out / "kge" / "embeddings.npz").is_file()


def test_inline_metrics_match_offline(pipeline_run, tiny_cfg, capsys):
    inline = json.loads((pipeline_run / "samples.smi.json").read_text())
    inline.pop("guided")
    assert main(["metrics", str(pipeline_run / "samples.smi")]) == 0
    assert json.loads(capsys.readouterr().out) == inline


def test_generate_single_molecule(pipeline_run, tiny_cfg, tmp_path):
    out = tmp_path / "one.smi"
    assert main(["generate", "--config", str(tiny_cfg), "--checkpoint", str(pipeline_run / "diffusion.pt"),
                 "--set", "guidance.context=", "--n", "1", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1


def test_guidance_without_pin_is_an_error(pipeline_run, tiny_cfg, tmp_path, capsys):
    code = main(["generate", "--config", str(tiny_cfg), "--checkpoint", str(pipeline_run / "diffusion.pt"),
                 "--n", "1", "--out", str(tmp_path / "x.smi")])
    assert code == 2 and "pin" in capsys.readouterr().err.lower()


def test_guided_generate(pipeline_run, tiny_cfg, tmp_path):
    out = tmp_path / "g.smi"
    assert main(["generate", "--config", str(tiny_cfg), "--checkpoint", str(pipeline_run / "diffusion.pt"),
                 "--pin", str(pipeline_run / "pin.pt"), "--kge", str(pipeline_run / "kge" / "embeddings.npz"),
                 "--n", "3", "--out", str(out)]) == 0
    assert json.loads(Path(str(out) + ".json").read_text())["guided"] is True


def test_finetune_unknown_profile(pipeline_run, tiny_cfg, tmp_path, capsys):
    code = main(["finetune", "--config", str(tiny_cfg), "--checkpoint", str(pipeline_run / "diffusion.pt"),
                 "--profile", "nope", "--out", str(tmp_path / "ft")])
    err = capsys.readouterr().err
    assert code == 2 and "targeted" in err and "unconditional" in err


def test_finetune_resume(pipeline_run, tiny_cfg, tmp_path):
    out = tmp_path / "ft"
    base = ["finetune", "--config", str(tiny_cfg), "--checkpoint", str(pipeline_run / "diffusion.pt"),
            "--out", str(out)]
    assert main(base + ["--iterations", "2"]) == 0
    assert main(base + ["--iterations", "1", "--resume"]) == 0
    state = json.loads((out / "finetune_state.json").read_text())
    lines = [json.loads(x) for x in (out / "rewards.jsonl").read_text().splitlines()]
    assert state["iterations"] == 3 and [x["iteration"] for x in lines] == [0, 1, 2]


def test_custom_reward_weights_file(pipeline_run, tiny_cfg, tmp_path):
    w = tmp_path / "w.txt"
    w.write_text("k1 = 0.1\nk3 = 0.5\nw_val = 0.6\nw_nov = 0.4\n")
    out = tmp_path / "ft2"
    assert main(["finetune", "--config", str(tiny_cfg), "--checkpoint", str(pipeline_run / "diffusion.pt"),
                 "--profile", str(w), "--iterations", "1", "--out", str(out)]) == 0
    assert json.loads((out / "reward_weights.json").read_text())["k1"] == 0.1


def test_print_config(capsys):
    assert main(["train-kge", "--print-config", "--set", "kge.dim=7"]) == 0
    assert "kge.dim = 7" in capsys.readouterr().out

import json

import numpy as np
import pytest

from hgcd.cli import main, resolve_config, train_config, UsageError
from hgcd.data import EmbeddingDataset, gcd_split, load_dataset, load_split, save_dataset, save_split

TINY = ["--epochs", "3", "--warmup_epochs", "1", "--batch_size", "32", "--encoder_hidden", "16",
        "--feature_dim", "8", "--proj_layers", "2", "--proj_hidden", "8", "--proj_dim", "8", "--tree_hidden", "8"]

pytestmark = pytest.mark.filterwarnings("ignore::hgcd.losses.NoLabelledWarning")


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--per_class", "20", "--dim", "8", "--seed", "4"]) == 0
    return out


def data_args(d):
    return ["--data", str(d / "dataset.csv"), "--split", str(d / "split.json")]


def test_synth_outputs(synth_dir, capsys):
    ds = load_split(load_dataset(synth_dir / "dataset.csv"), synth_dir / "split.json")
    assert len(ds) == 140 and ds.n_classes == 7 and ds.known_classes == (0, 1, 2, 3)
    assert ds.labelled_mask.sum() == 40
    manifest = json.loads((synth_dir / "manifest.json").read_text())
    assert manifest["seed"] == 4 and set(manifest["outputs"]) == {"dataset.csv", "split.json"}
    assert "within_sigma" in (synth_dir / "config.ini").read_text()


def test_synth_deterministic_and_dbta_shape(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--per_class", "5", "--seed", "1", "--format", "bin"]) == 0
    assert (tmp_path / "a" / "dataset.bin").read_bytes() == (tmp_path / "b" / "dataset.bin").read_bytes()
    assert main(["synth", "--out", str(tmp_path / "c"), "--classes", "12", "--known", "7", "--per_class", "4"]) == 0
    ds = load_split(load_dataset(tmp_path / "c" / "dataset.csv"), tmp_path / "c" / "split.json")
    assert ds.n_classes == 12 and len(ds.novel_classes) == 5


def test_train_eval_end_to_end(synth_dir, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", *data_args(synth_dir), "--out", str(run), "--seed", "2", *TINY]) == 0
    lines = (run / "metrics.ndjson").read_text().splitlines()
    assert len(lines) == 3 and "l_hier" in json.loads(lines[0])
    cfg = (run / "config.ini").read_text()
    assert "epochs = 3" in cfg and "seed = 2" in cfg
    ev = tmp_path / "ev"
    assert main(["eval", *data_args(synth_dir), "--checkpoint", str(run / "final.ckpt"), "--out", str(ev)]) == 0
    report = json.loads((ev / "report.json").read_text())
    assert {"acc_all", "acc_known", "acc_novel"} <= set(report)
    assert len(report["mapping"]) == 7
    header = (ev / "confusion.csv").read_text().splitlines()[0]
    assert header.count("*") == 3
    man = json.loads((ev / "manifest.json").read_text())
    assert str(run / "final.ckpt") in man["inputs"]


def test_train_determinism_and_resume(synth_dir, tmp_path):
    a, b, r = tmp_path / "a", tmp_path / "b", tmp_path / "r"
    for out in (a, b):
        assert main(["train", *data_args(synth_dir), "--out", str(out), "--seed", "5", *TINY]) == 0
    for f in ("final.ckpt", "metrics.ndjson"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    man = [json.loads((d / "manifest.json").read_text()) for d in (a, b)]
    assert man[0]["outputs"] == man[1]["outputs"]
    short = [*TINY]
    short[1] = "2"
    assert main(["train", *data_args(synth_dir), "--out", str(r), "--seed", "5", *short]) == 0
    assert main(["train", *data_args(synth_dir), "--out", str(r), "--seed", "5", *TINY,
                 "--resume", str(r / "final.ckpt")]) == 0
    assert (r / "final.ckpt").read_bytes() == (a / "final.ckpt").read_bytes()
    assert main(["train", *data_args(synth_dir), "--out", str(r), "--seed", "5", *TINY, "--alpha", "0.5",
                 "--resume", str(r / "final.ckpt")]) == 1


def test_seed_env_fallback(monkeypatch):
    monkeypatch.setenv("HGCD_SEED", "77")
    assert resolve_config(None, [])["run"]["seed"] == "77"
    assert resolve_config(None, ["--seed", "3"])["run"]["seed"] == "3"


def test_config_file_and_overrides(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[train]\nalpha = 0.5\nepochs = 80\n[synth]\ndepth = 4\n")
    cp = resolve_config(str(ini), ["--epochs", "90", "--train.depth=5", "--temperature=0.5"])
    cfg = train_config(cp)
    assert (cfg.weights.alpha, cfg.epochs, cfg.depth, cfg.weights.temperature) == (0.5, 90, 5, 0.5)
    assert cp["synth"]["depth"] == "4"
    assert resolve_config(None, ["--depth", "2"], prefer="synth")["synth"]["depth"] == "2"
    with pytest.raises(UsageError):
        resolve_config(None, ["--nonsense", "1"])
    ini.write_text("[bogus]\nx = 1\n")
    with pytest.raises(UsageError):
        resolve_config(str(ini), [])


def test_exit_codes(synth_dir, tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert main(["train", "--out", str(tmp_path)]) == 1  # missing --data
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--split", "x", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("dim=2,classes=2\n0,1\n")
    assert main(["train", "--data", str(bad), "--split", str(synth_dir / "split.json"), "--out", str(tmp_path)]) == 2
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"garbage")
    assert main(["eval", *data_args(synth_dir), "--checkpoint", str(junk), "--out", str(tmp_path / "e")]) == 2
    assert main(["train", *data_args(synth_dir), "--out", str(tmp_path / "t"), "--learning_rate", "x"]) == 1
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["synth", "--out", str(blocker / "sub")]) == 2
    assert "error" in capsys.readouterr().err


def test_numeric_failure_exit_code(synth_dir, tmp_path, monkeypatch):
    import hgcd.trainer as tr

    real = tr.forward_losses

    def poisoned(state, batch, epoch):
        bd = real(state, batch, epoch)
        bd.l_total = float("nan")
        return bd

    monkeypatch.setattr(tr, "forward_losses", poisoned)
    assert main(["train", *data_args(synth_dir), "--out", str(tmp_path), *TINY]) == 3
    assert (tmp_path / "last_good.ckpt").exists()


def test_eval_untrained_vs_trained(tmp_path):
    # two informative dimensions plus eight high-variance nuisance ones: a random
    # encoder keeps the nuisance, training with labels learns to discount it
    rng = np.random.default_rng(0)
    means = np.array([[0, 0], [4, 0], [0, 4], [4, 4]], float)
    y = np.repeat(np.arange(4), 60)
    x = np.hstack([means[y] + 0.5 * rng.standard_normal((240, 2)), 3 * rng.standard_normal((240, 8))])
    ds = gcd_split(EmbeddingDataset(x, y, list("abcd")), [0, 3], 0.5, 0)
    save_dataset(ds, tmp_path / "d.csv")
    save_split(ds, tmp_path / "s.json", 0.5, 0)
    ev_args = ["--data", str(tmp_path / "d.csv"), "--split", str(tmp_path / "s.json")]
    small = ["--encoder_hidden", "32", "--feature_dim", "16", "--proj_layers", "2", "--proj_hidden", "16",
             "--proj_dim", "16", "--tree_hidden", "16", "--batch_size", "32", "--alpha", "0.9",
             "--temperature", "0.3", "--warmup_epochs", "0", "--hier_mode", "off", "--seed", "0"]
    accs = {}
    for name, epochs in (("untrained", "0"), ("trained", "30")):
        run = tmp_path / name
        assert main(["train", *ev_args, "--out", str(run), "--epochs", epochs, *small]) == 0
        assert main(["eval", *ev_args, "--checkpoint", str(run / "final.ckpt"), "--out", str(run / "ev")]) == 0
        accs[name] = json.loads((run / "ev" / "report.json").read_text())["acc_all"]
    assert accs["untrained"] < 0.45 and accs["trained"] > accs["untrained"] + 0.2


def test_ablate_rows(synth_dir, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", *data_args(synth_dir), "--out", str(out), *TINY, "--depth_sweep",
                 "--depths", "2,3"]) == 0
    rows = json.loads((out / "ablation.json").read_text())
    assert [r["config"] for r in rows] == ["1 contrastive only", "2 hierarchical only",
                                           "3 unsup. hierarchical + contrastive", "4 no warm-up", "5 full",
                                           "T=2", "T=3"]
    assert (out / "ablation.md").read_text().startswith("| config |")


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "total" in out and "matmul" in out

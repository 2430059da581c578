import json
import os

import numpy as np
import pytest

from privplane import cli
from privplane.activations import ActivationSpec, Kind
from privplane.formats import RECORD_DTYPE, write_records
from privplane.model import AutoencoderConfig, TrainConfig, load_manifest, save_manifest, train
from privplane.numerics import rng_stream


@pytest.fixture
def workdir(tmp_path, monkeypatch, fixture_env):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def tiny_config(fixture_env):
    return os.path.join(fixture_env, "tiny.yaml")


@pytest.fixture
def wide_run(workdir):
    # width-18 manifest for plane-count checks
    X = rng_stream(0, "x").uniform(size=(20, 10))
    man = train(AutoencoderConfig(10, 18, 0, ActivationSpec(Kind.STANDARD_TANH)), TrainConfig(epoch_increments=(1,)), X)
    save_manifest(man, workdir / "wide")
    return str(workdir / "wide")


def _json(capsys):
    return json.loads(capsys.readouterr().out)


# -- train -------------------------------------------------------------------

def test_train_tiny_default_schedule(workdir, tiny_config, capsys):
    assert cli.main(["train", "--config", tiny_config, "--json"]) == 0
    out = _json(capsys)
    man = load_manifest(out["runs"][0])
    assert len(man.checkpoints) == 16 and man.epochs[-1] == 125
    assert os.path.exists(workdir / "tiny-out" / "alignment.csv")
    assert out["montages"]


def test_train_seed_override_reproducible(workdir, tiny_config, capsys):
    for name in ("a", "b"):
        assert cli.main(["train", "--config", tiny_config, "--seed", "11", "--out", name]) == 0
    capsys.readouterr()
    rel = os.path.join("runs", "standard-tanh-w4-d0-raw-r0", "manifest.json")
    a, b = (workdir / "a" / rel).read_bytes(), (workdir / "b" / rel).read_bytes()
    assert a == b
    assert (workdir / "a" / "config.json").read_bytes() == (workdir / "b" / "config.json").read_bytes()
    assert json.loads((workdir / "a" / "config.json").read_text())["seed"] == 11


def test_seed_changes_run(workdir, tiny_config, capsys):
    cli.main(["train", "--config", tiny_config, "--seed", "1", "--out", "s1", "--json"])
    r1 = _json(capsys)
    cli.main(["train", "--config", tiny_config, "--seed", "2", "--out", "s2", "--json"])
    r2 = _json(capsys)
    m1, m2 = load_manifest(r1["runs"][0]), load_manifest(r2["runs"][0])
    assert m1.checkpoints[-1].param_sha256 != m2.checkpoints[-1].param_sha256


def test_missing_dataset_exit_3(workdir, monkeypatch, tiny_config, capsys):
    monkeypatch.setenv("PRIVPLANE_DATA", str(workdir / "nowhere"))
    assert cli.main(["train", "--config", tiny_config]) == 3
    assert "nowhere" in capsys.readouterr().err


def test_bad_yaml_exit_2(workdir, capsys):
    (workdir / "bad.yaml").write_text("model: [unclosed\n")
    assert cli.main(["train", "--config", "bad.yaml"]) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_key_exit_2(workdir, capsys):
    (workdir / "bad.yaml").write_text("modle: {}\n")
    assert cli.main(["train", "--config", "bad.yaml"]) == 2


def test_missing_config_exit_2(workdir):
    assert cli.main(["train", "--config", "does-not-exist.yaml"]) == 2


def test_bad_epsilon_exit_2(workdir, tiny_config):
    assert cli.main(["train", "--config", tiny_config, "--epsilon", "1.5"]) == 2


# -- project -----------------------------------------------------------------

def test_project_defaults(wide_run, capsys):
    assert cli.main(["project", wide_run, "--json"]) == 0
    out = _json(capsys)
    assert out["epsilon"] == 0.75 and {t["epoch"] for t in out["tables"]} == {0, 1}
    assert all(t["planes"] == 153 for t in out["tables"])
    side = json.load(open(os.path.join("projections", "wide", "epoch_0001_layer_0.json")))
    assert side["epsilon"] == 0.75 and side["mode"] == "combination"


def test_project_permutation_mode(wide_run, capsys):
    assert cli.main(["project", wide_run, "--mode", "permutation", "--out", "perm", "--json"]) == 0
    assert all(t["planes"] == 306 for t in _json(capsys)["tables"])


def test_project_haar_basis(wide_run, capsys):
    assert cli.main(["project", wide_run, "--basis", "haar", "--out", "haar", "--json"]) == 0
    assert all(t["planes"] == 153 for t in _json(capsys)["tables"])


def test_project_missing_layer_exit_4(wide_run, capsys):
    assert cli.main(["project", wide_run, "--layer", "2"]) == 4
    assert "layer 2" in capsys.readouterr().err


def test_project_missing_manifest_exit_3(workdir):
    assert cli.main(["project", str(workdir / "nope")]) == 3


# -- render ------------------------------------------------------------------

def test_render_empty_table_dark(workdir, capsys):
    write_records(workdir / "empty.pppr", np.zeros(0, dtype=RECORD_DTYPE))
    assert cli.main(["render", "empty.pppr", "--resolution", "32", "--format", "pgm", "--json"]) == 0
    out = _json(capsys)
    body = open(out["images"][0], "rb").read()
    assert body.startswith(b"P5\n32 32\n255\n") and set(body[len(b"P5\n32 32\n255\n"):]) == {0}


def test_render_two_tables_makes_montage(wide_run, capsys):
    cli.main(["project", wide_run, "--out", "proj"])
    capsys.readouterr()
    files = [os.path.join("proj", f"epoch_000{e}_layer_0.pppr") for e in (0, 1)]
    assert cli.main(["render", *files, "--resolution", "32", "--out", "img", "--json"]) == 0
    out = _json(capsys)
    assert os.path.basename(out["images"][-1]) == "montage.png" and len(out["images"]) == 3


def test_render_bad_magic_exit_3(workdir):
    (workdir / "junk.pppr").write_bytes(b"JUNKJUNKJUNKJUNK")
    assert cli.main(["render", "junk.pppr"]) == 3


# -- control -----------------------------------------------------------------

def test_control_runs(workdir, capsys):
    assert cli.main(["control", "--dim", "6", "--samples", "500", "--repeats", "2", "--no-render", "--json"]) == 0
    out = _json(capsys)
    assert len(out["rows"]) == 2 and all(r["dof"] == 35 for r in out["rows"])
    assert os.path.exists(workdir / "controls" / "control_gaussian-random-basis.csv")


def test_control_skip_text(workdir, capsys):
    assert cli.main(["control", "--samples", "1", "--repeats", "1", "--no-render"]) == 0
    assert "skipped" in capsys.readouterr().out


def test_control_bad_samples_exit_2(workdir):
    assert cli.main(["control", "--samples", "0"]) == 2


# -- report ------------------------------------------------------------------

def test_report_table(workdir, tiny_config, capsys):
    cli.main(["train", "--config", tiny_config, "--out", "runs"])
    capsys.readouterr()
    assert cli.main(["report", "runs"]) == 0
    text = capsys.readouterr().out.splitlines()
    assert text[0].split()[:3] == ["kind", "norm", "w"] and "std" in text[0]
    assert len(text) == 1 + 17
    assert os.path.exists(workdir / "report" / "error_summary.csv")


def test_report_no_manifests_exit_4(workdir):
    os.makedirs(workdir / "empty")
    assert cli.main(["report", "empty"]) == 4


def test_report_needs_source(workdir):
    assert cli.main(["report"]) == 2


# -- verify ------------------------------------------------------------------

def test_verify_passes(workdir, capsys):
    assert cli.main(["verify"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_verify_json(workdir, capsys):
    assert cli.main(["verify", "--json"]) == 0
    out = _json(capsys)
    assert out["passed"] and len(out["checks"]) == 17


def test_verify_corruption_detected(workdir, capsys):
    assert cli.main(["verify", "--corrupt-activation", "isotropic-tanh"]) == 1
    out = capsys.readouterr().out
    failed = out.splitlines()[-1]
    assert failed.startswith("failed:") and "isotropic-tanh" in failed

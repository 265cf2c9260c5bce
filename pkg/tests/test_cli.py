import importlib
import json

import numpy as np
import pytest

from helpers import QBE_EXPECTED_MAP, QBE_LABELS, QBE_STOPWORDS, qbe_gallery, write_protocol_manifest
from wordspot.cli import main
from wordspot.corpus import Manifest, ManifestEntry, read_image, read_manifest, write_manifest
from wordspot.estimator import load_model
from wordspot.phoc import phoc_matrix

cli = importlib.import_module("wordspot.cli")


def run(ws, *argv):
    return main(["--config", ws["config"], *[str(a) for a in argv]])


def unlabeled_copy(ws, tmp_path):
    m = read_manifest(ws["manifest"])
    entries = [ManifestEntry(str(m.resolve(e))) for e in m.entries]
    path = tmp_path / "unlabeled.tsv"
    write_manifest(Manifest(entries), path)
    return path


# usage and configuration --------------------------------------------------

def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["synth", "--bogus"]) == 1
    assert main(["adapt", "--confidence", "nope"]) == 1
    assert main(["--help"]) == 0
    capsys.readouterr()


def test_bad_config_exits_one_before_writing(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"adapt": {"cycles": 0}}))
    out = tmp_path / "never"
    assert main(["--config", str(bad), "synth", "--out", str(out)]) == 1
    assert not out.exists()
    bad.write_text(json.dumps({"estimator": {"learning": 1}}))
    assert main(["--config", str(bad), "synth", "--out", str(out)]) == 1
    assert "learning" in capsys.readouterr().err
    bad.write_text("{not json")
    assert main(["--config", str(bad), "synth", "--out", str(out)]) == 1
    assert not out.exists()


def test_missing_required_path_exits_one(tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "missing.tsv"), "--out", str(tmp_path)]) == 1


# synth ----------------------------------------------------------------------

def test_synth_creates_corpus(smoke_workspace):
    manifest = read_manifest(smoke_workspace["manifest"])
    assert len(manifest) == 20
    assert manifest.labeled
    assert all(smoke_workspace["manifest"].parent.joinpath(e.image_path).exists() for e in manifest.entries)


def test_synth_words_file_and_nested_out(tmp_path, smoke_workspace):
    words = tmp_path / "words.txt"
    words.write_text("cat\ndog\nsun\nmoon\nstar\n")
    out = tmp_path / "a" / "b"
    assert run(smoke_workspace, "synth", "--words-file", words, "--per-word", 2, "--out", out) == 0
    manifest = read_manifest(out / "manifest.tsv")
    assert len(manifest) == 10
    assert sorted(set(manifest.transcriptions)) == ["cat", "dog", "moon", "star", "sun"]
    assert len(list(out.glob("*.pgm"))) == 10


def test_synth_deterministic_and_seed_override(tmp_path, smoke_workspace):
    for name in ("a", "b"):
        assert run(smoke_workspace, "synth", "--out", tmp_path / name) == 0
    assert run(smoke_workspace, "--seed", 99, "synth", "--out", tmp_path / "c") == 0
    first = [(tmp_path / d / "000003.pgm").read_bytes() for d in "abc"]
    assert first[0] == first[1]
    assert first[0] != first[2]


def test_synth_invalid_style_names_field(tmp_path, capsys):
    cfg = tmp_path / "style.json"
    style = {"stroke_width": [5, 1]}
    cfg.write_text(json.dumps({"synth": {"words": ["a"], "style": style}}))
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "synth", "--out", str(out)]) == 1
    assert "stroke_width" in capsys.readouterr().err
    assert not out.exists()


def test_synth_unknown_style(tmp_path, smoke_workspace):
    assert run(smoke_workspace, "synth", "--style", "Z", "--out", tmp_path / "o") == 1


# train ----------------------------------------------------------------------

def test_train_outputs(smoke_workspace):
    model = load_model(smoke_workspace["model"])
    assert model.output_dim == 36 * 3
    lines = (smoke_workspace["model"].parent / "loss.tsv").read_text().splitlines()
    assert lines[0] == "iteration\tloss"
    assert len(lines) == 31


def test_train_resume(tmp_path, smoke_workspace):
    out = tmp_path / "resumed"
    assert run(smoke_workspace, "train", "--manifest", smoke_workspace["manifest"],
               "--resume-from", smoke_workspace["model"], "--out", out) == 0
    before = load_model(smoke_workspace["model"])
    after = load_model(out / "model.wsaf")
    assert any(not np.array_equal(a, b) for a, b in zip(before.params, after.params))
    assert run(smoke_workspace, "train", "--manifest", smoke_workspace["manifest"],
               "--resume-from", tmp_path / "nope.wsaf", "--out", out) == 1


def test_train_needs_labels(tmp_path, smoke_workspace):
    path = unlabeled_copy(smoke_workspace, tmp_path)
    assert run(smoke_workspace, "train", "--manifest", path, "--out", tmp_path / "m") == 2


# adapt ----------------------------------------------------------------------

def adapt_args(ws, out, *extra):
    return ("adapt", "--model", ws["model"], "--manifest", ws["manifest"], "--out", out, *extra)


def test_adapt_smoke(tmp_path, smoke_workspace):
    out = tmp_path / "adapt"
    assert run(smoke_workspace, *adapt_args(smoke_workspace, out)) == 0
    assert (out / "cycle_1.wsaf").exists() and (out / "cycle_2.wsaf").exists()
    records = [json.loads(l) for l in (out / "run.jsonl").read_text().splitlines()]
    assert [r["cycle"] for r in records] == [1, 2]
    # labels are not read without --diagnostics
    assert all(r["pseudo_label_accuracy"] is None for r in records)
    assert (out / "model.wsaf").read_bytes() == (out / "cycle_2.wsaf").read_bytes()


@pytest.mark.parametrize("measure", ["random", "sigmoid", "entropy", "mc-dropout", "oracle"])
def test_adapt_measures(tmp_path, smoke_workspace, measure):
    assert run(smoke_workspace, *adapt_args(smoke_workspace, tmp_path / measure, "--confidence", measure,
                                            "--cycles", 1)) == 0


def test_adapt_oracle_needs_labels(tmp_path, smoke_workspace):
    path = unlabeled_copy(smoke_workspace, tmp_path)
    out = tmp_path / "o"
    assert run(smoke_workspace, "adapt", "--model", smoke_workspace["model"], "--manifest", path,
               "--confidence", "oracle", "--out", out) == 1
    assert not out.exists()


def test_adapt_diagnostics(tmp_path, smoke_workspace):
    out = tmp_path / "d"
    assert run(smoke_workspace, *adapt_args(smoke_workspace, out, "--diagnostics", "--eval-manifest",
                                            smoke_workspace["manifest"])) == 0
    records = [json.loads(l) for l in (out / "run.jsonl").read_text().splitlines()]
    assert all(r["pseudo_label_accuracy"] is not None and r["map_qbs"] is not None for r in records)


def test_adapt_reproducible_and_seeded(tmp_path, smoke_workspace):
    for name in ("a", "b"):
        assert run(smoke_workspace, *adapt_args(smoke_workspace, tmp_path / name)) == 0
    assert run(smoke_workspace, "--seed", 123, *adapt_args(smoke_workspace, tmp_path / "c")) == 0
    logs = [(tmp_path / n / "run.jsonl").read_bytes() for n in "abc"]
    assert logs[0] == logs[1]
    assert logs[0] != logs[2]


# spot and recognize -----------------------------------------------------------

@pytest.fixture
def oracle_gallery(monkeypatch, smoke_workspace):
    """Make the model return exact PHOCs of the smoke transcriptions."""
    manifest = read_manifest(smoke_workspace["manifest"])
    phocs = phoc_matrix(manifest.transcriptions, load_model(smoke_workspace["model"]).phoc_config)
    monkeypatch.setattr(cli, "forward", lambda model, images: phocs[: len(images)])
    return manifest


def test_spot_qbs_perfect_gallery(capsys, smoke_workspace, oracle_gallery):
    assert run(smoke_workspace, "spot", "--model", smoke_workspace["model"], "--manifest",
               smoke_workspace["manifest"], "--query", "that", "--top-k", 2) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "rank\tid\timage\tdissimilarity"
    assert len(lines) == 3
    expected = [i for i, t in enumerate(oracle_gallery.transcriptions) if t == "that"]
    for line, idx in zip(lines[1:], expected):
        rank, i, image, d = line.split("\t")
        assert int(i) == idx and d == "0.0000"
        assert image == oracle_gallery.entries[idx].image_path


def test_spot_top_k_larger_than_gallery(capsys, smoke_workspace):
    assert run(smoke_workspace, "spot", "--model", smoke_workspace["model"], "--manifest",
               smoke_workspace["manifest"], "--query", "the", "--top-k", 500) == 0
    assert len(capsys.readouterr().out.splitlines()) == 21


def test_spot_qbe(capsys, smoke_workspace):
    manifest = read_manifest(smoke_workspace["manifest"])
    query = manifest.resolve(manifest.entries[5])
    assert run(smoke_workspace, "spot", "--model", smoke_workspace["model"], "--manifest",
               smoke_workspace["manifest"], "--mode", "qbe", "--query", query) == 0
    first = capsys.readouterr().out.splitlines()[1].split("\t")
    assert first[1] == "5" and first[3] == "0.0000"


def test_spot_qbe_missing_image(tmp_path, smoke_workspace):
    code = run(smoke_workspace, "spot", "--model", smoke_workspace["model"], "--manifest",
               smoke_workspace["manifest"], "--mode", "qbe", "--query", tmp_path / "none.pgm")
    assert code != 0


def test_recognize(tmp_path, capsys, smoke_workspace, oracle_gallery):
    out = tmp_path / "rec"
    assert run(smoke_workspace, "recognize", "--model", smoke_workspace["model"], "--manifest",
               smoke_workspace["manifest"], "--out", out) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "image\tlabel\tdissimilarity"
    labels = [l.split("\t")[1] for l in lines[1:]]
    assert labels == oracle_gallery.transcriptions
    assert (out / "recognition.tsv").read_text().splitlines() == lines


# eval ----------------------------------------------------------------------

def test_eval_outputs(tmp_path, capsys, smoke_workspace):
    out = tmp_path / "ev"
    assert run(smoke_workspace, "eval", "--model", smoke_workspace["model"], "--manifest",
               smoke_workspace["manifest"], "--out", out) == 0
    for protocol in ("qbe", "qbs"):
        footer = (out / f"eval_{protocol}.tsv").read_text().splitlines()[-1]
        key, value = footer.split("\t")
        assert key == "mAP" and len(value) == 6 and 0 <= float(value) <= 1


def test_eval_hand_built_manifests(tmp_path, monkeypatch, smoke_workspace):
    monkeypatch.setattr(cli, "forward", lambda model, images: qbe_gallery()[: len(images)])
    manifest = write_protocol_manifest(tmp_path, QBE_LABELS)
    stop = tmp_path / "stop.txt"
    stop.write_text(" ".join(sorted(QBE_STOPWORDS)))
    assert run(smoke_workspace, "eval", "--model", smoke_workspace["model"], "--manifest", manifest,
               "--protocol", "qbe", "--stopwords", stop, "--out", tmp_path / "ev") == 0
    footer = (tmp_path / "ev" / "eval_qbe.tsv").read_text().splitlines()[-1]
    assert footer == f"mAP\t{QBE_EXPECTED_MAP:.4f}"


def test_eval_needs_transcriptions(tmp_path, capsys, smoke_workspace):
    path = unlabeled_copy(smoke_workspace, tmp_path)
    assert run(smoke_workspace, "eval", "--model", smoke_workspace["model"], "--manifest", path,
               "--out", tmp_path / "ev") == 2
    assert "transcriptions" in capsys.readouterr().err


# confidence report -------------------------------------------------------------

def test_confidence_report_labeled(tmp_path, smoke_workspace):
    out = tmp_path / "cr"
    assert run(smoke_workspace, "confidence-report", "--model", smoke_workspace["model"], "--manifest",
               smoke_workspace["manifest"], "--measures", "sigmoid,entropy,oracle", "--out", out) == 0
    lines = (out / "confidence.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["id", "image", "measure", "score", "pseudo_label", "transcription",
                                    "correct"]
    assert len(lines) == 1 + 3 * 20
    assert {l.split("\t")[2] for l in lines[1:]} == {"sigmoid", "entropy", "oracle"}
    assert {l.split("\t")[6] for l in lines[1:]} <= {"0", "1"}


def test_confidence_report_unlabeled(tmp_path, smoke_workspace):
    path = unlabeled_copy(smoke_workspace, tmp_path)
    out = tmp_path / "cr"
    assert run(smoke_workspace, "confidence-report", "--model", smoke_workspace["model"], "--manifest",
               path, "--measures", "mc-dropout,random", "--out", out) == 0
    lines = (out / "confidence.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["id", "image", "measure", "score", "pseudo_label"]
    assert run(smoke_workspace, "confidence-report", "--model", smoke_workspace["model"], "--manifest",
               path, "--measures", "oracle", "--out", out) == 1
    assert run(smoke_workspace, "confidence-report", "--model", smoke_workspace["model"], "--manifest",
               path, "--measures", "magic", "--out", out) == 1


def test_global_flags_after_subcommand(tmp_path, smoke_workspace):
    assert main(["synth", "--config", smoke_workspace["config"], "--seed", "3", "--out",
                 str(tmp_path / "s")]) == 0
    assert read_image(tmp_path / "s" / "000000.pgm").ndim == 2

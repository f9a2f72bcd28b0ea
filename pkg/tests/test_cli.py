import subprocess
import sys

import numpy as np
import pytest

from mbgnn import cli, formats
from mbgnn.netbuild import ContactRecord


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def toy(tmp_path):
    formats.write_fasta(tmp_path / "t.fasta", [("T", "CHAD")])
    recs = [ContactRecord(0, 1, 0.5), ContactRecord(0, 2, 0.9), ContactRecord(1, 3, 0.05)]
    formats.write_contacts(tmp_path / "T.contacts", "T", 4, recs)
    formats.write_embedding(tmp_path / "T.emb", np.ones((4, 12), np.float32))
    formats.write_labels(tmp_path / "l.tsv", {"T": {0: 0, 1: -1}})
    return tmp_path


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert run("gen-synthetic", "--chains", 30, "--seed", 4, "--dim", 12, "--out-dir", d / "corpus") == 0
    assert run(
        "build-graphs", "--contacts", d / "corpus/contacts", "--fasta", d / "corpus/sequences.fasta",
        "--embeddings", d / "corpus/embeddings", "--labels", d / "corpus/labels.tsv", "--out", d / "b.mbgb",
    ) == 0
    common = ["--bundle", d / "b.mbgb", "--folds", 2, "--max-epochs", 3, "--patience", 2, "--hidden", 8,
              "--layers", 3, "--workers", 1]
    assert run("train", "--task", "binding", *common, "--out-checkpoint", d / "bind.ck") == 0
    assert run("train", "--task", "type", *common, "--out-checkpoint", d / "type.ck") == 0
    return d


def predict_args(d, out):
    return ["predict", "--contacts", d / "corpus/contacts", "--fasta", d / "corpus/sequences.fasta",
            "--embeddings", d / "corpus/embeddings", "--binding-ck", d / "bind.ck", "--type-ck", d / "type.ck",
            "--out-report", out]


class TestBuildGraphs:
    def test_toy_chain(self, toy, capsys):
        code = run("build-graphs", "--contacts", toy / "T.contacts", "--fasta", toy / "t.fasta",
                   "--embeddings", toy / "T.emb", "--labels", toy / "l.tsv", "--out", toy / "b")
        assert code == 0
        out = capsys.readouterr().out
        assert "Graphs\t1\n" in out and "Co-evolved Residues\t2\n" in out
        assert "Co-evolved Metal-binding Residues\t1\n" in out
        nets, labeled = formats.read_bundle(toy / "b")
        assert labeled and nets[0].indices == [0, 1]

    def test_threshold_one_gives_nothing(self, toy, capsys):
        code = run("build-graphs", "--contacts", toy / "T.contacts", "--fasta", toy / "t.fasta",
                   "--embeddings", toy / "T.emb", "--threshold", 1.0, "--out", toy / "b")
        assert code == 0 and "Graphs\t0\n" in capsys.readouterr().out

    def test_malformed_contacts_exit_2(self, toy, capsys):
        (toy / "T.contacts").write_text("#contacts v1 chain=T length=4\n0\t1\n")
        code = run("build-graphs", "--contacts", toy / "T.contacts", "--fasta", toy / "t.fasta",
                   "--embeddings", toy / "T.emb", "--out", toy / "b")
        assert code == 2 and "T.contacts:2" in capsys.readouterr().err

    def test_missing_file_exit_2(self, toy):
        assert run("build-graphs", "--contacts", toy / "nope", "--fasta", toy / "t.fasta",
                   "--embeddings", toy / "T.emb", "--out", toy / "b") == 2


class TestTrain:
    def test_checkpoint_round_trip(self, synth):
        ck = formats.read_checkpoint(synth / "bind.ck")
        assert ck.m == 2 and ck.task == "binding" and ck.model_config.d_hidden == 8
        assert formats.checkpoint_bytes(ck) == (synth / "bind.ck").read_bytes()
        assert formats.read_checkpoint(synth / "type.ck").n_classes == 11

    def test_same_seed_same_bytes(self, synth, tmp_path):
        args = ["train", "--bundle", synth / "b.mbgb", "--folds", 2, "--max-epochs", 3, "--patience", 2,
                "--hidden", 8, "--layers", 3]
        assert run(*args, "--out-checkpoint", tmp_path / "a") == 0
        assert run(*args, "--workers", 2, "--out-checkpoint", tmp_path / "b") == 0
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes() == (synth / "bind.ck").read_bytes()

    def test_folds_one_rejected(self, synth, tmp_path, capsys):
        assert run("train", "--bundle", synth / "b.mbgb", "--folds", 1, "--out-checkpoint", tmp_path / "c") == 2
        assert "m_folds" in capsys.readouterr().err
        assert not (tmp_path / "c").exists()

    def test_unlabeled_bundle(self, toy):
        run("build-graphs", "--contacts", toy / "T.contacts", "--fasta", toy / "t.fasta",
            "--embeddings", toy / "T.emb", "--out", toy / "b")
        assert run("train", "--bundle", toy / "b", "--out-checkpoint", toy / "c") == 2

    def test_epoch_log(self, synth, tmp_path, capsys):
        run("train", "--bundle", synth / "b.mbgb", "--folds", 2, "--max-epochs", 2, "--patience", 1,
            "--hidden", 8, "--layers", 3, "--out-checkpoint", tmp_path / "c")
        out = capsys.readouterr().out
        assert "fold=0 epoch=1 loss=" in out and "# fold=1 best_epoch=" in out


class TestPredictEvaluate:
    def test_report_and_rerun(self, synth, tmp_path, capsys):
        assert run(*predict_args(synth, tmp_path / "r1")) == 0
        assert run(*predict_args(synth, tmp_path / "r2")) == 0
        assert (tmp_path / "r1").read_bytes() == (tmp_path / "r2").read_bytes()
        text = (tmp_path / "r1").read_text()
        assert text.startswith("#mbgnn-report v1\n") and "\nstage1\t" in text

    def test_corrupt_checkpoint_exit_4(self, synth, tmp_path):
        raw = bytearray((synth / "bind.ck").read_bytes())
        raw[40] ^= 0xFF
        (tmp_path / "bad.ck").write_bytes(bytes(raw))
        args = predict_args(synth, tmp_path / "r")
        args[args.index(synth / "bind.ck")] = tmp_path / "bad.ck"
        assert run(*args) == 4

    def test_swapped_checkpoints_rejected(self, synth, tmp_path):
        args = predict_args(synth, tmp_path / "r")
        i, j = args.index(synth / "bind.ck"), args.index(synth / "type.ck")
        args[i], args[j] = args[j], args[i]
        assert run(*args) == 2

    def test_no_pairs_reason(self, toy, synth, tmp_path):
        formats.write_contacts(toy / "T.contacts", "T", 4, [ContactRecord(0, 1, 0.05)])
        code = run("predict", "--contacts", toy / "T.contacts", "--fasta", toy / "t.fasta", "--embeddings",
                   toy / "T.emb", "--binding-ck", synth / "bind.ck", "--type-ck", synth / "type.ck",
                   "--out-report", tmp_path / "r")
        assert code == 0
        text = (tmp_path / "r").read_text()
        assert "#reason=no co-evolved" in text and "calls=0" in text

    def test_evaluate_perfect(self, tmp_path, capsys):
        (tmp_path / "r").write_text(
            "#mbgnn-report v1\n#chain=A length=9\nA\t0\tC\t0.9\t1\tZn\t0.8\nA\t1\tH\t0.2\t0\t-\t-\n"
            "A\t2\tD\t0.7\t1\tCa\t0.6\n"
        )
        formats.write_labels(tmp_path / "l", {"A": {0: 0, 1: -1, 2: 1}})
        assert run("evaluate", "--report", tmp_path / "r", "--labels", tmp_path / "l", "--out-metrics", tmp_path / "m") == 0
        m = (tmp_path / "m").read_text()
        assert "binding.f1=1.000000" in m and "type.Zn.f1=1.000000" in m and "type.Ca.f1=1.000000" in m

    def test_evaluate_hand_case(self, tmp_path, capsys):
        # tp: 0, 1; fp: 2; fn: 3
        (tmp_path / "r").write_text(
            "#mbgnn-report v1\n#chain=A length=9\n"
            "A\t0\tC\t0.9\t1\tZn\t0.8\nA\t1\tH\t0.9\t1\tZn\t0.8\nA\t2\tD\t0.7\t1\tZn\t0.6\nA\t3\tE\t0.1\t0\t-\t-\n"
        )
        formats.write_labels(tmp_path / "l", {"A": {0: 0, 1: 0, 2: -1, 3: 0}})
        assert run("evaluate", "--report", tmp_path / "r", "--labels", tmp_path / "l") == 0
        out = capsys.readouterr().out
        assert "binding.tp=2\nbinding.fp=1\nbinding.fn=1\n" in out
        assert "binding.precision=0.666667\nbinding.recall=0.666667\nbinding.f1=0.666667\n" in out

    def test_evaluate_chain_mismatch(self, tmp_path):
        (tmp_path / "r").write_text("#mbgnn-report v1\n#chain=A length=9\nA\t0\tC\t0.9\t1\tZn\t0.8\n")
        formats.write_labels(tmp_path / "l", {"B": {0: 0}})
        assert run("evaluate", "--report", tmp_path / "r", "--labels", tmp_path / "l") == 2

    def test_evaluate_matches_oracle(self, tmp_path, capsys):
        from oracles import count_binary, prf

        rng = np.random.default_rng(0)
        truth = rng.integers(-1, 11, 200)
        call = rng.integers(0, 2, 200)
        lines = ["#mbgnn-report v1", "#chain=A length=200"]
        for i in range(200):
            metal = "Zn" if call[i] else "-"
            lines.append(f"A\t{i}\tC\t0.5\t{call[i]}\t{metal}\t{'0.5' if call[i] else '-'}")
        (tmp_path / "r").write_text("\n".join(lines) + "\n")
        formats.write_labels(tmp_path / "l", {"A": {i: int(t) for i, t in enumerate(truth)}})
        run("evaluate", "--report", tmp_path / "r", "--labels", tmp_path / "l")
        kv = dict(l.split("=") for l in capsys.readouterr().out.split("[metrics]\n")[1].splitlines())
        p, r, f = prf(*count_binary(truth >= 0, call))
        assert float(kv["binding.f1"]) == pytest.approx(f, abs=5e-7)
        assert float(kv["binding.precision"]) == pytest.approx(p, abs=5e-7)


def test_sensitivity_command(synth, capsys):
    code = run("sensitivity", "--corpus", synth / "corpus", "--seeds", 0, 1, "--max-epochs", 2,
               "--patience", 1, "--type-hidden", 8, "--workers", 1)
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("metric\t1\t2\tmean\tstd") and "binding.f1" in out


def test_entry_point_subprocess(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mbgnn.cli", "gen-synthetic", "--chains", "2", "--out-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "chains=2" in res.stdout
    res = subprocess.run([sys.executable, "-m", "mbgnn.cli", "train", "--bundle", str(tmp_path / "x"),
                          "--out-checkpoint", str(tmp_path / "c")], capture_output=True, text=True)
    assert res.returncode == 2 and "error" in res.stderr

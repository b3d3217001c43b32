import json
import os

import numpy as np
import pytest

from tailgnn import cli, dataio, ontology

TINY_MODEL_FLAGS = [
    "--k", "2", "--conv-features", "4,4", "--dilations", "1,2",
    "--embed-dim", "4", "--gnn-features", "4",
]
TINY_TRAIN_FLAGS = ["--lr", "0.01", "--max-epochs", "2", "--patience", "2"]


def run_cli(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture()
def corpus(tmp_path):
    """A small synthetic data directory written through the CLI itself."""
    g = ontology.random_dag(10, seed=3)
    edges_path = tmp_path / "edges.tsv"
    edges_path.write_text(
        "\n".join(f"{g.node_ids[c]}\t{g.node_ids[p]}" for c, p in g.edges)
        + "\n")
    data_dir = tmp_path / "data"
    code = cli.main(["synth", "--ontology", str(edges_path), "--n", "40",
                     "--seed", "5", "--out", str(data_dir)])
    assert code == 0
    return tmp_path, data_dir


class TestSynth:
    def test_writes_loadable_corpus(self, corpus, capsys):
        _, data_dir = corpus
        for name in (cli.EDGES_FILE, cli.FASTA_FILE, cli.ANNOT_FILE):
            assert (data_dir / name).exists()
        g, ds, report, digest = cli.load_data_dir(str(data_dir))
        assert g.node_count == 10
        assert len(ds.records) + report.dropped_root_only == 40
        assert len(digest) == 64

    def test_deterministic_bytes(self, tmp_path, capsys):
        g = ontology.random_dag(8, seed=1)
        edges = tmp_path / "e.tsv"
        edges.write_text("\n".join(
            f"{g.node_ids[c]}\t{g.node_ids[p]}" for c, p in g.edges) + "\n")
        outs = []
        for d in ("d1", "d2"):
            out = tmp_path / d
            assert cli.main(["synth", "--ontology", str(edges), "--n", "20",
                             "--seed", "9", "--out", str(out)]) == 0
            outs.append((out / cli.FASTA_FILE).read_bytes()
                        + (out / cli.ANNOT_FILE).read_bytes())
        assert outs[0] == outs[1]


class TestPrepOntology:
    def test_prune_and_artifacts(self, corpus, capsys):
        tmp_path, data_dir = corpus
        out = tmp_path / "prepped"
        code, stdout, _ = run_cli(
            ["prep-ontology", "--edges", str(data_dir / cli.EDGES_FILE),
             "--annotations", str(data_dir / cli.ANNOT_FILE),
             "--min-count", "1", "--out", str(out)], capsys)
        assert code == 0
        assert stdout.startswith("nodes=")
        pruned = ontology.parse_edge_list((out / "edges.tsv").read_text())
        assert pruned.node_count >= 1
        spectral = (out / "spectral.tsv").read_text().strip().split("\n")
        assert spectral[0].startswith("node_id\tev1")
        assert len(spectral) == pruned.node_count + 1
        remap = (out / "remap.tsv").read_text().strip().split("\n")
        assert remap[0] == "old_id\tnew_index"

    def test_cycle_reports_error_kind(self, tmp_path, capsys):
        edges = tmp_path / "cyc.tsv"
        edges.write_text("a\tb\nb\ta\n")
        ann = tmp_path / "ann.tsv"
        ann.write_text("p1\ta\n")
        code, _, err = run_cli(
            ["prep-ontology", "--edges", str(edges), "--annotations",
             str(ann), "--min-count", "1", "--out", str(tmp_path / "o")],
            capsys)
        assert code == 1
        assert err.startswith("ERROR CycleDetected:")


class TestTrainEvalPredict:
    def test_full_workflow(self, corpus, capsys):
        tmp_path, data_dir = corpus
        out = tmp_path / "run"
        code, stdout, _ = run_cli(
            ["train", "--data", str(data_dir), "--out", str(out),
             "--seed", "1"] + TINY_MODEL_FLAGS + TINY_TRAIN_FLAGS, capsys)
        assert code == 0
        assert "test micro_f1=" in stdout
        ckpt = out / "ckpt_sum_seed1.tgnn"
        assert ckpt.exists()
        assert (out / "history_sum_seed1.csv").exists()
        assert (out / "test_reports.csv").exists()

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [1]
        assert "ckpt_sum_seed1.tgnn" in manifest["outputs"]
        assert cli.EDGES_FILE in manifest["input_digests"]

        # eval reproduces a report from the checkpoint alone
        code, stdout, _ = run_cli(
            ["eval", "--checkpoint", str(ckpt), "--data", str(data_dir)],
            capsys)
        assert code == 0
        assert stdout.startswith("micro_f1=")

        # predict emits one line per (record, term)
        fasta = data_dir / cli.FASTA_FILE
        code, stdout, _ = run_cli(
            ["predict", "--checkpoint", str(ckpt), "--fasta", str(fasta)],
            capsys)
        assert code == 0
        lines = stdout.strip().split("\n")
        n_records = len(dataio.parse_fasta(fasta.read_text()))
        assert len(lines) == n_records * 10
        pid, term, prob = lines[0].split("\t")
        assert 0.0 <= float(prob) <= 1.0

    def test_predict_close_flag_enforces_hierarchy(self, corpus, capsys):
        tmp_path, data_dir = corpus
        out = tmp_path / "run"
        assert cli.main(
            ["train", "--data", str(data_dir), "--out", str(out),
             "--seed", "1"] + TINY_MODEL_FLAGS + TINY_TRAIN_FLAGS) == 0
        capsys.readouterr()
        ckpt = out / "ckpt_sum_seed1.tgnn"
        fasta = data_dir / cli.FASTA_FILE
        code, stdout, _ = run_cli(
            ["predict", "--checkpoint", str(ckpt), "--fasta", str(fasta),
             "--close"], capsys)
        assert code == 0
        g = ontology.parse_edge_list((data_dir / cli.EDGES_FILE).read_text())
        probs = {}
        for line in stdout.strip().split("\n"):
            pid, term, p = line.split("\t")
            probs[(pid, term)] = float(p)
        for (pid, term), p in probs.items():
            for parent in g.parents[g.index_of(term)]:
                assert probs[(pid, g.node_ids[parent])] >= p

    def test_seed_sweep_aggregates(self, corpus, capsys):
        tmp_path, data_dir = corpus
        out = tmp_path / "sweep"
        code, stdout, _ = run_cli(
            ["train", "--data", str(data_dir), "--out", str(out),
             "--seeds", "1,2"] + TINY_MODEL_FLAGS + TINY_TRAIN_FLAGS, capsys)
        assert code == 0
        assert "aggregate test micro_f1:" in stdout
        assert "±" in stdout
        assert (out / "ckpt_sum_seed1.tgnn").exists()
        assert (out / "ckpt_sum_seed2.tgnn").exists()

    def test_baseline_tag_and_gnn_flag_conflict(self, corpus, capsys):
        tmp_path, data_dir = corpus
        out = tmp_path / "base"
        code, _, _ = run_cli(
            ["train", "--data", str(data_dir), "--out", str(out),
             "--seed", "1", "--aggregator", "baseline"]
            + TINY_MODEL_FLAGS + TINY_TRAIN_FLAGS, capsys)
        assert code == 0
        assert (out / "ckpt_baseline_seed1.tgnn").exists()

        code, _, err = run_cli(
            ["train", "--data", str(data_dir), "--out", str(out),
             "--seed", "1", "--aggregator", "baseline", "--gnn-layers", "2"]
            + TINY_MODEL_FLAGS + TINY_TRAIN_FLAGS, capsys)
        assert code == 1
        assert err.startswith("ERROR TailGNNError:")

    def test_determinism_across_runs(self, corpus, capsys):
        tmp_path, data_dir = corpus
        digests = []
        for d in ("r1", "r2"):
            out = tmp_path / d
            assert cli.main(
                ["train", "--data", str(data_dir), "--out", str(out),
                 "--seed", "3"] + TINY_MODEL_FLAGS + TINY_TRAIN_FLAGS) == 0
            capsys.readouterr()
            digests.append((out / "ckpt_sum_seed3.tgnn").read_bytes())
        assert digests[0] == digests[1]

    def test_eval_digest_mismatch(self, corpus, capsys):
        tmp_path, data_dir = corpus
        out = tmp_path / "run"
        assert cli.main(
            ["train", "--data", str(data_dir), "--out", str(out),
             "--seed", "1"] + TINY_MODEL_FLAGS + TINY_TRAIN_FLAGS) == 0
        capsys.readouterr()
        # a different ontology file in an otherwise valid data dir
        other = tmp_path / "other"
        other.mkdir()
        edges = (data_dir / cli.EDGES_FILE).read_text()
        (other / cli.EDGES_FILE).write_text("# tweaked\n" + edges)
        (other / cli.FASTA_FILE).write_text(
            (data_dir / cli.FASTA_FILE).read_text())
        (other / cli.ANNOT_FILE).write_text(
            (data_dir / cli.ANNOT_FILE).read_text())
        code, _, err = run_cli(
            ["eval", "--checkpoint", str(out / "ckpt_sum_seed1.tgnn"),
             "--data", str(other)], capsys)
        assert code == 1
        assert err.startswith("ERROR DigestMismatch:")


class TestConfigFile:
    def test_config_sets_defaults_flags_win(self, corpus, capsys):
        tmp_path, data_dir = corpus
        cfg = tmp_path / "run.cfg"
        cfg.write_text("max-epochs = 1\nlr = 0.02\n")
        out = tmp_path / "cfgrun"
        code, _, _ = run_cli(
            ["--config", str(cfg), "train", "--data", str(data_dir),
             "--out", str(out), "--seed", "1", "--lr", "0.01",
             "--patience", "1"] + TINY_MODEL_FLAGS, capsys)
        assert code == 0
        hist = (out / "history_sum_seed1.csv").read_text().strip().split("\n")
        assert len(hist) == 2  # header + exactly one epoch from config file


class TestGradcheckCommand:
    def test_tiny_scale_passes(self, capsys):
        code, stdout, _ = run_cli(["gradcheck", "--scale", "tiny"], capsys)
        assert code == 0
        assert "gradcheck passed" in stdout
        assert "FAIL" not in stdout


class TestErrorSurface:
    def test_missing_data_dir_is_not_a_traceback(self, tmp_path, capsys):
        with pytest.raises(FileNotFoundError):
            # genuinely missing files surface as OSError, not silent failure
            cli.main(["train", "--data", str(tmp_path / "nope"),
                      "--out", str(tmp_path / "o")])

    def test_malformed_edges_error_line(self, tmp_path, capsys):
        bad = tmp_path / "data"
        bad.mkdir()
        (bad / cli.EDGES_FILE).write_text("not tab separated\n")
        (bad / cli.FASTA_FILE).write_text(">p\nACD\n")
        (bad / cli.ANNOT_FILE).write_text("p\ta\n")
        code, _, err = run_cli(
            ["train", "--data", str(bad), "--out", str(tmp_path / "o")],
            capsys)
        assert code == 1
        assert err.startswith("ERROR MalformedLine:")

"""Command-line surface: prep-ontology, synth, train, eval, predict, gradcheck.

Every run is reproducible from flags + seed; train writes a JSON manifest
recording the command line, config snapshot, input digests, and output
hashes. Errors print as ``ERROR <kind>: <message>`` on stderr with a
nonzero exit code.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from tailgnn import autodiff as ad
from tailgnn import dataio, evaluate, model, ontology, train
from tailgnn.errors import DigestMismatch, TailGNNError


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_atomic(path, data):
    tmp = f"{path}.tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as f:
        f.write(data)
    os.replace(tmp, path)


def _read(path):
    with open(path, "r") as f:
        return f.read()


def _load_config_file(path):
    """key=value per line; '#' comments."""
    out = {}
    for line in _read(path).splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


# --- data directory layout ---

EDGES_FILE = "edges.tsv"
FASTA_FILE = "sequences.fasta"
ANNOT_FILE = "annotations.tsv"


def load_data_dir(data_dir, max_len=1000):
    edges_path = os.path.join(data_dir, EDGES_FILE)
    g = ontology.parse_edge_list(_read(edges_path))
    seqs = dataio.parse_fasta(_read(os.path.join(data_dir, FASTA_FILE)))
    annot = dataio.parse_annotations(_read(os.path.join(data_dir, ANNOT_FILE)), g)
    records = [dataio.ProteinRecord(pid, seq, annot[pid])
               for pid, seq in seqs if pid in annot]
    ds, report = dataio.filter_records(records, g, max_len=max_len)
    return g, ds, report, _sha256_file(edges_path)


def graph_artifacts(g, cfg, spectral_which="largest"):
    a = ontology.adjacency_matrix(g, mode=cfg.adjacency_mode,
                                  self_loops=cfg.self_loops)
    spectral = None
    if cfg.use_spectral and not cfg.baseline:
        feats = ontology.laplacian_spectral_features(
            g, count=cfg.spectral_count, which=spectral_which)
        spectral = feats.matrix
    return a, spectral


# --- commands ---

def cmd_prep_ontology(args):
    g = ontology.parse_edge_list(_read(args.edges))
    annot = dataio.parse_annotations(_read(args.annotations), g)
    pruned, remap = ontology.prune_by_support(
        g, list(annot.values()), args.min_count)
    os.makedirs(args.out, exist_ok=True)

    edge_lines = [f"{pruned.node_ids[c]}\t{pruned.node_ids[p]}"
                  for c, p in pruned.edges]
    _write_atomic(os.path.join(args.out, EDGES_FILE),
                  "\n".join(edge_lines) + "\n")

    remap_lines = ["old_id\tnew_index"]
    for old, new in enumerate(remap):
        if new >= 0:
            remap_lines.append(f"{g.node_ids[old]}\t{new}")
    _write_atomic(os.path.join(args.out, "remap.tsv"),
                  "\n".join(remap_lines) + "\n")

    feats = ontology.laplacian_spectral_features(
        pruned, count=min(args.spectral_count, pruned.node_count),
        which=args.spectral_which)
    _write_atomic(os.path.join(args.out, "spectral.tsv"),
                  ontology.spectral_features_tsv(pruned, feats))

    summary = f"nodes={pruned.node_count} edges={pruned.edge_count}\n"
    _write_atomic(os.path.join(args.out, "summary.txt"), summary)
    print(summary, end="")
    return 0


def cmd_synth(args):
    g = ontology.parse_edge_list(_read(args.ontology))
    ds = dataio.synthesize(g, args.n, args.seed,
                           motif_len=args.motif_len,
                           noise_rate=args.noise_rate)
    os.makedirs(args.out, exist_ok=True)
    _write_atomic(os.path.join(args.out, EDGES_FILE), _read(args.ontology))
    _write_atomic(os.path.join(args.out, FASTA_FILE), dataio.sequences_fasta(ds))
    _write_atomic(os.path.join(args.out, ANNOT_FILE), dataio.annotations_tsv(ds))
    print(f"wrote {len(ds.records)} records over {g.node_count} labels to {args.out}")
    return 0


def _model_config_from_args(args, n_labels):
    baseline = args.aggregator == "baseline"
    if baseline and args.gnn_layers is not None:
        raise TailGNNError("--gnn-layers is meaningless with --aggregator baseline")
    return model.ModelConfig(
        k=args.k,
        conv_features=args.conv_features,
        embed_dim=args.embed_dim,
        kernel=args.kernel,
        dilations=args.dilations,
        gnn_layers=args.gnn_layers if args.gnn_layers is not None else 2,
        gnn_features=args.gnn_features,
        aggregator="sum" if baseline else args.aggregator,
        use_spectral=not args.no_spectral,
        baseline=baseline,
        adjacency_mode=args.adjacency_mode,
        self_loops=not args.no_self_loops,
    )


def _run_one_training(seed, args, model_cfg, splits, a, spectral, digest, g):
    train_ds, val_ds, test_ds = splits
    train_cfg = train.TrainConfig(
        lr=args.lr, batch_size=args.batch_size, max_epochs=args.max_epochs,
        patience=args.patience, seed=seed, eval_threshold=args.threshold)
    t0 = time.time()
    params, history = train.train_loop(model_cfg, train_cfg, train_ds, val_ds,
                                       a, spectral)
    elapsed = time.time() - t0

    tag = "baseline" if model_cfg.baseline else model_cfg.aggregator
    if not model_cfg.use_spectral and not model_cfg.baseline:
        tag += "-nospec"
    ckpt = os.path.join(args.out, f"ckpt_{tag}_seed{seed}.tgnn")
    spectral_json = None if spectral is None else [list(map(float, r)) for r in spectral]
    train.save_checkpoint(
        params, model_cfg, train_cfg, ckpt,
        n_labels=g.node_count,
        node_ids=list(g.node_ids),
        edges=[[c, p] for c, p in g.edges],
        ontology_digest=digest,
        split_seed=args.split_seed,
        spectral=spectral_json,
    )
    _write_atomic(os.path.join(args.out, f"history_{tag}_seed{seed}.csv"),
                  train.history_csv(history))

    test_probs = train.predict_probs(params, model_cfg, test_ds, a, spectral,
                                     train_cfg.batch_size)
    report = evaluate.evaluate_model(test_probs, test_ds.label_matrix(), g,
                                     threshold=args.threshold)
    return seed, ckpt, report, elapsed, history


def cmd_train(args):
    g, ds, _, digest = load_data_dir(args.data)
    splits = dataio.split(ds, seed=args.split_seed)
    model_cfg = _model_config_from_args(args, g.node_count)
    a, spectral = graph_artifacts(g, model_cfg, args.spectral_which)
    os.makedirs(args.out, exist_ok=True)

    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds
             else [args.seed])
    workers = max(1, int(os.environ.get("TGNN_THREADS", "1")))
    t0 = time.time()
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(
                lambda s: _run_one_training(s, args, model_cfg, splits, a,
                                            spectral, digest, g), seeds))
    else:
        results = [_run_one_training(s, args, model_cfg, splits, a, spectral,
                                     digest, g) for s in seeds]

    rows = [evaluate.EvalReport.CSV_HEADER + ",seed"]
    for seed, ckpt, report, elapsed, _ in results:
        print(f"seed {seed}: test micro_f1={report.micro_f1:.4f} "
              f"f_max={report.f_max:.4f} ({elapsed:.1f}s) -> {ckpt}")
        rows.append(report.to_csv_row() + f",{seed}")
    _write_atomic(os.path.join(args.out, "test_reports.csv"),
                  "\n".join(rows) + "\n")

    if len(results) >= 2:
        agg = evaluate.aggregate_runs([r for _, _, r, _, _ in results])
        mean, std = agg["micro_f1"]
        print(f"aggregate test micro_f1: {evaluate.format_mean_std(mean, std)}")

    manifest = {
        "command": " ".join(sys.argv),
        "model_config": model_cfg.to_dict(),
        "seeds": seeds,
        "split_seed": args.split_seed,
        "input_digests": {EDGES_FILE: digest},
        "outputs": {os.path.basename(c): _sha256_file(c)
                    for _, c, _, _, _ in results},
        "wall_clock_s": time.time() - t0,
    }
    _write_atomic(os.path.join(args.out, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def _load_checkpoint_graph(path):
    params, model_cfg, train_cfg, meta = train.load_checkpoint(path)
    g = ontology.OntologyGraph(meta["node_ids"],
                               [tuple(e) for e in meta["edges"]])
    spectral = meta.get("spectral")
    spectral = None if spectral is None else np.array(spectral)
    a = ontology.adjacency_matrix(g, mode=model_cfg.adjacency_mode,
                                  self_loops=model_cfg.self_loops)
    return params, model_cfg, train_cfg, meta, g, a, spectral


def cmd_eval(args):
    params, model_cfg, train_cfg, meta, g, a, spectral = \
        _load_checkpoint_graph(args.checkpoint)
    data_digest = _sha256_file(os.path.join(args.data, EDGES_FILE))
    if meta.get("ontology_digest") and meta["ontology_digest"] != data_digest:
        raise DigestMismatch(
            "checkpoint was trained against a different ontology edge list")
    _, ds, _, _ = load_data_dir(args.data)
    splits = dataio.split(ds, seed=meta.get("split_seed", args.split_seed))
    chosen = {"train": splits[0], "val": splits[1], "test": splits[2]}[args.split]
    probs = train.predict_probs(params, model_cfg, chosen, a, spectral,
                                train_cfg.batch_size)
    report = evaluate.evaluate_model(probs, chosen.label_matrix(), g,
                                     threshold=args.threshold)
    print(report.to_text(), end="")
    return 0


def cmd_predict(args):
    params, model_cfg, train_cfg, meta, g, a, spectral = \
        _load_checkpoint_graph(args.checkpoint)
    seqs = dataio.parse_fasta(_read(args.fasta))
    dummy = ontology.LabelSet(np.zeros(g.node_count, dtype=bool))
    records = [dataio.ProteinRecord(pid, seq, dummy) for pid, seq in seqs]
    ds = dataio.Dataset(records, g)
    probs = train.predict_probs(params, model_cfg, ds, a, spectral,
                                train_cfg.batch_size)
    if args.close:
        probs = evaluate.close_probabilities(probs, g)
    out = sys.stdout
    for i, r in enumerate(records):
        for j in range(g.node_count):
            out.write(f"{r.id}\t{g.node_ids[j]}\t{probs[i, j]:.6f}\n")
    return 0


def cmd_gradcheck(args):
    from tailgnn.gradcheck import run_suite
    failures = run_suite(scale=args.scale, log=print)
    if failures:
        print(f"gradcheck FAILED: {failures} check(s) above tolerance")
        return 1
    print("gradcheck passed")
    return 0


# --- argument parsing ---

def _add_model_flags(p):
    p.add_argument("--aggregator", default="sum",
                   choices=["sum", "mean", "max", "gat", "baseline"])
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--conv-features", dest="conv_features",
                   type=lambda s: tuple(int(x) for x in s.split(",")),
                   default=(32, 64, 128, 256, 512, 512))
    p.add_argument("--dilations",
                   type=lambda s: tuple(int(x) for x in s.split(",")),
                   default=(1, 2, 4, 8, 16, 32))
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=16)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--gnn-layers", dest="gnn_layers", type=int, default=None,
                   choices=[1, 2])
    p.add_argument("--gnn-features", dest="gnn_features", type=int, default=16)
    p.add_argument("--no-spectral", action="store_true")
    p.add_argument("--no-self-loops", action="store_true")
    p.add_argument("--adjacency-mode", dest="adjacency_mode",
                   default="undirected",
                   choices=["undirected", "child_to_parent", "parent_to_child"])
    p.add_argument("--spectral-which", dest="spectral_which",
                   default="largest", choices=["largest", "smallest"])


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=1234)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tailgnn",
        description="Hierarchical multi-label prediction with label-graph GNNs")
    parser.add_argument("--config", help="key=value file overriding defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep-ontology", help="prune and featurize an ontology")
    p.add_argument("--edges", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--min-count", dest="min_count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spectral-count", dest="spectral_count", type=int, default=5)
    p.add_argument("--spectral-which", dest="spectral_which",
                   default="largest", choices=["largest", "smallest"])
    p.set_defaults(func=cmd_prep_ontology)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--ontology", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--motif-len", dest="motif_len", type=int, default=5)
    p.add_argument("--noise-rate", dest="noise_rate", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model or a seed sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--seeds", help="comma-separated seed sweep, e.g. 1,2,3,4,5")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a data split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=1234)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-term probabilities for a FASTA file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fasta", required=True)
    p.add_argument("--close", action="store_true",
                   help="upward max-propagation for hierarchy consistency")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--scale", default="tiny", choices=["tiny", "small"])
    p.set_defaults(func=cmd_gradcheck)

    return parser


def _apply_config_file(parser, argv):
    # --config values become defaults; explicit flags still win
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    path = argv[idx + 1]
    overrides = _load_config_file(path)
    ns, _ = parser.parse_known_args(argv)
    for key, value in overrides.items():
        flag = "--" + key.replace("_", "-")
        if not any(a.startswith(flag) for a in argv):
            argv = argv + [flag, value]
    return argv


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except TailGNNError as e:
        print(f"ERROR {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

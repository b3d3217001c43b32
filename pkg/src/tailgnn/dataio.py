"""Sequence/annotation ingestion, encoding, splitting, synthetic corpora."""

from dataclasses import dataclass, field

import numpy as np

from tailgnn import ontology
from tailgnn.errors import (
    EmptyFile,
    InvalidResidue,
    MalformedLine,
    MotifSpaceExhausted,
    SequenceBeforeHeader,
    TooFewRecords,
    UnknownTerm,
)
from tailgnn.ontology import LabelSet
from tailgnn.rng import Xoshiro256pp

ALPHABET = "ACDEFGHIKLMNPQRSTVWYX"
CANONICAL = ALPHABET[:-1]
_RESIDUE_INDEX = {ch: i for i, ch in enumerate(ALPHABET)}


@dataclass
class ProteinRecord:
    id: str
    sequence: str
    labels: LabelSet


@dataclass
class Dataset:
    records: list
    ontology: ontology.OntologyGraph
    split_tag: str = "unsplit"

    def __len__(self):
        return len(self.records)

    def label_matrix(self):
        """N x node_count 0/1 target matrix."""
        return np.stack([r.labels.mask for r in self.records]).astype(np.float64)


def parse_fasta(text):
    """Parse FASTA text into (id, sequence) pairs.

    Wrapped sequence lines are concatenated, residues uppercased, and
    anything outside the 20 canonical letters mapped to X.
    """
    records = []
    current_id = None
    chunks = []

    def flush():
        if current_id is not None:
            records.append((current_id, "".join(chunks)))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            current_id = line[1:].split()[0] if len(line) > 1 else ""
            chunks = []
        else:
            if current_id is None:
                raise SequenceBeforeHeader(f"line {lineno}: sequence before '>' header")
            cleaned = "".join(
                ch if ch in _RESIDUE_INDEX and ch != "X" else "X"
                for ch in line.upper())
            chunks.append(cleaned)
    flush()
    if not records:
        raise EmptyFile("no FASTA records found")
    return records


def parse_annotations(text, g):
    """Parse `protein_id<TAB>term_id` lines into closed label sets."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise MalformedLine(f"line {lineno}: expected protein_id<TAB>term_id")
        pid, term = parts
        try:
            ti = g.index_of(term)
        except KeyError:
            raise UnknownTerm(f"line {lineno}: unknown term {term!r}") from None
        mask = raw.setdefault(pid, np.zeros(g.node_count, dtype=bool))
        mask[ti] = True
    return {pid: ontology.close_upward(g, LabelSet(mask))
            for pid, mask in raw.items()}


def encode_one_hot(seq):
    """One-hot encode over the fixed 21-letter alphabet, (len, 21)."""
    out = np.zeros((len(seq), len(ALPHABET)), dtype=np.float64)
    for i, ch in enumerate(seq):
        j = _RESIDUE_INDEX.get(ch)
        if j is None:
            raise InvalidResidue(f"residue {ch!r} at position {i}")
        out[i, j] = 1.0
    return out


def decode_one_hot(matrix):
    return "".join(ALPHABET[j] for j in np.argmax(matrix, axis=1))


@dataclass
class FilterReport:
    kept: int = 0
    dropped_root_only: int = 0
    dropped_too_long: int = 0


def filter_records(records, g, max_len=1000):
    """Drop root-only and over-length records; returns (Dataset, report)."""
    root = g.root
    kept = []
    report = FilterReport()
    for r in records:
        if len(r.sequence) > max_len:
            report.dropped_too_long += 1
            continue
        nonroot = r.labels.mask.copy()
        if root is not None:
            nonroot[root] = False
        if not nonroot.any():
            report.dropped_root_only += 1
            continue
        kept.append(r)
    report.kept = len(kept)
    return Dataset(kept, g), report


def split(d, ratios=(0.68, 0.17, 0.15), seed=0):
    """Seeded shuffle + contiguous cut into train/val/test datasets."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios {ratios} must sum to 1")
    n = len(d.records)
    if n < 3:
        raise TooFewRecords(f"{n} records cannot be split three ways")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    parts = (order[:n_train], order[n_train:n_train + n_val],
             order[n_train + n_val:])
    tags = ("train", "val", "test")
    return tuple(
        Dataset([d.records[i] for i in part], d.ontology, tag)
        for part, tag in zip(parts, tags))


def label_frequency_report(datasets):
    """Per-label positive frequency per split, for stratification checks.

    Returns a (node_count x n_splits) array of fractions.
    """
    cols = []
    for ds in datasets:
        m = ds.label_matrix()
        cols.append(m.mean(axis=0) if len(ds) else np.zeros(ds.ontology.node_count))
    return np.stack(cols, axis=1)


def manifest_tsv(datasets):
    lines = ["id\tsplit"]
    for ds in datasets:
        for r in ds.records:
            lines.append(f"{r.id}\t{ds.split_tag}")
    return "\n".join(lines) + "\n"


def synthesize(g, n, seed, motif_len=5, noise_rate=0.05):
    """Motif-planting generator: a learnable sequence->label mapping.

    Each leaf of the ontology owns a distinct fixed motif. A record
    samples a few leaves (geometric, mean 2), plants their motifs at
    non-overlapping positions in a random background, and takes the
    upward closure of the leaves as labels. With probability noise_rate
    one planted motif gets a single-residue corruption (labels kept),
    injecting label noise.
    """
    rng = Xoshiro256pp(seed)
    leaves = g.leaves()
    if not leaves:
        raise MotifSpaceExhausted("graph has no leaves")
    if len(leaves) > len(CANONICAL) ** motif_len:
        raise MotifSpaceExhausted(
            f"{len(leaves)} leaves need distinct motifs of length {motif_len}")

    motifs = {}
    used = set()
    for leaf in leaves:
        for _ in range(10000):
            m = "".join(CANONICAL[rng.randint(20)] for _ in range(motif_len))
            if m not in used:
                used.add(m)
                motifs[leaf] = m
                break
        else:
            raise MotifSpaceExhausted("could not draw distinct motifs")

    records = []
    for idx in range(n):
        n_leaves = min(rng.geometric(0.5), len(leaves))
        chosen = [leaves[i] for i in rng.sample(len(leaves), n_leaves)]
        length = 50 + rng.randint(251)
        seq = [CANONICAL[rng.randint(20)] for _ in range(length)]

        # non-overlapping motif placement by rejection
        placed = []
        positions = []
        for leaf in chosen:
            for _ in range(1000):
                pos = rng.randint(length - motif_len + 1)
                if all(pos + motif_len <= q or q + motif_len <= pos
                       for q in positions):
                    positions.append(pos)
                    placed.append((leaf, pos))
                    break
        for leaf, pos in placed:
            seq[pos:pos + motif_len] = motifs[leaf]

        if placed and rng.uniform() < noise_rate:
            leaf, pos = placed[rng.randint(len(placed))]
            off = rng.randint(motif_len)
            seq[pos + off] = CANONICAL[rng.randint(20)]

        mask = np.zeros(g.node_count, dtype=bool)
        for leaf, _ in placed:
            mask[leaf] = True
        labels = ontology.close_upward(g, LabelSet(mask))
        records.append(ProteinRecord(f"syn{idx:05d}", "".join(seq), labels))
    return Dataset(records, g)


def annotations_tsv(dataset):
    """Leaf-level annotation lines `protein_id<TAB>term_id` for a dataset.

    Emits every positive label; closure on load reconstructs the same sets.
    """
    lines = []
    for r in dataset.records:
        for i in np.flatnonzero(r.labels.mask):
            lines.append(f"{r.id}\t{dataset.ontology.node_ids[int(i)]}")
    return "\n".join(lines) + "\n"


def sequences_fasta(dataset, width=60):
    lines = []
    for r in dataset.records:
        lines.append(f">{r.id}")
        for i in range(0, len(r.sequence), width):
            lines.append(r.sequence[i:i + width])
    return "\n".join(lines) + "\n"

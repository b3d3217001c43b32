"""Label-space DAG handling: parsing, closure, pruning, adjacency, spectra.

The ontology is a DAG of function terms with child->parent edges. A
protein's label set must be closed upward: if a term is present, all of
its ancestors are present too.
"""

from dataclasses import dataclass, field

import numpy as np

from tailgnn.errors import (
    ConvergenceFailure,
    CycleDetected,
    DuplicateEdge,
    EmptyResult,
    IndexOutOfRange,
    LengthMismatch,
    MalformedLine,
)


@dataclass
class LabelSet:
    """Bit vector over ontology nodes, optionally flagged closed."""

    mask: np.ndarray
    closed: bool = False

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)

    def __len__(self):
        return len(self.mask)

    def count(self):
        return int(self.mask.sum())


class OntologyGraph:
    """Immutable DAG over string node ids with child->parent edges."""

    def __init__(self, node_ids, edges):
        self.node_ids = list(node_ids)
        self.edges = [(int(c), int(p)) for c, p in edges]
        self.node_count = len(self.node_ids)
        self.edge_count = len(self.edges)
        self._index = {nid: i for i, nid in enumerate(self.node_ids)}

        seen = set()
        for c, p in self.edges:
            if c == p:
                raise DuplicateEdge(f"self edge on node {self.node_ids[c]!r}")
            if (c, p) in seen:
                raise DuplicateEdge(
                    f"duplicate edge {self.node_ids[c]!r} -> {self.node_ids[p]!r}"
                )
            seen.add((c, p))

        self.parents = [[] for _ in range(self.node_count)]
        self.children = [[] for _ in range(self.node_count)]
        for c, p in self.edges:
            self.parents[c].append(p)
            self.children[p].append(c)

        self._check_acyclic()
        self._ancestor_masks = [None] * self.node_count

    def _check_acyclic(self):
        # iterative DFS over child->parent edges, extracting one cycle on failure
        WHITE, GRAY, BLACK = 0, 1, 2
        color = [WHITE] * self.node_count
        for start in range(self.node_count):
            if color[start] != WHITE:
                continue
            stack = [(start, iter(self.parents[start]))]
            color[start] = GRAY
            path = [start]
            while stack:
                node, it = stack[-1]
                advanced = False
                for nxt in it:
                    if color[nxt] == GRAY:
                        cycle = path[path.index(nxt):] + [nxt]
                        names = " -> ".join(self.node_ids[i] for i in cycle)
                        raise CycleDetected(f"cycle: {names}")
                    if color[nxt] == WHITE:
                        color[nxt] = GRAY
                        stack.append((nxt, iter(self.parents[nxt])))
                        path.append(nxt)
                        advanced = True
                        break
                if not advanced:
                    color[node] = BLACK
                    stack.pop()
                    path.pop()

    def index_of(self, node_id):
        return self._index[node_id]

    @property
    def roots(self):
        return [i for i in range(self.node_count) if not self.parents[i]]

    @property
    def root(self):
        r = self.roots
        return r[0] if len(r) == 1 else None

    def leaves(self):
        return [i for i in range(self.node_count) if not self.children[i]]


def random_dag(n_nodes, seed, max_parents=2):
    """Random single-root DAG: node i >= 1 links to 1..max_parents
    earlier nodes. Used by synthetic corpora and property tests."""
    rng = np.random.default_rng(seed)
    edges = []
    for i in range(1, n_nodes):
        k = 1 + rng.integers(0, max_parents)
        parents = rng.choice(i, size=min(k, i), replace=False)
        for p in parents:
            edges.append((i, int(p)))
    return OntologyGraph([f"t{i:03d}" for i in range(n_nodes)], edges)


def parse_edge_list(text):
    """Parse `child<TAB>parent[<TAB>relation]` lines into an OntologyGraph.

    Nodes are numbered in first-appearance order; `#` lines and blank
    lines are skipped. The relation column, when present, is ignored.
    """
    node_ids = []
    index = {}
    edges = []
    seen_edges = set()

    def intern(name):
        if name not in index:
            index[name] = len(node_ids)
            node_ids.append(name)
        return index[name]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
            raise MalformedLine(f"line {lineno}: expected child<TAB>parent, got {line!r}")
        c = intern(parts[0])
        p = intern(parts[1])
        if (c, p) in seen_edges:
            raise DuplicateEdge(
                f"line {lineno}: duplicate edge {parts[0]!r} -> {parts[1]!r}"
            )
        seen_edges.add((c, p))
        edges.append((c, p))

    return OntologyGraph(node_ids, edges)


def ancestors(g, i):
    """All nodes reachable from i via child->parent edges, excluding i."""
    if not 0 <= i < g.node_count:
        raise IndexOutOfRange(f"node index {i} not in [0, {g.node_count})")
    cached = g._ancestor_masks[i]
    if cached is not None:
        return LabelSet(cached.copy())
    mask = np.zeros(g.node_count, dtype=bool)
    stack = list(g.parents[i])
    while stack:
        j = stack.pop()
        if not mask[j]:
            mask[j] = True
            stack.extend(g.parents[j])
    g._ancestor_masks[i] = mask.copy()
    return LabelSet(mask)


def close_upward(g, s):
    """Close a label set upward: add every ancestor of every set bit."""
    if len(s.mask) != g.node_count:
        raise LengthMismatch(
            f"label set length {len(s.mask)} != node count {g.node_count}"
        )
    out = s.mask.copy()
    for i in np.flatnonzero(s.mask):
        out |= ancestors(g, int(i)).mask
    return LabelSet(out, closed=True)


def prune_by_support(g, annotations, min_count):
    """Drop nodes with closed-annotation support below min_count.

    Surviving descendants of removed nodes are reattached to their nearest
    surviving ancestors (transitive reduction of the induced ancestor
    relation). The root always survives. Returns (new graph, old->new
    index array with -1 for removed nodes).
    """
    counts = np.zeros(g.node_count, dtype=np.int64)
    for s in annotations:
        counts += s.mask
    keep = counts >= min_count
    if g.root is not None:
        keep[g.root] = True
    survivors = np.flatnonzero(keep)
    if len(survivors) == 0:
        raise EmptyResult("no node meets the support threshold")

    remap = np.full(g.node_count, -1, dtype=np.int64)
    for new, old in enumerate(survivors):
        remap[old] = new

    anc = [ancestors(g, int(i)).mask for i in range(g.node_count)]
    new_edges = []
    for u in survivors:
        surv_anc = np.flatnonzero(anc[u] & keep)
        for v in surv_anc:
            # v is a nearest surviving ancestor iff no other surviving
            # ancestor of u lies strictly below v
            if not any(anc[w][v] for w in surv_anc if w != v):
                new_edges.append((remap[u], remap[v]))

    pruned = OntologyGraph([g.node_ids[i] for i in survivors], new_edges)
    return pruned, remap


def adjacency_matrix(g, mode="undirected", self_loops=False):
    """0/1 adjacency over the label graph as a float64 matrix."""
    n = g.node_count
    a = np.zeros((n, n), dtype=np.float64)
    for c, p in g.edges:
        if mode == "child_to_parent":
            a[p, c] = 1.0
        elif mode == "parent_to_child":
            a[c, p] = 1.0
        elif mode == "undirected":
            a[p, c] = 1.0
            a[c, p] = 1.0
        else:
            raise ValueError(f"unknown adjacency mode {mode!r}")
    if self_loops:
        np.fill_diagonal(a, 1.0)
    return a


@dataclass
class SpectralFeatures:
    """Eigenvectors of the combinatorial Laplacian as node descriptors."""

    matrix: np.ndarray       # node_count x count, orthonormal columns
    eigenvalues: np.ndarray  # descending

    def to_tsv(self):
        lines = []
        node_count, count = self.matrix.shape
        header = ["node_id"] + [f"ev{i + 1}" for i in range(count)]
        lines.append("\t".join(header))
        for i in range(node_count):
            row = [self._ids[i]] + [f"{v:.17g}" for v in self.matrix[i]]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def _fix_sign(v, tol=1e-12):
    nz = np.flatnonzero(np.abs(v) > tol)
    if len(nz) and v[nz[0]] < 0:
        return -v
    return v


def _power_iterate(b, basis, seed, tol=1e-12, max_iter=10000):
    """Leading eigenpair of symmetric PSD matrix b, deflated against basis.

    Returns (eigenvalue, unit eigenvector). Deflation is done by
    projecting out previously found vectors every iteration.
    """
    n = b.shape[0]
    rng = np.random.default_rng(seed)

    def project(v):
        for u in basis:
            v = v - (u @ v) * u
        return v

    v = project(rng.standard_normal(n))
    nrm = np.linalg.norm(v)
    if nrm < 1e-300:
        raise ConvergenceFailure("deflation basis spans the whole space")
    v /= nrm

    lam = float(v @ (b @ v))
    for _ in range(max_iter):
        w = project(b @ v)
        nw = np.linalg.norm(w)
        if nw < 1e-14:
            # v lies in the kernel of the deflated operator: eigenvalue 0
            # for PSD b; the current unit v is a valid eigenvector choice
            return 0.0, v
        w /= nw
        if w @ v < 0:
            w = -w
        lam = float(w @ (b @ w))
        resid = np.linalg.norm(b @ w - lam * w)
        if np.linalg.norm(w - v) < tol or resid <= 1e-10:
            return lam, w
        v = w
    resid = float(np.linalg.norm(b @ v - lam * v))
    if resid <= 1e-9:
        return lam, v
    raise ConvergenceFailure(f"power iteration residual {resid:.3e} after {max_iter} iterations")


def laplacian_spectral_features(g, count=5, which="largest"):
    """Eigenpairs of L = D - A via deflated power iteration.

    `which="largest"` takes the top of the spectrum directly; for
    `"smallest"` the iteration runs on (lam_max*I - L), which maps the
    bottom of the spectrum to the top.
    """
    if count > g.node_count:
        raise ValueError("count exceeds node count")
    a = adjacency_matrix(g, mode="undirected", self_loops=False)
    lap = np.diag(a.sum(axis=1)) - a
    n = g.node_count

    if which == "largest":
        op = lap
        to_eig = lambda mu: mu
    elif which == "smallest":
        # shift by an upper bound on lam_max so the operator stays PSD
        shift = float(2.0 * lap.diagonal().max()) if g.edge_count else 0.0
        op = shift * np.eye(n) - lap
        to_eig = lambda mu: shift - mu
    else:
        raise ValueError(f"unknown mode {which!r}")

    basis = []
    eigvals = []
    vecs = []
    for k in range(count):
        mu, v = _power_iterate(op, basis, seed=1000 + k)
        basis.append(v)
        eigvals.append(to_eig(mu))
        vecs.append(_fix_sign(v))

    order = np.argsort(eigvals)[::-1]
    matrix = np.stack([vecs[i] for i in order], axis=1)
    feats = SpectralFeatures(matrix=matrix, eigenvalues=np.array([eigvals[i] for i in order]))
    feats._ids = list(g.node_ids)
    return feats


def spectral_features_tsv(g, feats):
    feats._ids = list(g.node_ids)
    return feats.to_tsv()

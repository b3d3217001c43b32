"""F1 metrics, CAFA-style F_max, hierarchy-consistency diagnostics."""

from dataclasses import dataclass, field

import numpy as np

from tailgnn.errors import ShapeMismatch, TooFewRuns

DEFAULT_GRID = tuple(round(0.01 * i, 2) for i in range(1, 100))


@dataclass
class EvalReport:
    micro_f1: float
    f_max: float
    best_threshold: float
    per_label_f1: np.ndarray
    violation_rate: float
    confusion: tuple  # (TP, FP, FN, TN)

    def to_text(self):
        tp, fp, fn, tn = self.confusion
        lines = [
            f"micro_f1={self.micro_f1:.17g}",
            f"f_max={self.f_max:.17g}",
            f"best_threshold={self.best_threshold:.17g}",
            f"violation_rate={self.violation_rate:.17g}",
            f"tp={tp}", f"fp={fp}", f"fn={fn}", f"tn={tn}",
        ]
        return "\n".join(lines) + "\n"

    CSV_HEADER = "micro_f1,f_max,best_threshold,violation_rate,tp,fp,fn,tn"

    def to_csv_row(self):
        tp, fp, fn, tn = self.confusion
        return (f"{self.micro_f1:.17g},{self.f_max:.17g},"
                f"{self.best_threshold:.17g},{self.violation_rate:.17g},"
                f"{tp},{fp},{fn},{tn}")


def _binarize(probs, threshold):
    return np.asarray(probs) >= threshold


def micro_f1(probs, targets, threshold=0.5):
    """Micro-averaged F1 over all (record, label) cells; (f1, confusion)."""
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=bool)
    if probs.shape != targets.shape:
        raise ShapeMismatch(f"probs {probs.shape} vs targets {targets.shape}")
    preds = _binarize(probs, threshold)
    tp = int(np.sum(preds & targets))
    fp = int(np.sum(preds & ~targets))
    fn = int(np.sum(~preds & targets))
    tn = int(np.sum(~preds & ~targets))
    denom = 2 * tp + fp + fn
    f1 = (2.0 * tp / denom) if denom else 0.0
    return f1, (tp, fp, fn, tn)


def per_label_f1(probs, targets, threshold=0.5):
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=bool)
    preds = _binarize(probs, threshold)
    tp = np.sum(preds & targets, axis=0)
    fp = np.sum(preds & ~targets, axis=0)
    fn = np.sum(~preds & targets, axis=0)
    denom = 2 * tp + fp + fn
    out = np.zeros(probs.shape[1])
    nz = denom > 0
    out[nz] = 2.0 * tp[nz] / denom[nz]
    return out


def f_max(probs, targets, grid=DEFAULT_GRID):
    """Protein-centric F-measure maximised over a threshold grid.

    Precision is averaged over proteins with at least one prediction;
    recall over all proteins. Ties resolve to the smallest threshold.
    """
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=bool)
    if probs.shape != targets.shape:
        raise ShapeMismatch(f"probs {probs.shape} vs targets {targets.shape}")
    best, best_tau = 0.0, float(grid[0])
    for tau in grid:
        preds = _binarize(probs, tau)
        tp = np.sum(preds & targets, axis=1).astype(float)
        npred = preds.sum(axis=1)
        ntrue = targets.sum(axis=1)
        has_pred = npred > 0
        precision = float(np.mean(tp[has_pred] / npred[has_pred])) if has_pred.any() else 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            rec = np.where(ntrue > 0, tp / np.maximum(ntrue, 1), 0.0)
        recall = float(np.mean(rec))
        if precision + recall > 0:
            f = 2.0 * precision * recall / (precision + recall)
        else:
            f = 0.0
        if f > best:
            best, best_tau = f, float(tau)
    return best, best_tau


def violation_rate(probs, g, threshold=0.5):
    """Fraction of (record, edge) pairs with child on but parent off."""
    if not g.edges:
        return 0.0
    preds = _binarize(probs, threshold)
    children = np.array([c for c, _ in g.edges])
    parents = np.array([p for _, p in g.edges])
    bad = preds[:, children] & ~preds[:, parents]
    return float(bad.sum()) / (preds.shape[0] * len(g.edges))


def close_probabilities(probs, g):
    """Upward max-propagation: every ancestor gets at least its
    descendants' probability, so thresholding at any level is closed."""
    probs = np.array(probs, dtype=np.float64, copy=True)
    order = _topo_leaves_up(g)
    for i in order:
        for p in g.parents[i]:
            np.maximum(probs[:, p], probs[:, i], out=probs[:, p])
    return probs


def _topo_leaves_up(g):
    # children before parents
    indeg = [len(g.children[i]) for i in range(g.node_count)]
    queue = [i for i in range(g.node_count) if indeg[i] == 0]
    order = []
    while queue:
        i = queue.pop()
        order.append(i)
        for p in g.parents[i]:
            indeg[p] -= 1
            if indeg[p] == 0:
                queue.append(p)
    return order


def evaluate_model(probs, targets, g, threshold=0.5, grid=DEFAULT_GRID):
    f1, confusion = micro_f1(probs, targets, threshold)
    fm, tau = f_max(probs, targets, grid)
    return EvalReport(
        micro_f1=f1,
        f_max=fm,
        best_threshold=tau,
        per_label_f1=per_label_f1(probs, targets, threshold),
        violation_rate=violation_rate(probs, g, threshold),
        confusion=confusion,
    )


def aggregate_runs(reports):
    """Mean and sample (n-1) standard deviation per scalar metric."""
    if len(reports) < 2:
        raise TooFewRuns(f"need >= 2 reports, got {len(reports)}")
    out = {}
    for key in ("micro_f1", "f_max", "violation_rate"):
        vals = np.array([getattr(r, key) for r in reports])
        out[key] = (float(vals.mean()), float(vals.std(ddof=1)))
    return out


def format_mean_std(mean, std, digits=3):
    return f"{mean:.{digits}f} ± {std:.{digits}f}"

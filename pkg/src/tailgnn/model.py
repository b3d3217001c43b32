"""Labeller network, label-graph GNN layers, and readout.

The labeller embeds one-hot amino acids, runs a stack of dilated
convolutions, projects each position to per-label latents, and pools
over positions (masked, so padding never contributes). The GNN then
mixes latents along ontology edges with one of four aggregators, and a
shared linear+sigmoid readout emits one probability per label.
"""

from dataclasses import dataclass, field

import numpy as np

from tailgnn import autodiff as ad
from tailgnn.errors import IsolatedNode, ShapeMismatch

AGGREGATORS = ("sum", "mean", "max", "gat")


@dataclass
class ModelConfig:
    k: int = 9
    conv_features: tuple = (32, 64, 128, 256, 512, 512)
    embed_dim: int = 16
    kernel: int = 3
    dilations: tuple = (1, 2, 4, 8, 16, 32)
    gnn_layers: int = 2
    gnn_features: int = 16
    aggregator: str = "sum"
    use_spectral: bool = True
    spectral_count: int = 5
    adjacency_mode: str = "undirected"
    self_loops: bool = True
    baseline: bool = False
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.conv_features = tuple(self.conv_features)
        self.dilations = tuple(self.dilations)
        if len(self.conv_features) != len(self.dilations):
            raise ValueError("conv_features and dilations must have equal length")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.gnn_layers not in (1, 2):
            raise ValueError("gnn_layers must be 1 or 2")
        if not self.baseline and self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")

    def gnn_input_dim(self, layer):
        if layer == 0:
            return self.k + (self.spectral_count if self.use_spectral else 0)
        return self.gnn_features

    def to_dict(self):
        return {
            "k": self.k, "conv_features": list(self.conv_features),
            "embed_dim": self.embed_dim, "kernel": self.kernel,
            "dilations": list(self.dilations), "gnn_layers": self.gnn_layers,
            "gnn_features": self.gnn_features, "aggregator": self.aggregator,
            "use_spectral": self.use_spectral, "spectral_count": self.spectral_count,
            "adjacency_mode": self.adjacency_mode, "self_loops": self.self_loops,
            "baseline": self.baseline, "leaky_slope": self.leaky_slope,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg, n_labels, seed):
    """Glorot-uniform weights, zero biases, seeded; a name->array map."""
    rng = np.random.default_rng(seed)
    p = {}
    p["embed"] = _glorot(rng, (21, cfg.embed_dim), 21, cfg.embed_dim)
    c_in = cfg.embed_dim
    for i, c_out in enumerate(cfg.conv_features):
        p[f"conv{i}_w"] = _glorot(rng, (cfg.kernel, c_in, c_out),
                                  cfg.kernel * c_in, cfg.kernel * c_out)
        p[f"conv{i}_b"] = np.zeros(c_out)
        c_in = c_out
    proj_out = n_labels if cfg.baseline else n_labels * cfg.k
    p["proj_w"] = _glorot(rng, (c_in, proj_out), c_in, proj_out)
    p["proj_b"] = np.zeros(proj_out)
    if not cfg.baseline:
        for l in range(cfg.gnn_layers):
            d = cfg.gnn_input_dim(l)
            p[f"gnn{l}_w"] = _glorot(rng, (d, cfg.gnn_features), d, cfg.gnn_features)
            if cfg.aggregator == "gat":
                p[f"gnn{l}_a"] = _glorot(rng, (2 * cfg.gnn_features,),
                                         2 * cfg.gnn_features, 1)
        p["readout_w"] = _glorot(rng, (cfg.gnn_features, 1), cfg.gnn_features, 1)
        p["readout_b"] = np.zeros(1)
    return p


def param_count(cfg, n_labels):
    """Total learnable parameters for a config (regression-tested)."""
    total = 21 * cfg.embed_dim
    c_in = cfg.embed_dim
    for c_out in cfg.conv_features:
        total += cfg.kernel * c_in * c_out + c_out
        c_in = c_out
    proj_out = n_labels if cfg.baseline else n_labels * cfg.k
    total += c_in * proj_out + proj_out
    if not cfg.baseline:
        for l in range(cfg.gnn_layers):
            total += cfg.gnn_input_dim(l) * cfg.gnn_features
            if cfg.aggregator == "gat":
                total += 2 * cfg.gnn_features
        total += cfg.gnn_features + 1
    return total


def params_on_tape(tape, params):
    return {name: tape.leaf(arr) for name, arr in sorted(params.items())}


def _pool_weights(lengths, max_len):
    """(B, max_len, 1) weights: 1/true_length inside, 0 on padding."""
    lengths = np.asarray(lengths)
    w = np.zeros((len(lengths), max_len, 1))
    for b, n in enumerate(lengths):
        w[b, :n, 0] = 1.0 / n
    return w


def conv_trunk(x, pt, cfg, mask=None):
    """Embedding plus the dilated-conv stack; (..., L, last_features).

    `mask` is an optional (..., L, 1) 0/1 array of valid positions.
    Zeroing activations between layers makes a padded batch row
    bit-identical to running the unpadded sequence alone; without it,
    boundary activations leak back into valid positions at layer 2+.
    The last layer needs no mask: downstream pooling weights are zero
    on padded positions, so their activations never contribute.
    """
    h = ad.matmul(x, pt["embed"])
    last = len(cfg.dilations) - 1
    for i, dil in enumerate(cfg.dilations):
        h = ad.relu(ad.conv1d_dilated(h, pt[f"conv{i}_w"], pt[f"conv{i}_b"], dil))
        if mask is not None and i != last:
            h = ad.mul_const(h, mask)
    return h


def _valid_mask(pool_w):
    pw = np.asarray(pool_w)
    return (pw > 0).astype(np.float64)


def labeller_forward(x, pool_w, pt, cfg, n_labels):
    """Per-label latent matrix Z: (B, n_labels, k) (or (n_labels, k))."""
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    squeeze = x.data.ndim == 2
    h = conv_trunk(x, pt, cfg, mask=_valid_mask(pool_w))
    h = ad.add_bias(ad.matmul(h, pt["proj_w"]), pt["proj_b"])
    pw = np.asarray(pool_w)
    if squeeze:
        h = ad.reshape(h, (1,) + h.data.shape)
        pw = pw[None] if pw.ndim == 2 else pw
    pooled = ad.reduce_sum(ad.mul_const(h, pw), axis=1)  # (B, n_labels*k)
    z = ad.reshape(pooled, (pooled.data.shape[0], n_labels, cfg.k))
    if squeeze:
        z = ad.reshape(z, (n_labels, cfg.k))
    return z


def neighbor_lists(a):
    return [list(np.flatnonzero(a[i] > 0)) for i in range(a.shape[0])]


def _require_no_isolated(a, aggregator):
    deg = (a > 0).sum(axis=1)
    if (deg == 0).any():
        bad = int(np.flatnonzero(deg == 0)[0])
        raise IsolatedNode(
            f"node {bad} has no neighbors; {aggregator} aggregation undefined")


def gat_coefficients(h, a, w, attn, leaky_slope=0.2):
    """Attention coefficient matrix C: rows sum to 1 over N_i, 0 outside."""
    h = h if isinstance(h, ad.Tensor) else ad.Tensor(h)
    _require_no_isolated(a, "gat")
    lin = ad.matmul(h, w)
    return _gat_from_lin(lin, a, attn, leaky_slope)


def _gat_from_lin(lin, a, attn, leaky_slope):
    f = lin.data.shape[-1]
    a1 = ad.reshape(ad.slice_(attn, slice(0, f)), (f, 1))
    a2 = ad.reshape(ad.slice_(attn, slice(f, 2 * f)), (f, 1))
    s1 = ad.matmul(lin, a1)
    s2 = ad.matmul(lin, a2)
    s1 = ad.reshape(s1, s1.data.shape[:-1])
    s2 = ad.reshape(s2, s2.data.shape[:-1])
    logits = ad.leaky_relu(ad.outer_add(s1, s2), slope=leaky_slope)
    return ad.masked_softmax(logits, a > 0)


def gnn_layer_forward(h, a, w, attn=None, aggregator="sum", leaky_slope=0.2):
    """One message-passing layer: ReLU(aggregate(c_ji * W h_j over N_i))."""
    h = h if isinstance(h, ad.Tensor) else ad.Tensor(h)
    if a.shape[0] != a.shape[1] or h.data.shape[-2] != a.shape[0]:
        raise ShapeMismatch(f"adjacency {a.shape} vs features {h.data.shape}")
    lin = ad.matmul(h, w)
    if aggregator == "sum":
        out = ad.matmul(ad.Tensor(a), lin)
    elif aggregator == "mean":
        _require_no_isolated(a, "mean")
        deg = a.sum(axis=1, keepdims=True)
        out = ad.matmul(ad.Tensor(a / deg), lin)
    elif aggregator == "max":
        _require_no_isolated(a, "max")
        out = ad.neighbor_max(lin, neighbor_lists(a))
    elif aggregator == "gat":
        _require_no_isolated(a, "gat")
        coeff = _gat_from_lin(lin, a, attn, leaky_slope)
        out = ad.matmul(coeff, lin)
    else:
        raise ValueError(f"unknown aggregator {aggregator!r}")
    return ad.relu(out)


def readout(h, w, b):
    """Shared linear layer + sigmoid: per-label probabilities."""
    lin = ad.matmul(h, w)
    lin = ad.reshape(lin, lin.data.shape[:-1])
    return ad.sigmoid(ad.add(lin, b))


def model_forward(x, pool_w, pt, cfg, n_labels, a, spectral=None):
    """Full pipeline; returns probabilities (B, n_labels) or (n_labels,).

    `a` is the 0/1 adjacency (already in the configured mode, with or
    without self loops); `spectral` is the (n_labels, 5) feature matrix
    when cfg.use_spectral.
    """
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    squeeze = x.data.ndim == 2

    if cfg.baseline:
        h = conv_trunk(x, pt, cfg, mask=_valid_mask(pool_w))
        h = ad.add_bias(ad.matmul(h, pt["proj_w"]), pt["proj_b"])
        pw = np.asarray(pool_w)
        if squeeze:
            h = ad.reshape(h, (1,) + h.data.shape)
            pw = pw[None] if pw.ndim == 2 else pw
        logits = ad.reduce_sum(ad.mul_const(h, pw), axis=1)
        if squeeze:
            logits = ad.reshape(logits, (n_labels,))
        return ad.sigmoid(logits)

    z = labeller_forward(x, pool_w, pt, cfg, n_labels)
    if cfg.use_spectral:
        if spectral is None:
            raise ShapeMismatch("use_spectral set but no spectral features given")
        spec = np.asarray(spectral)
        if z.data.ndim == 3:
            spec = np.broadcast_to(spec, (z.data.shape[0],) + spec.shape)
        z = ad.concat([z, ad.Tensor(spec)], axis=-1)
    h = z
    for l in range(cfg.gnn_layers):
        h = gnn_layer_forward(h, a, pt[f"gnn{l}_w"],
                              attn=pt.get(f"gnn{l}_a"),
                              aggregator=cfg.aggregator,
                              leaky_slope=cfg.leaky_slope)
    return readout(h, pt["readout_w"], pt["readout_b"])

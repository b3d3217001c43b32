"""Finite-difference verification of every autodiff primitive and the
end-to-end loss for all aggregators. Run via `tailgnn gradcheck`."""

import numpy as np

from tailgnn import autodiff as ad
from tailgnn import model, ontology, train

PRIMITIVE_TOL = 1e-6
END_TO_END_TOL = 1e-5


def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.standard_normal(shape)
    x = x + np.sign(x) * margin
    return x


def primitive_checks(rng, seq_len=8, channels=3):
    """Yields (name, max relative error) for each primitive op."""
    x = _away_from_zero(rng, (4, 5))
    y = rng.standard_normal((4, 5))

    yield "add", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.add(t, y)), x)
    yield "sub", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.sub(t, y)), x)
    yield "mul", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.mul(t, ad.Tensor(y))), x)
    yield "relu", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.relu(t)), x)
    yield "leaky_relu", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.leaky_relu(t, 0.2)), x)
    yield "sigmoid", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.sigmoid(t)), x)
    yield "exp", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.exp(t)), 0.5 * x)
    yield "log", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.log(t)), np.abs(x) + 0.5)
    yield "add_bias", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.add_bias(ad.Tensor(x), t)),
        rng.standard_normal(5))
    mc = rng.standard_normal((1, 5))
    yield "mul_const", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.mul_const(t, mc)), x)
    yield "clip_min", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.clip_min(t, 0.1)), np.abs(x) + 0.2)

    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    yield "matmul_lhs", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.matmul(t, b)), a)
    yield "matmul_rhs", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.matmul(ad.Tensor(a), t)), b)
    batched = rng.standard_normal((2, 3, 4))
    yield "matmul_batched", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.matmul(ad.Tensor(batched), t)), b)

    xc = rng.standard_normal((seq_len, channels))
    w = rng.standard_normal((3, channels, 2))
    bias = rng.standard_normal(2)
    for dil in (1, 2):
        yield f"conv1d_x_d{dil}", ad.finite_difference_check(
            lambda t, d=dil: ad.reduce_sum(
                ad.conv1d_dilated(t, ad.Tensor(w), ad.Tensor(bias), d)), xc)
        yield f"conv1d_w_d{dil}", ad.finite_difference_check(
            lambda t, d=dil: ad.reduce_sum(
                ad.conv1d_dilated(ad.Tensor(xc), t, ad.Tensor(bias), d)), w)
        yield f"conv1d_bias_d{dil}", ad.finite_difference_check(
            lambda t, d=dil: ad.reduce_sum(
                ad.conv1d_dilated(ad.Tensor(xc), ad.Tensor(w), t, d)), bias)

    yield "reduce_sum_axis", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.mul(ad.reduce_sum(t, axis=1),
                                       ad.reduce_sum(t, axis=1))), x)
    yield "reduce_mean", ad.finite_difference_check(
        lambda t: ad.mul(ad.reduce_mean(t), 3.0), x)
    yield "reduce_max", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.reduce_max(t, axis=0)), x)
    yield "reshape_transpose", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.mul(
            ad.transpose(ad.reshape(t, (5, 4))),
            ad.Tensor(y))), x)
    yield "concat_slice", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.slice_(
            ad.concat([t, ad.Tensor(y)], axis=1), (slice(None), slice(2, 7)))), x)

    u = rng.standard_normal(6)
    oc = rng.standard_normal((6, 6))
    yield "outer_add", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.mul_const(
            ad.outer_add(t, ad.Tensor(u)), oc)), u)

    mask = rng.random((4, 4)) > 0.4
    mask |= np.eye(4, dtype=bool)  # no empty rows
    logits = rng.standard_normal((4, 4))
    sc = rng.standard_normal((4, 4))
    yield "masked_softmax", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.mul_const(ad.masked_softmax(t, mask), sc)),
        logits)

    nbrs = [[0, 1], [1, 2, 3], [0], [2, 3]]
    feats = _away_from_zero(rng, (4, 3), margin=0.1)
    nc = rng.standard_normal((4, 3))
    yield "neighbor_max", ad.finite_difference_check(
        lambda t: ad.reduce_sum(ad.mul_const(ad.neighbor_max(t, nbrs), nc)),
        feats)


def _toy_setup(rng, n_labels=10, n_proteins=3, seq_len=12):
    # small DAG: chain heads with shared root
    edges = [(i, (i - 1) // 2) for i in range(1, n_labels)]
    g = ontology.OntologyGraph([f"t{i}" for i in range(n_labels)], edges)
    x = np.zeros((n_proteins, seq_len, 21))
    for b in range(n_proteins):
        for i in range(seq_len):
            x[b, i, rng.integers(0, 21)] = 1.0
    pool_w = np.full((n_proteins, seq_len, 1), 1.0 / seq_len)
    targets = (rng.random((n_proteins, n_labels)) > 0.5).astype(float)
    weights = rng.uniform(0.5, 2.0, n_labels)
    return g, x, pool_w, targets, weights


def end_to_end_checks(scale="tiny"):
    """Gradient of the weighted-BCE loss wrt every parameter tensor.

    Seeds are pinned to keep pre-activations away from ReLU kinks and
    gradient components large enough for central differences to resolve.
    """
    sizes = {
        "tiny": dict(n_proteins=3, seq_len=12, setup_seed=44, param_seed=16),
        "small": dict(n_proteins=6, seq_len=24, setup_seed=47, param_seed=5),
    }
    spec = sizes[scale]
    rng = np.random.default_rng(spec["setup_seed"])
    n_labels = 10
    g, x, pool_w, targets, weights = _toy_setup(
        rng, n_labels=n_labels, n_proteins=spec["n_proteins"],
        seq_len=spec["seq_len"])
    feats = ontology.laplacian_spectral_features(g, count=5)

    for agg in ("sum", "mean", "max", "gat", "baseline"):
        cfg = model.ModelConfig(
            k=2, conv_features=(3, 3), embed_dim=3, kernel=3,
            dilations=(1, 2), gnn_layers=2, gnn_features=4,
            aggregator="sum" if agg == "baseline" else agg,
            use_spectral=True, baseline=(agg == "baseline"))
        a = ontology.adjacency_matrix(g, mode=cfg.adjacency_mode,
                                      self_loops=cfg.self_loops)
        params = model.init_params(cfg, n_labels, seed=spec["param_seed"])

        def loss_with(name, tensor):
            pt = {n: (tensor if n == name else ad.Tensor(v))
                  for n, v in params.items()}
            probs = model.model_forward(x, pool_w, pt, cfg, n_labels, a,
                                        feats.matrix)
            return train.weighted_bce(probs, targets, weights)

        worst = 0.0
        for name in sorted(params):
            err = ad.finite_difference_check(
                lambda t, n=name: loss_with(n, t), params[name])
            worst = max(worst, err)
        yield f"end_to_end_{agg}", worst


def run_suite(scale="tiny", log=None):
    rng = np.random.default_rng(42)
    failures = 0
    for name, err in primitive_checks(rng):
        ok = err <= PRIMITIVE_TOL
        failures += not ok
        if log:
            log(f"{name}: max_rel_err={err:.3e} "
                f"{'PASS' if ok else f'FAIL (tol {PRIMITIVE_TOL})'}")
    for name, err in end_to_end_checks(scale=scale):
        ok = err <= END_TO_END_TOL
        failures += not ok
        if log:
            log(f"{name}: max_rel_err={err:.3e} "
                f"{'PASS' if ok else f'FAIL (tol {END_TO_END_TOL})'}")
    return failures

"""Central finite-difference verification of every autodiff op.

The numerical side never touches the tape (it runs under ``no_grad``), so it
stays independent of the backward rules it checks. Errors are reported per
parameter tensor as ``max|analytic - numeric| / max(scale, 1e-6)`` where
``scale`` is the largest gradient magnitude in either version; this keeps the
measure meaningful for near-zero gradients.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEFAULT_STEP = 1e-5


def analytic_gradients(f, params: list[Tensor]) -> tuple[float, list[np.ndarray]]:
    """One taped forward + backward; returns (loss, grads aligned with params)."""
    T.reset_tape()
    for p in params:
        p.grad = None
    loss = f(params)
    T.backward(loss)
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    T.reset_tape()
    for p in params:
        p.grad = None
    return loss.item(), grads


def numerical_gradients(f, params: list[Tensor], h: float = DEFAULT_STEP) -> list[np.ndarray]:
    """Central differences, one coordinate at a time, recording nothing."""
    grads = []
    with T.no_grad():
        for p in params:
            g = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = f(params).item()
                flat[i] = orig - h
                down = f(params).item()
                flat[i] = orig
                gflat[i] = (up - down) / (2.0 * h)
            grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-6)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(f, params: list[Tensor], h: float = DEFAULT_STEP) -> float:
    """Max per-tensor relative error between taped and finite-difference grads."""
    _, analytic = analytic_gradients(f, params)
    numeric = numerical_gradients(f, params, h=h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    # A generic linear functional keeps gradients nondegenerate (e.g. the
    # plain sum of a softmax row is constant and would hide errors).
    return T.tensor_sum(T.mul(out, Tensor(weights)))


def op_checks(seed: int = 0) -> list[tuple[str, float]]:
    """Run the finite-difference suite over every registered op."""
    rng = np.random.default_rng(seed)
    checks: list[tuple[str, float]] = []

    def param(*shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    def weights(*shape):
        return rng.normal(size=shape)

    def run(name, f, params, h=DEFAULT_STEP):
        checks.append((name, check_gradients(f, params, h=h)))

    w34 = weights(3, 4)
    run("add", lambda ps: _weighted_sum(T.add(ps[0], ps[1]), w34), [param(3, 4), param(4)])
    run("sub", lambda ps: _weighted_sum(T.sub(ps[0], ps[1]), w34), [param(3, 4), param(3, 4)])
    run("mul", lambda ps: _weighted_sum(T.mul(ps[0], ps[1]), w34), [param(3, 4), param(3, 1)])
    w5 = weights(5)
    run("scale", lambda ps: _weighted_sum(T.scale(ps[0], 1.7), w5), [param(5)])
    run("exp", lambda ps: _weighted_sum(T.exp(ps[0]), w5), [param(5)])
    run("sigmoid", lambda ps: _weighted_sum(T.sigmoid(ps[0]), w5), [param(5)])
    run("gelu", lambda ps: _weighted_sum(T.gelu(ps[0]), w5), [param(5)])

    # keep |x| well away from the kink at zero
    abs_in = Tensor(rng.uniform(0.2, 1.0, size=6) * rng.choice([-1.0, 1.0], size=6),
                    requires_grad=True)
    w6 = weights(6)
    run("absolute", lambda ps: _weighted_sum(T.absolute(ps[0]), w6), [abs_in])

    run("reshape", lambda ps: _weighted_sum(T.reshape(ps[0], (3, 4)), w34), [param(2, 6)])
    w234 = weights(4, 2, 3)
    run("transpose", lambda ps: _weighted_sum(T.transpose(ps[0], (2, 0, 1)), w234),
        [param(2, 3, 4)])
    w25 = weights(2, 5)
    run("concat", lambda ps: _weighted_sum(T.concat([ps[0], ps[1]], axis=1), w25),
        [param(2, 3), param(2, 2)])
    w33 = weights(3, 3)
    run("narrow", lambda ps: _weighted_sum(T.narrow(ps[0], 1, 1, 3), w33), [param(3, 5)])
    run("broadcast_to", lambda ps: _weighted_sum(T.broadcast_to(ps[0], (3, 4)), w34),
        [param(1, 4)])

    run("sum", lambda ps: T.tensor_sum(ps[0]), [param(3, 4)])
    w3 = weights(3)
    run("sum_axis", lambda ps: _weighted_sum(T.tensor_sum(ps[0], axis=1), w3), [param(3, 4)])
    run("mean", lambda ps: T.mean(ps[0]), [param(3, 4)])
    w14 = weights(1, 4)
    run("mean_axis", lambda ps: _weighted_sum(T.mean(ps[0], axis=0, keepdims=True), w14),
        [param(3, 4)])

    w32 = weights(3, 2)
    run("matmul", lambda ps: _weighted_sum(T.matmul(ps[0], ps[1]), w32),
        [param(3, 4), param(4, 2)])
    run("linear", lambda ps: _weighted_sum(T.linear(ps[0], ps[1], ps[2]), w32),
        [param(3, 4), param(4, 2), param(2)])
    w432 = weights(4, 3, 2)
    run("linear_batched", lambda ps: _weighted_sum(T.linear(ps[0], ps[1], ps[2]), w432),
        [param(4, 3, 5), param(5, 2), param(2)])
    w232 = weights(2, 3, 2)
    run("matmul_batched", lambda ps: _weighted_sum(T.matmul(ps[0], ps[1]), w232),
        [param(2, 3, 4), param(2, 4, 2)])
    run("matmul_broadcast", lambda ps: _weighted_sum(T.matmul(ps[0], ps[1]), w232),
        [param(2, 3, 4), param(4, 2)])

    w35 = weights(3, 5)
    run("softmax", lambda ps: _weighted_sum(T.softmax(ps[0], axis=-1), w35), [param(3, 5)])
    w_mha = weights(2, 5, 6)
    run("mha_core", lambda ps: _weighted_sum(T.mha_core(ps[0], ps[1], ps[2], 2), w_mha),
        [param(2, 5, 6), param(2, 5, 6), param(2, 5, 6)])
    w24 = weights(2, 4)
    run("layer_norm",
        lambda ps: _weighted_sum(T.layer_norm(ps[0], ps[1], ps[2]), w24),
        [param(2, 4), param(4), param(4)])
    run("normalize_rows", lambda ps: _weighted_sum(T.normalize_rows(ps[0]), w34), [param(3, 4)])

    ids = np.array([[0, 3, 3], [6, 1, 0]])
    w_emb = weights(2, 3, 4)
    run("embedding_lookup",
        lambda ps: _weighted_sum(T.embedding_lookup(ps[0], ids), w_emb),
        [param(7, 4)])
    idx = np.array([0, 2, 2, 4])
    w43 = weights(4, 3)
    run("take_rows", lambda ps: _weighted_sum(T.take_rows(ps[0], idx), w43), [param(5, 3)])
    w23 = weights(2, 3)
    run("select_token_cls", lambda ps: _weighted_sum(T.select_token(ps[0], 0), w23),
        [param(2, 4, 3)])
    pos = np.array([1, 3])
    run("select_token_rows", lambda ps: _weighted_sum(T.select_token(ps[0], pos), w23),
        [param(2, 4, 3)])
    w_up = weights(1, 4, 4, 3)
    run("upsample2x", lambda ps: _weighted_sum(T.upsample2x(ps[0]), w_up),
        [param(1, 2, 2, 3)])

    targets = rng.integers(0, 5, size=4)
    run("cross_entropy", lambda ps: T.cross_entropy(ps[0], targets), [param(4, 5)])
    bce_targets = rng.uniform(0.0, 1.0, size=(3, 4))
    run("bce_with_logits", lambda ps: T.bce_with_logits(ps[0], bce_targets), [param(3, 4)])

    return checks


def encoder_composition_error(seed: int = 0) -> float:
    """Finite-difference check of a small encoder + classification head.

    Uses a depth-2, dim-16 encoder with both a shared-routed and a
    specific-routed task path active in the loss, so every parameter kind
    (patch projection, attention, layer norms, both FFN banks, head) is
    exercised. Checks every coordinate of every parameter.
    """
    from . import heads
    from .encoder import EncoderConfig, RouteState, TaskId, encoder_forward, init_encoder_params

    rng = np.random.default_rng(seed)
    config = EncoderConfig(
        image_size=16,
        patch_size=8,
        embed_dim=16,
        depth=2,
        num_heads=2,
        ffn_hidden_dim=32,
        tasks=(TaskId.CLASSIFICATION, TaskId.SEGMENTATION),
        route_table={
            TaskId.CLASSIFICATION: (RouteState.SHARED, RouteState.SPECIFIC),
            TaskId.SEGMENTATION: (RouteState.SPECIFIC, RouteState.SHARED),
        },
    )
    store = init_encoder_params(config, rng)
    heads.init_cls_head(store, config.embed_dim, num_classes=3, rng=rng)
    images = Tensor(rng.uniform(0.0, 1.0, size=(2, 3, 16, 16)))
    labels = np.array([0, 2])

    def f(_params):
        out = encoder_forward(images, TaskId.CLASSIFICATION, store, config)
        logits = heads.cls_forward(out.pooled, store)
        seg_out = encoder_forward(images, TaskId.SEGMENTATION, store, config)
        return T.add(heads.cls_loss(logits, labels), T.mean(seg_out.pooled))

    params = [t for _, t in store.items()]
    return check_gradients(f, params)

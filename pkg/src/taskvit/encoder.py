"""ViT-style transformer encoder with task-routed expert FFN sublayers.

Every layer's FFN bank holds one shared expert plus one expert per task.
A static per-(task, layer) route table decides whether a task's tokens go
through the shared expert or its own: the shared expert accumulates
gradients from every task routed to it, while a task-specific expert is
reachable only from its own task's forward graph. That reachability is the
whole point — a training step for one task can never touch another task's
expert weights.

Blocks are pre-norm (norm -> attention -> residual, norm -> FFN -> residual)
and pooling is the final cls-token embedding.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .store import ParamStore
from .tensor import Tensor


class TaskId(enum.Enum):
    CLASSIFICATION = "classification"
    DETECTION = "detection"
    SEGMENTATION = "segmentation"
    RETRIEVAL = "retrieval"


class RouteState(enum.Enum):
    SHARED = "shared"
    SPECIFIC = "specific"


TRACK1_TASKS = (TaskId.CLASSIFICATION, TaskId.DETECTION, TaskId.SEGMENTATION)


def uniform_route_table(
    tasks: tuple[TaskId, ...], depth: int, state: RouteState = RouteState.SHARED
) -> dict[TaskId, tuple[RouteState, ...]]:
    return {task: (state,) * depth for task in tasks}


@dataclass
class EncoderConfig:
    image_size: int = 32
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    ffn_hidden_dim: int = 128
    num_channels: int = 3
    tasks: tuple[TaskId, ...] = TRACK1_TASKS
    route_table: dict[TaskId, tuple[RouteState, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        self.tasks = tuple(self.tasks)
        if not self.route_table:
            self.route_table = uniform_route_table(self.tasks, self.depth)
        for task in self.tasks:
            routes = self.route_table.get(task)
            if routes is None:
                raise ConfigError(f"route_table missing task {task.value!r}")
            if len(routes) != self.depth:
                raise ConfigError(
                    f"route_table[{task.value!r}] has {len(routes)} entries, depth is {self.depth}"
                )

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size**2

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def route_for(self, task: TaskId, layer: int) -> RouteState:
        if task not in self.route_table:
            raise ConfigError(f"task {task.value!r} has no route table entry")
        return self.route_table[task][layer]


@dataclass
class FfnParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class MoeFfnBlock:
    """One layer's FFN bank: the shared expert plus one expert per task."""

    shared: FfnParams
    specific: dict[TaskId, FfnParams]


@dataclass
class EncoderOutput:
    tokens: Tensor  # [B, N+1, D]
    pooled: Tensor  # [B, D], the cls-token embedding


RESIDUAL_INIT_STD = 0.02


def fan_in_weight(store: ParamStore, name: str, shape, rng) -> None:
    """Weight ~ normal(0, 1/sqrt(fan_in)); keeps activations at unit scale."""
    store.add(name, rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape))


def residual_weight(store: ParamStore, name: str, shape, rng) -> None:
    """Small init for projections that feed a residual stream, so each block
    starts as a near-identity perturbation and the input signal survives to
    the top of an untrained stack."""
    store.add(name, rng.normal(0.0, RESIDUAL_INIT_STD, size=shape))


def _init_ffn(store: ParamStore, prefix: str, embed_dim: int, hidden: int, rng) -> None:
    fan_in_weight(store, prefix + "w1", (embed_dim, hidden), rng)
    store.add(prefix + "b1", np.zeros(hidden))
    residual_weight(store, prefix + "w2", (hidden, embed_dim), rng)
    store.add(prefix + "b2", np.zeros(embed_dim))


def init_encoder_params(
    config: EncoderConfig, rng, store: ParamStore | None = None, prefix: str = "encoder."
) -> ParamStore:
    """Register encoder parameters.

    Weights are fan-in scaled, except projections into the residual stream
    (attention output, FFN second layer) which start near zero; positional
    and cls embeddings start at 0.02 and biases at zero. This documented
    init is what lets a from-scratch run converge in the short desk-scale
    schedules this package targets.
    """
    if store is None:
        store = ParamStore()
    d = config.embed_dim
    patch_in = config.num_channels * config.patch_size**2
    fan_in_weight(store, prefix + "patch.w", (patch_in, d), rng)
    store.add(prefix + "patch.b", np.zeros(d))
    store.add(prefix + "cls", rng.normal(0.0, 0.02, size=(1, 1, d)))
    store.add(prefix + "pos", rng.normal(0.0, 0.02, size=(1, config.num_patches + 1, d)))
    for i in range(config.depth):
        lp = f"{prefix}layers.{i}."
        store.add(lp + "ln1.g", np.ones(d))
        store.add(lp + "ln1.b", np.zeros(d))
        for name in ("q", "k", "v"):
            fan_in_weight(store, lp + f"attn.w{name}", (d, d), rng)
            store.add(lp + f"attn.b{name}", np.zeros(d))
        residual_weight(store, lp + "attn.wo", (d, d), rng)
        store.add(lp + "attn.bo", np.zeros(d))
        store.add(lp + "ln2.g", np.ones(d))
        store.add(lp + "ln2.b", np.zeros(d))
        _init_ffn(store, lp + "ffn.shared.", d, config.ffn_hidden_dim, rng)
        for task in config.tasks:
            _init_ffn(store, lp + f"ffn.task.{task.value}.", d, config.ffn_hidden_dim, rng)
    return store


def ffn_block(store: ParamStore, layer_prefix: str, tasks: tuple[TaskId, ...]) -> MoeFfnBlock:
    """View one layer's FFN bank out of the parameter store."""

    def ffn(p):
        return FfnParams(store[p + "w1"], store[p + "b1"], store[p + "w2"], store[p + "b2"])

    return MoeFfnBlock(
        shared=ffn(layer_prefix + "ffn.shared."),
        specific={t: ffn(layer_prefix + f"ffn.task.{t.value}.") for t in tasks},
    )


def patch_embed(images: Tensor, store: ParamStore, config: EncoderConfig,
                prefix: str = "encoder.") -> Tensor:
    """Patchify, project, prepend the cls token, add positional embeddings.

    images: [B, C, H, W] in the unit interval, H == W == image_size; pixel
    values are centered to [-1, 1] before projection. Output: [B, N+1, D].
    """
    images = T.as_tensor(images)
    b = images.shape[0]
    c, s = config.num_channels, config.image_size
    if images.shape[1:] != (c, s, s):
        raise DimensionError(
            f"patch_embed: expected images [B, {c}, {s}, {s}], got {images.shape}"
        )
    p, g = config.patch_size, config.grid_size
    images = T.scale(T.add(images, -0.5), 2.0)
    x = T.reshape(images, (b, c, g, p, g, p))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))  # [B, gh, gw, C, p, p]
    x = T.reshape(x, (b, config.num_patches, c * p * p))
    x = T.linear(x, store[prefix + "patch.w"], store[prefix + "patch.b"])
    cls = T.broadcast_to(store[prefix + "cls"], (b, 1, config.embed_dim))
    tokens = T.concat([cls, x], axis=1)
    return T.add(tokens, store[prefix + "pos"])


def attention(x: Tensor, store: ParamStore, attn_prefix: str, num_heads: int) -> Tensor:
    """Multi-head self-attention over [B, T, D]; rows of each attention map
    are probability distributions."""

    def project(name):
        return T.linear(x, store[attn_prefix + f"w{name}"], store[attn_prefix + f"b{name}"])

    ctx = T.mha_core(project("q"), project("k"), project("v"), num_heads)
    return T.linear(ctx, store[attn_prefix + "wo"], store[attn_prefix + "bo"])


def ffn_apply(x: Tensor, ffn: FfnParams) -> Tensor:
    h = T.gelu(T.linear(x, ffn.w1, ffn.b1))
    return T.linear(h, ffn.w2, ffn.b2)


def moe_ffn_forward(block: MoeFfnBlock, tokens: Tensor, task: TaskId,
                    route: RouteState) -> Tensor:
    """Apply exactly one expert of the bank, chosen by the route state."""
    if route is RouteState.SHARED:
        return ffn_apply(tokens, block.shared)
    if task not in block.specific:
        raise ConfigError(f"no specific FFN allocated for task {task.value!r}")
    return ffn_apply(tokens, block.specific[task])


def encoder_layer(x: Tensor, store: ParamStore, layer_prefix: str, config: EncoderConfig,
                  task: TaskId, route: RouteState) -> Tensor:
    ln1 = T.layer_norm(x, store[layer_prefix + "ln1.g"], store[layer_prefix + "ln1.b"])
    x = T.add(x, attention(ln1, store, layer_prefix + "attn.", config.num_heads))
    ln2 = T.layer_norm(x, store[layer_prefix + "ln2.g"], store[layer_prefix + "ln2.b"])
    block = ffn_block(store, layer_prefix, config.tasks)
    return T.add(x, moe_ffn_forward(block, ln2, task, route))


def encoder_forward(images: Tensor, task: TaskId, store: ParamStore, config: EncoderConfig,
                    prefix: str = "encoder.") -> EncoderOutput:
    """Full encoder pass for one task: patch embed, then depth x (attention +
    routed FFN). With depth 0 the tokens are exactly the patch embedding."""
    tokens = patch_embed(images, store, config, prefix=prefix)
    for i in range(config.depth):
        route = config.route_for(task, i)
        tokens = encoder_layer(tokens, store, f"{prefix}layers.{i}.", config, task, route)
    return EncoderOutput(tokens=tokens, pooled=T.select_token(tokens, 0))

"""Joint multi-task optimization: AdamW with decoupled weight decay, cosine
learning-rate annealing, strict round-robin task interleaving (one batch per
enabled task per round), per-epoch evaluation, and bit-exact checkpointing.

Every source of randomness (shuffling, augmentation) is derived statelessly
from (seed, epoch, task), so a run is reproducible bit for bit and a resumed
run continues exactly where the checkpoint left off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import heads, metrics, retrieval
from . import tensor as T
from .data import AugmentPolicy, Dataset, Sample, augment
from .encoder import EncoderConfig, RouteState, TaskId, encoder_forward
from .encoder import init_encoder_params
from .errors import ConfigError, ContractError, DataError
from .store import ParamStore, load_checkpoint, load_into, save_checkpoint
from .tensor import Tensor

_TASK_SHUFFLE_CODES = {t: i + 10 for i, t in enumerate(TaskId)}


@dataclass
class TrainConfig:
    lr_init: float = 1e-4
    weight_decay: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 32
    lr_min: float = 0.0
    seed: int = 7
    tasks: tuple[TaskId, ...] = (TaskId.CLASSIFICATION, TaskId.DETECTION, TaskId.SEGMENTATION)

    def __post_init__(self):
        if self.lr_init <= 0:
            raise ConfigError(f"lr_init must be positive, got {self.lr_init}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        self.tasks = tuple(self.tasks)
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        return {
            "lr_init": self.lr_init,
            "weight_decay": self.weight_decay,
            "betas": list(self.betas),
            "eps": self.eps,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_min": self.lr_min,
            "seed": self.seed,
            "tasks": [t.value for t in self.tasks],
        }


class AdamW:
    """AdamW with decoupled decay: p -= lr * (m_hat / (sqrt(v_hat) + eps)
    + weight_decay * p). Parameters without a gradient are skipped entirely,
    so unreached experts stay bitwise untouched. Moment buffers and the step
    counter are per parameter."""

    def __init__(self, store: ParamStore, weight_decay: float = 5e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state: dict[str, dict] = {}

    def step(self, lr: float) -> None:
        for name, p in self.store.items():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ContractError(f"gradient shape mismatch for {name!r}")
            st = self.state.get(name)
            if st is None:
                st = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
                self.state[name] = st
            st["t"] += 1
            t = st["t"]
            st["m"] = self.beta1 * st["m"] + (1.0 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1.0 - self.beta2) * g * g
            m_hat = st["m"] / (1.0 - self.beta1**t)
            v_hat = st["v"] / (1.0 - self.beta2**t)
            p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                    + self.weight_decay * p.data)


def cosine_lr(step: int, total_steps: int, lr_init: float, lr_min: float = 0.0) -> float:
    """lr_min + (lr_init - lr_min) * (1 + cos(pi * step / total_steps)) / 2."""
    if total_steps <= 0:
        raise ContractError(f"cosine_lr: total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ContractError(f"cosine_lr: step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


# ---------------------------------------------------------------------------
# the all-in-one model
# ---------------------------------------------------------------------------


@dataclass
class MultiTaskModel:
    store: ParamStore
    config: EncoderConfig
    num_classes: int
    num_seg_classes: int

    @classmethod
    def create(cls, config: EncoderConfig, num_classes: int, num_seg_classes: int,
               seed: int) -> "MultiTaskModel":
        rng = np.random.default_rng((seed, 0xE0C))
        store = init_encoder_params(config, rng)
        heads.init_cls_head(store, config.embed_dim, num_classes, rng)
        heads.init_det_head(store, config.embed_dim, num_classes, rng)
        heads.init_seg_head(store, config.embed_dim, num_seg_classes, config.patch_size, rng)
        return cls(store=store, config=config, num_classes=num_classes,
                   num_seg_classes=num_seg_classes)

    def config_echo(self) -> dict:
        return {
            "kind": "multitask",
            "encoder": encoder_config_to_dict(self.config),
            "num_classes": self.num_classes,
            "num_seg_classes": self.num_seg_classes,
        }


def encoder_config_to_dict(config: EncoderConfig) -> dict:
    return {
        "image_size": config.image_size,
        "patch_size": config.patch_size,
        "embed_dim": config.embed_dim,
        "depth": config.depth,
        "num_heads": config.num_heads,
        "ffn_hidden_dim": config.ffn_hidden_dim,
        "num_channels": config.num_channels,
        "tasks": [t.value for t in config.tasks],
        "route_table": {t.value: [r.value for r in config.route_table[t]]
                        for t in config.tasks},
    }


def encoder_config_from_dict(d: dict) -> EncoderConfig:
    tasks = tuple(TaskId(t) for t in d["tasks"])
    return EncoderConfig(
        image_size=d["image_size"],
        patch_size=d["patch_size"],
        embed_dim=d["embed_dim"],
        depth=d["depth"],
        num_heads=d["num_heads"],
        ffn_hidden_dim=d["ffn_hidden_dim"],
        num_channels=d.get("num_channels", 3),
        tasks=tasks,
        route_table={TaskId(t): tuple(RouteState(r) for r in rs)
                     for t, rs in d["route_table"].items()},
    )


@dataclass
class TaskBatch:
    task: TaskId
    images: np.ndarray
    labels: np.ndarray | None = None
    boxes: list | None = None
    box_classes: list | None = None
    masks: np.ndarray | None = None
    token_ids: np.ndarray | None = None


def make_batch(samples: list[Sample], task: TaskId) -> TaskBatch:
    images = np.stack([s.image for s in samples])
    if task is TaskId.CLASSIFICATION:
        return TaskBatch(task, images, labels=np.array([s.label for s in samples]))
    if task is TaskId.DETECTION:
        return TaskBatch(task, images,
                         boxes=[s.boxes for s in samples],
                         box_classes=[s.box_classes for s in samples])
    if task is TaskId.SEGMENTATION:
        return TaskBatch(task, images, masks=np.stack([s.mask for s in samples]))
    raise ConfigError(f"make_batch: unsupported task {task.value!r}")


def task_loss(model: MultiTaskModel, batch: TaskBatch) -> Tensor:
    out = encoder_forward(Tensor(batch.images), batch.task, model.store, model.config)
    if batch.task is TaskId.CLASSIFICATION:
        return heads.cls_loss(heads.cls_forward(out.pooled, model.store), batch.labels)
    if batch.task is TaskId.DETECTION:
        preds = heads.det_forward(out.tokens, model.store)
        return heads.det_loss(preds, batch.boxes, batch.box_classes, model.num_classes)
    if batch.task is TaskId.SEGMENTATION:
        logits = heads.seg_forward(out.tokens, model.store, model.config.patch_size)
        return heads.seg_loss(logits, batch.masks)
    raise ConfigError(f"task_loss: unsupported task {batch.task.value!r}")


def train_step(model: MultiTaskModel, batch: TaskBatch, optim: AdamW, lr: float) -> float:
    """One forward/backward/update on a single task batch; resets the tape."""
    T.reset_tape()
    model.store.zero_grads()
    loss = task_loss(model, batch)
    T.backward(loss)
    optim.step(lr)
    value = loss.item()
    T.reset_tape()
    if not np.isfinite(value):
        raise DataError(f"non-finite loss {value} on task {batch.task.value}")
    return value


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _batched(samples: list[Sample], batch_size: int):
    for start in range(0, len(samples), batch_size):
        yield samples[start:start + batch_size]


def evaluate_classification(model: MultiTaskModel, samples: list[Sample],
                            batch_size: int = 64) -> float:
    preds, labels = [], []
    with T.no_grad():
        for chunk in _batched(samples, batch_size):
            batch = make_batch(chunk, TaskId.CLASSIFICATION)
            out = encoder_forward(Tensor(batch.images), TaskId.CLASSIFICATION,
                                  model.store, model.config)
            logits = heads.cls_forward(out.pooled, model.store)
            preds.extend(logits.data.argmax(axis=1).tolist())
            labels.extend(batch.labels.tolist())
    return metrics.accuracy(preds, labels)


def evaluate_detection(model: MultiTaskModel, samples: list[Sample],
                       batch_size: int = 64, conf_thresh: float = heads.DET_CONF_THRESH,
                       nms_iou: float = heads.DET_NMS_IOU) -> float:
    detections, gt = [], []
    with T.no_grad():
        for chunk in _batched(samples, batch_size):
            batch = make_batch(chunk, TaskId.DETECTION)
            out = encoder_forward(Tensor(batch.images), TaskId.DETECTION,
                                  model.store, model.config)
            preds = heads.det_forward(out.tokens, model.store)
            decoded = heads.det_decode(preds, conf_thresh=conf_thresh, nms_iou=nms_iou)
            for sample, dets in zip(chunk, decoded):
                for d in dets:
                    detections.append({"image_id": sample.sample_id, "class": d["class"],
                                       "score": d["score"], "box": d["box"]})
                for box, cls in zip(sample.boxes, sample.box_classes):
                    gt.append({"image_id": sample.sample_id, "class": int(cls),
                               "box": tuple(float(v) for v in box)})
    return metrics.detection_map(detections, gt)


def evaluate_segmentation(model: MultiTaskModel, samples: list[Sample],
                          batch_size: int = 64) -> float:
    confusion = np.zeros((model.num_seg_classes, model.num_seg_classes), dtype=np.int64)
    with T.no_grad():
        for chunk in _batched(samples, batch_size):
            batch = make_batch(chunk, TaskId.SEGMENTATION)
            out = encoder_forward(Tensor(batch.images), TaskId.SEGMENTATION,
                                  model.store, model.config)
            logits = heads.seg_forward(out.tokens, model.store, model.config.patch_size)
            pred = logits.data.argmax(axis=1)
            confusion += metrics.confusion_matrix(pred, batch.masks, model.num_seg_classes)
    return metrics.miou_from_confusion(confusion)


def evaluate_multitask(model: MultiTaskModel, datasets: dict[TaskId, Dataset],
                       split: str = "val", batch_size: int = 64) -> dict[str, float]:
    out: dict[str, float] = {}
    if TaskId.CLASSIFICATION in datasets:
        out["acc"] = evaluate_classification(
            model, datasets[TaskId.CLASSIFICATION].subset(split), batch_size)
    if TaskId.DETECTION in datasets:
        out["det_map"] = evaluate_detection(
            model, datasets[TaskId.DETECTION].subset(split), batch_size)
    if TaskId.SEGMENTATION in datasets:
        out["miou"] = evaluate_segmentation(
            model, datasets[TaskId.SEGMENTATION].subset(split), batch_size)
    if {"acc", "det_map", "miou"} <= out.keys():
        out["global"] = metrics.global_score(out["acc"], out["det_map"], out["miou"])
    return out


# ---------------------------------------------------------------------------
# joint training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    loss_curve: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_global: float = float("-inf")
    epoch1_metrics: dict = field(default_factory=dict)
    best_metrics: dict = field(default_factory=dict)
    final_step: int = 0


def _epoch_order(seed: int, epoch: int, task: TaskId, n: int) -> np.ndarray:
    return np.random.default_rng((seed, epoch, _TASK_SHUFFLE_CODES[task])).permutation(n)


def _isolation_spot_check(model: MultiTaskModel, task: TaskId, before: dict[str, np.ndarray]):
    """Foreign specific experts must be bitwise untouched by this task's step."""
    for name, old in before.items():
        marker = f".ffn.task.{task.value}."
        if marker in name:
            continue
        if not np.array_equal(model.store[name].data, old):
            raise ContractError(
                f"update isolation violated: step on {task.value} changed {name}"
            )


def joint_train(
    model: MultiTaskModel,
    datasets: dict[TaskId, Dataset],
    tconfig: TrainConfig,
    out_dir=None,
    policies: dict[TaskId, AugmentPolicy] | None = None,
    optim: AdamW | None = None,
    resume_from=None,
    mid_save: tuple[int, object] | None = None,
    spot_check_isolation: bool = True,
) -> TrainResult:
    """Round-robin multi-task training with per-epoch validation.

    ``mid_save`` = (epoch, path) writes a resumable checkpoint after that
    epoch. ``resume_from`` restores parameters, optimizer state, and the step
    counter from a checkpoint produced by this function, and continues the
    original schedule.
    """
    for task in tconfig.tasks:
        if task not in datasets:
            raise ConfigError(f"no dataset provided for enabled task {task.value!r}")
    train_sets = {t: datasets[t].subset("train") for t in tconfig.tasks}
    for task, samples in train_sets.items():
        if len(samples) < tconfig.batch_size:
            raise ConfigError(
                f"task {task.value!r} has {len(samples)} training samples, "
                f"fewer than batch_size {tconfig.batch_size}"
            )
    rounds = min(len(s) // tconfig.batch_size for s in train_sets.values())
    steps_per_epoch = rounds * len(tconfig.tasks)
    total_steps = tconfig.epochs * steps_per_epoch
    if optim is None:
        optim = AdamW(model.store, weight_decay=tconfig.weight_decay,
                      betas=tconfig.betas, eps=tconfig.eps)

    start_epoch = 0
    global_step = 0
    if resume_from is not None:
        loaded_store, echo, saved_step, optim_state = load_checkpoint(resume_from)
        expected = model.config_echo()
        if echo.get("model") != expected:
            raise ConfigError(
                f"checkpoint model config does not match: saved {echo.get('model')}, "
                f"current {expected}"
            )
        if echo.get("trainer") != tconfig.to_dict():
            raise ConfigError("checkpoint trainer config does not match current config")
        missing = set(model.store.names()) - set(loaded_store.names())
        if missing:
            raise ConfigError(f"checkpoint lacks parameters: {sorted(missing)[:5]} ...")
        load_into(model.store, loaded_store)
        optim.state = optim_state
        global_step = saved_step
        if saved_step % steps_per_epoch != 0:
            raise ConfigError("checkpoint step does not sit on an epoch boundary")
        start_epoch = saved_step // steps_per_epoch

    result = TrainResult()
    for epoch in range(start_epoch, tconfig.epochs):
        orders = {t: _epoch_order(tconfig.seed, epoch, t, len(train_sets[t]))
                  for t in tconfig.tasks}
        for r in range(rounds):
            for task in tconfig.tasks:
                idx = orders[task][r * tconfig.batch_size:(r + 1) * tconfig.batch_size]
                chosen = [train_sets[task][i] for i in idx]
                policy = (policies or {}).get(task)
                if policy is not None and not policy.is_identity:
                    aug_seed = tconfig.seed * 1000003 + epoch
                    chosen = [augment(s, task.value, policy, aug_seed) for s in chosen]
                batch = make_batch(chosen, task)
                lr = cosine_lr(global_step, total_steps, tconfig.lr_init, tconfig.lr_min)
                before = None
                if spot_check_isolation and r == 0:
                    before = {n: t.data.copy() for n, t in model.store.items()
                              if ".ffn.task." in n}
                loss = train_step(model, batch, optim, lr)
                if before is not None:
                    _isolation_spot_check(model, task, before)
                result.loss_curve.append(loss)
                result.history.append({"epoch": epoch + 1, "split": "train",
                                       "metric": f"loss_{task.value}", "value": loss,
                                       "step": global_step + 1})
                global_step += 1
        scores = evaluate_multitask(model, datasets, split="val")
        for name, value in scores.items():
            result.history.append({"epoch": epoch + 1, "split": "val", "metric": name,
                                   "value": value, "step": global_step})
        if epoch == 0:
            result.epoch1_metrics = dict(scores)
        current_global = scores.get("global", scores.get(next(iter(scores)), 0.0))
        if current_global > result.best_global:
            result.best_global = current_global
            result.best_epoch = epoch + 1
            result.best_metrics = dict(scores)
            if out_dir is not None:
                _save_train_checkpoint(out_dir, "best", model, tconfig, optim, global_step)
        if mid_save is not None and epoch + 1 == mid_save[0]:
            _save_train_checkpoint(mid_save[1], None, model, tconfig, optim, global_step)
    result.final_step = global_step
    if out_dir is not None:
        _save_train_checkpoint(out_dir, "last", model, tconfig, optim, global_step)
        _write_history(out_dir, result.history)
    return result


def _save_train_checkpoint(base, name, model: MultiTaskModel, tconfig: TrainConfig,
                           optim: AdamW, step: int) -> None:
    path = Path(base) / name if name else Path(base)
    echo = {"model": model.config_echo(), "trainer": tconfig.to_dict()}
    save_checkpoint(path, model.store, echo, step, optim_state=optim.state)


def _write_history(out_dir, history: list[dict]) -> None:
    from . import fileio

    fileio.write_jsonl(Path(out_dir) / "metrics.jsonl", history)


# ---------------------------------------------------------------------------
# retrieval training (track 2)
# ---------------------------------------------------------------------------


@dataclass
class RetrievalModel:
    store: ParamStore
    config: retrieval.RetrievalConfig
    vocab: retrieval.Vocabulary
    fusion_store: ParamStore | None = None
    fusion_config: EncoderConfig | None = None

    @classmethod
    def create(cls, config: retrieval.RetrievalConfig, vocab: retrieval.Vocabulary,
               seed: int, fusion_store: ParamStore | None = None,
               fusion_config: EncoderConfig | None = None) -> "RetrievalModel":
        rng = np.random.default_rng((seed, 0x2E7))
        store = retrieval.init_retrieval_params(config, rng)
        if config.fusion and fusion_store is None:
            raise ConfigError("fusion enabled but no donor tower provided")
        if fusion_store is not None:
            fusion_store.freeze()
        return cls(store=store, config=config, vocab=vocab,
                   fusion_store=fusion_store, fusion_config=fusion_config)

    def config_echo(self) -> dict:
        c = self.config
        return {
            "kind": "retrieval",
            "visual": encoder_config_to_dict(c.visual),
            "text": {
                "vocab_size": c.text.vocab_size,
                "embed_dim": c.text.embed_dim,
                "depth": c.text.depth,
                "num_heads": c.text.num_heads,
                "max_len": c.text.max_len,
            },
            "embed_width": c.embed_width,
            "fusion": c.fusion,
            "fusion_source_dim": c.fusion_source_dim,
            "vocab": self.vocab.to_dict(),
        }


def retrieval_queries(gallery_samples: list[Sample]):
    """One query per distinct attribute record present in the gallery.

    Relevance is attribute-record equality, so every query has at least one
    relevant item by construction. Returns (captions, judgments by caption).
    """
    from .data import CAPTION_TEMPLATE

    judgments: dict[str, set] = {}
    for s in gallery_samples:
        caption = CAPTION_TEMPLATE.format(**s.attributes)
        judgments.setdefault(caption, set()).add(s.sample_id)
    captions = sorted(judgments)
    return captions, judgments


def evaluate_retrieval(model: RetrievalModel, gallery_samples: list[Sample],
                       k: int = 10) -> float:
    """mAP@k over the distinct-caption queries of a held-out gallery."""
    index = retrieval.build_gallery(gallery_samples, model.store, model.config,
                                    model.fusion_store, model.fusion_config)
    captions, judgments = retrieval_queries(gallery_samples)
    text_emb = retrieval.embed_text(captions, model.vocab, model.store, model.config)
    results = []
    for caption, emb in zip(captions, text_emb):
        ranking = retrieval.rank_gallery(emb, index, k=k)
        results.append(metrics.RankedResult(query_id=caption, ranking=ranking))
    return metrics.map_at_k(results, judgments, k=k)


def train_retrieval(
    model: RetrievalModel,
    dataset: Dataset,
    tconfig: TrainConfig,
    out_dir=None,
    eval_split: str = "test",
) -> TrainResult:
    """Symmetric contrastive training of both towers; per-epoch mAP@10 on the
    held-out gallery split. The learnable temperature is clamped to its floor
    after every step."""
    train_samples = dataset.subset("train")
    gallery_samples = dataset.subset(eval_split)
    if len(train_samples) < tconfig.batch_size:
        raise ConfigError("retrieval training set smaller than one batch")
    if not gallery_samples:
        raise ConfigError(f"retrieval eval split {eval_split!r} is empty")
    token_ids = {
        s.sample_id: retrieval.tokenize(s.caption, model.vocab, model.config.text.max_len)
        for s in train_samples
    }
    rounds = len(train_samples) // tconfig.batch_size
    total_steps = tconfig.epochs * rounds
    optim = AdamW(model.store, weight_decay=tconfig.weight_decay,
                  betas=tconfig.betas, eps=tconfig.eps)
    result = TrainResult()
    fusion_before = (model.fusion_store.snapshot() if model.fusion_store is not None
                     else None)
    global_step = 0
    for epoch in range(tconfig.epochs):
        order = _epoch_order(tconfig.seed, epoch, TaskId.RETRIEVAL, len(train_samples))
        for r in range(rounds):
            idx = order[r * tconfig.batch_size:(r + 1) * tconfig.batch_size]
            chosen = [train_samples[i] for i in idx]
            images = np.stack([s.image for s in chosen])
            ids = np.stack([token_ids[s.sample_id] for s in chosen])
            lr = cosine_lr(global_step, total_steps, tconfig.lr_init, tconfig.lr_min)
            T.reset_tape()
            model.store.zero_grads()
            img_emb = retrieval.image_encode(Tensor(images), model.store, model.config,
                                             model.fusion_store, model.fusion_config)
            txt_emb = retrieval.text_encode(ids, model.store, model.config)
            loss = retrieval.contrastive_loss(img_emb, txt_emb, model.store["head.log_temp"])
            T.backward(loss)
            optim.step(lr)
            retrieval.clamp_temperature(model.store)
            value = loss.item()
            T.reset_tape()
            result.loss_curve.append(value)
            result.history.append({"epoch": epoch + 1, "split": "train",
                                   "metric": "loss_retrieval", "value": value,
                                   "step": global_step + 1})
            global_step += 1
        map10 = evaluate_retrieval(model, gallery_samples)
        result.history.append({"epoch": epoch + 1, "split": eval_split,
                               "metric": "map_at_10", "value": map10, "step": global_step})
        if epoch == 0:
            result.epoch1_metrics = {"map_at_10": map10}
        if map10 > result.best_global:
            result.best_global = map10
            result.best_epoch = epoch + 1
            result.best_metrics = {"map_at_10": map10}
            if out_dir is not None:
                echo = {"model": model.config_echo(), "trainer": tconfig.to_dict()}
                save_checkpoint(Path(out_dir) / "best", model.store, echo, global_step,
                                optim_state=optim.state)
    if fusion_before is not None:
        for name, old in fusion_before.items():
            if not np.array_equal(model.fusion_store[name].data, old):
                raise ContractError(f"frozen fusion tower changed: {name}")
    result.final_step = global_step
    if out_dir is not None:
        echo = {"model": model.config_echo(), "trainer": tconfig.to_dict()}
        save_checkpoint(Path(out_dir) / "last", model.store, echo, global_step,
                        optim_state=optim.state)
        _write_history(out_dir, result.history)
    return result


def load_multitask_model(path) -> tuple[MultiTaskModel, dict, int, dict]:
    """Rebuild a MultiTaskModel from a checkpoint directory."""
    store, echo, step, optim_state = load_checkpoint(path)
    model_echo = echo.get("model", {})
    if model_echo.get("kind") != "multitask":
        raise ConfigError(f"{path} is not a multitask checkpoint")
    config = encoder_config_from_dict(model_echo["encoder"])
    model = MultiTaskModel(store=store, config=config,
                           num_classes=int(model_echo["num_classes"]),
                           num_seg_classes=int(model_echo["num_seg_classes"]))
    return model, echo, step, optim_state


def load_retrieval_model(path, fusion_donor=None) -> "RetrievalModel":
    """Rebuild a RetrievalModel (optionally with its frozen donor) from disk."""
    store, echo, _step, _optim = load_checkpoint(path)
    model_echo = echo.get("model", {})
    if model_echo.get("kind") != "retrieval":
        raise ConfigError(f"{path} is not a retrieval checkpoint")
    text_cfg = retrieval.TextEncoderConfig(**model_echo["text"])
    config = retrieval.RetrievalConfig(
        visual=encoder_config_from_dict(model_echo["visual"]),
        text=text_cfg,
        embed_width=int(model_echo["embed_width"]),
        fusion=bool(model_echo["fusion"]),
        fusion_source_dim=model_echo.get("fusion_source_dim"),
    )
    vocab = retrieval.Vocabulary.from_dict(model_echo["vocab"])
    fusion_store = fusion_config = None
    if config.fusion:
        if fusion_donor is None:
            raise ConfigError("checkpoint uses fusion; pass the donor checkpoint path")
        donor, _, _, _ = load_multitask_model(fusion_donor)
        donor.store.freeze()
        fusion_store, fusion_config = donor.store, donor.config
    return RetrievalModel(store=store, config=config, vocab=vocab,
                          fusion_store=fusion_store, fusion_config=fusion_config)


def extract_encoder_donor(path) -> tuple[ParamStore, EncoderConfig]:
    """Load a multi-task checkpoint as a frozen fusion donor (encoder only)."""
    model, _, _, _ = load_multitask_model(path)
    donor = ParamStore()
    for name, tensor in model.store.subset("encoder."):
        donor.add(name, tensor.data.copy(), requires_grad=False)
    return donor, model.config

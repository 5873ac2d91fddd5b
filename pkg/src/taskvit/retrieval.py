"""Two-tower text-image retrieval with symmetric contrastive training.

The visual tower reuses the shared transformer encoder (routed with the
retrieval task id); the text tower is a plain transformer over word tokens.
Both towers project into a common embedding space and are L2-normalized, so
ranking is a dot product. A frozen, separately trained multi-task encoder
can be fused in: its pooled feature is projected and concatenated to the
visual embedding before the final normalization (the text projection widens
to match), and it never receives gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from . import tensor as T
from .encoder import (EncoderConfig, TaskId, encoder_forward, fan_in_weight,
                      init_encoder_params, residual_weight)
from .errors import ConfigError, ContractError, DataError
from .store import ParamStore
from .tensor import Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

INIT_TEMPERATURE = 0.07
MIN_TEMPERATURE = 0.01


@dataclass
class Vocabulary:
    """Whitespace word vocabulary with fixed reserved ids; deterministic given
    corpus order."""

    token_to_id: dict[str, int] = field(default_factory=dict)

    @classmethod
    def build(cls, captions) -> "Vocabulary":
        mapping = {tok: i for i, tok in enumerate(RESERVED)}
        for caption in captions:
            for word in caption.strip().split():
                if word not in mapping:
                    mapping[word] = len(mapping)
        return cls(token_to_id=mapping)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id_of(self, word: str) -> int:
        return self.token_to_id.get(word, UNK)

    def to_dict(self) -> dict:
        return dict(self.token_to_id)

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(token_to_id={str(k): int(v) for k, v in d.items()})


def tokenize(caption: str, vocab: Vocabulary, max_len: int) -> np.ndarray:
    """bos + word ids (unk for OOV) + eos, truncated or padded to max_len.

    Truncation keeps a terminal eos so pooling always has one to read.
    """
    ids = [BOS] + [vocab.id_of(w) for w in caption.strip().split()] + [EOS]
    if len(ids) > max_len:
        ids = ids[:max_len]
        ids[-1] = EOS
    ids = ids + [PAD] * (max_len - len(ids))
    return np.asarray(ids, dtype=np.int64)


def eos_positions(ids: np.ndarray) -> np.ndarray:
    """Index of the first eos per row (tokenize guarantees one exists)."""
    hits = ids == EOS
    if not hits.any(axis=1).all():
        raise DataError("token sequence without an eos")
    return hits.argmax(axis=1)


@dataclass
class TextEncoderConfig:
    vocab_size: int
    embed_dim: int = 64
    depth: int = 2
    num_heads: int = 4
    max_len: int = 8

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"text embed_dim {self.embed_dim} not divisible by {self.num_heads} heads"
            )


@dataclass
class RetrievalConfig:
    """Both towers plus the contrastive head.

    ``embed_width`` is the common projection width; with fusion enabled the
    effective embedding is twice as wide (tower projection concatenated with
    the projected frozen feature) and the text projection widens to match.
    """

    visual: EncoderConfig
    text: TextEncoderConfig
    embed_width: int = 64
    fusion: bool = False
    fusion_source_dim: int | None = None

    @property
    def embedding_dim(self) -> int:
        return 2 * self.embed_width if self.fusion else self.embed_width


def default_retrieval_config(vocab_size: int, fusion: bool = False,
                             fusion_source_dim: int | None = None) -> RetrievalConfig:
    visual = EncoderConfig(
        image_size=32, patch_size=8, embed_dim=64, depth=4, num_heads=4,
        ffn_hidden_dim=128, tasks=(TaskId.RETRIEVAL,),
    )
    text = TextEncoderConfig(vocab_size=vocab_size)
    return RetrievalConfig(visual=visual, text=text, fusion=fusion,
                           fusion_source_dim=fusion_source_dim)


def init_retrieval_params(config: RetrievalConfig, rng,
                          store: ParamStore | None = None) -> ParamStore:
    if store is None:
        store = ParamStore()
    init_encoder_params(config.visual, rng, store=store, prefix="encoder.")
    tc = config.text
    store.add("text.embed", rng.normal(0.0, 0.02, size=(tc.vocab_size, tc.embed_dim)))
    store.add("text.pos", rng.normal(0.0, 0.02, size=(1, tc.max_len, tc.embed_dim)))
    for i in range(tc.depth):
        lp = f"text.layers.{i}."
        store.add(lp + "ln1.g", np.ones(tc.embed_dim))
        store.add(lp + "ln1.b", np.zeros(tc.embed_dim))
        for name in ("q", "k", "v"):
            fan_in_weight(store, lp + f"attn.w{name}", (tc.embed_dim, tc.embed_dim), rng)
            store.add(lp + f"attn.b{name}", np.zeros(tc.embed_dim))
        residual_weight(store, lp + "attn.wo", (tc.embed_dim, tc.embed_dim), rng)
        store.add(lp + "attn.bo", np.zeros(tc.embed_dim))
        store.add(lp + "ln2.g", np.ones(tc.embed_dim))
        store.add(lp + "ln2.b", np.zeros(tc.embed_dim))
        fan_in_weight(store, lp + "ffn.w1", (tc.embed_dim, 4 * tc.embed_dim), rng)
        store.add(lp + "ffn.b1", np.zeros(4 * tc.embed_dim))
        residual_weight(store, lp + "ffn.w2", (4 * tc.embed_dim, tc.embed_dim), rng)
        store.add(lp + "ffn.b2", np.zeros(tc.embed_dim))
    e = config.embed_width
    fan_in_weight(store, "head.vis_proj", (config.visual.embed_dim, e), rng)
    fan_in_weight(store, "head.txt_proj", (tc.embed_dim, config.embedding_dim), rng)
    if config.fusion:
        src = config.fusion_source_dim
        if src is None:
            raise ConfigError("fusion enabled but fusion_source_dim not set")
        fan_in_weight(store, "head.fusion_proj", (src, e), rng)
    store.add("head.log_temp", np.log(INIT_TEMPERATURE))
    return store


def clamp_temperature(store: ParamStore) -> None:
    """Project the learnable temperature back to its floor after a step."""
    lt = store["head.log_temp"]
    lt.data = np.maximum(lt.data, np.log(MIN_TEMPERATURE))


def text_encode(ids: np.ndarray, store: ParamStore, config: RetrievalConfig) -> Tensor:
    """Unit-norm text embeddings [B, E*]; pooling reads the eos token.

    Attention is unmasked: the templated corpus keeps sequences short and the
    eos position is explicit, so padding carries no ambiguity worth a mask.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ContractError(f"text_encode: expected [B, L] ids, got {ids.shape}")
    tc = config.text
    if ids.shape[1] != tc.max_len:
        raise ContractError(f"text_encode: sequence length {ids.shape[1]} != {tc.max_len}")
    pos = eos_positions(ids)
    x = T.add(T.embedding_lookup(store["text.embed"], ids), store["text.pos"])
    for i in range(tc.depth):
        lp = f"text.layers.{i}."
        ln1 = T.layer_norm(x, store[lp + "ln1.g"], store[lp + "ln1.b"])

        def project(name):
            return T.linear(ln1, store[lp + f"attn.w{name}"], store[lp + f"attn.b{name}"])

        ctx = T.mha_core(project("q"), project("k"), project("v"), tc.num_heads)
        x = T.add(x, T.linear(ctx, store[lp + "attn.wo"], store[lp + "attn.bo"]))
        ln2 = T.layer_norm(x, store[lp + "ln2.g"], store[lp + "ln2.b"])
        h = T.gelu(T.linear(ln2, store[lp + "ffn.w1"], store[lp + "ffn.b1"]))
        x = T.add(x, T.linear(h, store[lp + "ffn.w2"], store[lp + "ffn.b2"]))
    pooled = T.select_token(x, pos)
    return T.normalize_rows(T.matmul(pooled, store["head.txt_proj"]))


def image_encode(images, store: ParamStore, config: RetrievalConfig,
                 fusion_store: ParamStore | None = None,
                 fusion_config: EncoderConfig | None = None) -> Tensor:
    """Unit-norm image embeddings [B, E*] from the retrieval-routed tower.

    With fusion, the frozen donor encoder's pooled feature is projected to the
    tower width and concatenated before the final normalization.
    """
    images = T.as_tensor(images)
    out = encoder_forward(images, TaskId.RETRIEVAL, store, config.visual)
    emb = T.matmul(out.pooled, store["head.vis_proj"])
    if config.fusion:
        if fusion_store is None or fusion_config is None:
            raise ConfigError("fusion enabled but no frozen donor tower provided")
        with_frozen = encoder_forward(images, _donor_task(fusion_config), fusion_store,
                                      fusion_config)
        fused = T.matmul(with_frozen.pooled, store["head.fusion_proj"])
        emb = T.concat([emb, fused], axis=1)
    return T.normalize_rows(emb)


def _donor_task(donor_config: EncoderConfig) -> TaskId:
    # the donor runs on its own all-shared route; any of its tasks works, the
    # first is a deterministic choice
    return donor_config.tasks[0]


def contrastive_loss(img_emb: Tensor, txt_emb: Tensor, log_temp: Tensor) -> Tensor:
    """Symmetric InfoNCE: mean of row-wise and column-wise cross-entropy of
    the scaled similarity matrix against diagonal targets."""
    b = img_emb.shape[0]
    if b < 1:
        raise ContractError("contrastive_loss: empty batch")
    if txt_emb.shape[0] != b:
        raise ContractError(
            f"contrastive_loss: {img_emb.shape[0]} images vs {txt_emb.shape[0]} texts"
        )
    inv_temp = T.exp(T.scale(log_temp, -1.0))
    logits = T.mul(T.matmul(img_emb, T.transpose(txt_emb)), T.reshape(inv_temp, (1, 1)))
    targets = np.arange(b)
    row_ce = T.cross_entropy(logits, targets)
    col_ce = T.cross_entropy(T.transpose(logits), targets)
    return T.scale(T.add(row_ce, col_ce), 0.5)


# ---------------------------------------------------------------------------
# gallery + querying
# ---------------------------------------------------------------------------


@dataclass
class GalleryIndex:
    gallery_ids: list[int]
    embeddings: np.ndarray  # [G, E*], unit rows
    records: list[dict]  # attribute record per gallery item

    def __post_init__(self):
        if len(self.gallery_ids) != len(set(self.gallery_ids)):
            raise DataError("gallery ids must be unique")
        if self.embeddings.shape[0] != len(self.gallery_ids):
            raise DataError("gallery embedding count does not match ids")


def build_gallery(samples, store: ParamStore, config: RetrievalConfig,
                  fusion_store: ParamStore | None = None,
                  fusion_config: EncoderConfig | None = None,
                  batch_size: int = 64) -> GalleryIndex:
    """Embed gallery images (read-only over parameters)."""
    ids = [s.sample_id for s in samples]
    records = [dict(s.attributes) for s in samples]
    chunks = []
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = samples[start:start + batch_size]
            images = np.stack([s.image for s in batch])
            emb = image_encode(images, store, config, fusion_store, fusion_config)
            chunks.append(emb.data)
    return GalleryIndex(gallery_ids=ids, embeddings=np.concatenate(chunks), records=records)


def embed_text(captions: list[str], vocab: Vocabulary, store: ParamStore,
               config: RetrievalConfig, batch_size: int = 256) -> np.ndarray:
    chunks = []
    with T.no_grad():
        for start in range(0, len(captions), batch_size):
            ids = np.stack(
                [tokenize(c, vocab, config.text.max_len)
                 for c in captions[start:start + batch_size]]
            )
            chunks.append(text_encode(ids, store, config).data)
    return np.concatenate(chunks)


def rank_gallery(text_embedding: np.ndarray, index: GalleryIndex,
                 k: int | None = None) -> list[tuple[int, float]]:
    """Descending cosine similarity; ties broken by ascending gallery id."""
    if len(index.gallery_ids) == 0:
        raise ContractError("rank_gallery: empty gallery index")
    scores = index.embeddings @ text_embedding
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], index.gallery_ids[i]))
    if k is not None:
        if k < 1:
            raise ContractError(f"rank_gallery: k must be >= 1, got {k}")
        order = order[:k]
    return [(index.gallery_ids[i], float(scores[i])) for i in order]


def query(caption: str, vocab: Vocabulary, store: ParamStore, config: RetrievalConfig,
          index: GalleryIndex, k: int = 10) -> list[tuple[int, float]]:
    """Rank the gallery for one caption; k beyond the gallery size clamps."""
    emb = embed_text([caption], vocab, store, config)[0]
    return rank_gallery(emb, index, k=min(k, len(index.gallery_ids)))


def save_gallery(path: str | Path, index: GalleryIndex) -> None:
    path = Path(path)
    fileio.save_tensor(path / "embeddings.otmt", index.embeddings)
    fileio.write_json(
        path / "gallery.json",
        {"gallery_ids": index.gallery_ids, "records": index.records},
    )


def load_gallery(path: str | Path) -> GalleryIndex:
    path = Path(path)
    meta = fileio.read_json(path / "gallery.json")
    return GalleryIndex(
        gallery_ids=[int(i) for i in meta["gallery_ids"]],
        embeddings=fileio.load_tensor(path / "embeddings.otmt"),
        records=meta["records"],
    )

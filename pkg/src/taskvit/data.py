"""Synthetic shape-scene generator for all four tasks, plus augmentation,
splits, and the on-disk dataset layout.

Scenes are colored geometric shapes on a dark noisy background. Labels are
derived from the rasterization itself (tight boxes from rendered pixels,
masks from the same predicates), so every annotation is exact by
construction. Captioned samples get a templated description
"a {size} {color} {shape}" over a closed attribute vocabulary; a fraction of
captions can be corrupted by one attribute to mimic noisy web-crawled pairs.

All generation is a pure function of (spec, seed, index): per-sample RNGs are
derived from the spec seed, so datasets are bitwise reproducible.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .errors import DataError

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.10),
    "blue": (0.15, 0.20, 0.90),
    "yellow": (0.90, 0.85, 0.10),
    "magenta": (0.85, 0.15, 0.80),
    "cyan": (0.10, 0.80, 0.85),
    "orange": (0.95, 0.55, 0.10),
    "purple": (0.50, 0.15, 0.75),
}

SHAPES = ("circle", "square", "triangle", "diamond", "cross")

SIZE_NAMES = ("small", "medium", "large")
SIZE_RANGES: dict[str, tuple[float, float]] = {
    # radius as a fraction of image size
    "small": (0.10, 0.14),
    "medium": (0.18, 0.23),
    "large": (0.28, 0.34),
}

BACKGROUND = 0.12
CAPTION_TEMPLATE = "a {size} {color} {shape}"

# generator codes keep per-sample RNG streams disjoint across tasks
_TASK_CODES = {"classification": 0, "detection": 1, "segmentation": 2, "captioned": 3}


@dataclass
class SceneSpec:
    seed: int = 0
    image_size: int = 32
    min_objects: int = 1
    max_objects: int = 3
    colors: tuple[str, ...] = tuple(PALETTE)
    shapes: tuple[str, ...] = SHAPES
    noise_sigma: float = 0.02
    radius_frac: tuple[float, float] = (0.125, 0.25)
    min_center_dist: float = 10.0

    def __post_init__(self):
        self.colors = tuple(self.colors)
        self.shapes = tuple(self.shapes)
        for c in self.colors:
            if c not in PALETTE:
                raise DataError(f"unknown color {c!r}; palette: {sorted(PALETTE)}")
        for s in self.shapes:
            if s not in SHAPES:
                raise DataError(f"unknown shape {s!r}; known: {SHAPES}")
        if int(self.radius_frac[1] * self.image_size) * 2 + 4 >= self.image_size:
            raise DataError("radius_frac upper bound leaves no room to place an object")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["colors"] = list(self.colors)
        d["shapes"] = list(self.shapes)
        d["radius_frac"] = list(self.radius_frac)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        kwargs = dict(d)
        kwargs["colors"] = tuple(kwargs.get("colors", tuple(PALETTE)))
        kwargs["shapes"] = tuple(kwargs.get("shapes", SHAPES))
        kwargs["radius_frac"] = tuple(kwargs.get("radius_frac", (0.125, 0.25)))
        return cls(**kwargs)


@dataclass
class Sample:
    sample_id: int
    image: np.ndarray  # [3, H, W] in [0, 1]
    label: int | None = None
    boxes: np.ndarray | None = None  # [k, 4] normalized (cx, cy, w, h)
    box_classes: np.ndarray | None = None  # [k]
    mask: np.ndarray | None = None  # [H, W] int, 0 = background
    caption: str | None = None
    attributes: dict | None = None


@dataclass
class SplitManifest:
    train: list[int]
    val: list[int]
    test: list[int]
    seed: int
    fractions: tuple[float, float, float]

    def ids(self, name: str) -> list[int]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise DataError(f"unknown split {name!r}") from None

    def to_dict(self) -> dict:
        return {
            "train": self.train,
            "val": self.val,
            "test": self.test,
            "seed": self.seed,
            "fractions": list(self.fractions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        return cls(
            train=list(d["train"]),
            val=list(d["val"]),
            test=list(d["test"]),
            seed=int(d["seed"]),
            fractions=tuple(d["fractions"]),
        )


@dataclass
class Dataset:
    task: str
    samples: list[Sample]
    spec: SceneSpec
    split: SplitManifest

    def subset(self, split_name: str) -> list[Sample]:
        wanted = set(self.split.ids(split_name))
        return [s for s in self.samples if s.sample_id in wanted]


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


def shape_mask(shape: str, cx: float, cy: float, r: float, size: int) -> np.ndarray:
    """Boolean [size, size] mask of one shape, evaluated at pixel centers."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    if shape == "circle":
        return dx**2 + dy**2 <= r**2
    if shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= r
    if shape == "cross":
        t = r / 3.0
        return ((np.abs(dx) <= t) & (np.abs(dy) <= r)) | (
            (np.abs(dy) <= t) & (np.abs(dx) <= r)
        )
    if shape == "triangle":
        # upward-pointing: width grows linearly from apex (cy - r) to base (cy + r)
        u = (dy + r) / (2.0 * r)
        return (u >= 0) & (u <= 1) & (np.abs(dx) <= u * r)
    raise DataError(f"unknown shape {shape!r}")


def tight_box(mask: np.ndarray) -> np.ndarray:
    """Normalized (cx, cy, w, h) bounding the true pixels of a mask."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise DataError("tight_box: empty mask")
    size = mask.shape[0]
    x1, x2 = xs.min(), xs.max() + 1
    y1, y2 = ys.min(), ys.max() + 1
    return np.array(
        [(x1 + x2) / 2.0 / size, (y1 + y2) / 2.0 / size, (x2 - x1) / size, (y2 - y1) / size]
    )


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _place_objects(rng, spec: SceneSpec, count: int, radius_range: tuple[float, float]):
    """Rejection-sample non-overlapping objects; returns a list of dicts."""
    size = spec.image_size
    objects = []
    occupied = np.zeros((size, size), dtype=bool)
    centers: list[tuple[float, float]] = []
    for _ in range(count):
        placed = False
        for _attempt in range(40):
            r = rng.uniform(*radius_range) * size
            lo, hi = r + 1.0, size - r - 2.0
            if hi <= lo:
                continue
            cx, cy = rng.uniform(lo, hi), rng.uniform(lo, hi)
            if any(
                (cx - ox) ** 2 + (cy - oy) ** 2 < spec.min_center_dist**2
                for ox, oy in centers
            ):
                continue
            shape = spec.shapes[rng.integers(len(spec.shapes))]
            mask = shape_mask(shape, cx, cy, r, size)
            if not mask.any() or (mask & _dilate(occupied)).any():
                continue
            color = spec.colors[rng.integers(len(spec.colors))]
            objects.append(
                {"shape": shape, "color": color, "mask": mask, "cx": cx, "cy": cy, "r": r}
            )
            occupied |= mask
            centers.append((cx, cy))
            placed = True
            break
        if not placed:
            break
    return objects


def _render(rng, spec: SceneSpec, objects: list[dict]) -> np.ndarray:
    size = spec.image_size
    img = np.full((3, size, size), BACKGROUND)
    for obj in objects:
        rgb = PALETTE[obj["color"]]
        for ch in range(3):
            img[ch][obj["mask"]] = rgb[ch]
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _sample_rng(spec: SceneSpec, task: str, index: int):
    return np.random.default_rng((spec.seed, _TASK_CODES[task], index))


# ---------------------------------------------------------------------------
# per-task generators
# ---------------------------------------------------------------------------


def gen_classification(spec: SceneSpec, n: int) -> list[Sample]:
    """One shape per image; the label is the shape class index."""
    if n < 1:
        raise DataError("gen_classification: n must be >= 1")
    out = []
    for i in range(n):
        rng = _sample_rng(spec, "classification", i)
        objects = _place_objects(rng, spec, 1, spec.radius_frac)
        if not objects:
            raise DataError("could not place an object; spec too tight")
        image = _render(rng, spec, objects)
        out.append(
            Sample(sample_id=i, image=image, label=spec.shapes.index(objects[0]["shape"]))
        )
    return out


def gen_detection(spec: SceneSpec, n: int) -> list[Sample]:
    """1..k non-overlapping shapes with tight boxes from the rendered pixels."""
    if n < 1:
        raise DataError("gen_detection: n must be >= 1")
    out = []
    for i in range(n):
        rng = _sample_rng(spec, "detection", i)
        count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
        objects = _place_objects(rng, spec, count, spec.radius_frac)
        if not objects:
            raise DataError("could not place any object; spec too tight")
        image = _render(rng, spec, objects)
        boxes = np.stack([tight_box(o["mask"]) for o in objects])
        classes = np.array([spec.shapes.index(o["shape"]) for o in objects])
        out.append(Sample(sample_id=i, image=image, boxes=boxes, box_classes=classes))
    return out


def gen_segmentation(spec: SceneSpec, n: int) -> list[Sample]:
    """Scenes rasterized to class masks; background is class 0, shape class
    ``s`` paints class ``s + 1``."""
    if n < 1:
        raise DataError("gen_segmentation: n must be >= 1")
    out = []
    for i in range(n):
        rng = _sample_rng(spec, "segmentation", i)
        count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
        objects = _place_objects(rng, spec, count, spec.radius_frac)
        if not objects:
            raise DataError("could not place any object; spec too tight")
        image = _render(rng, spec, objects)
        mask = np.zeros((spec.image_size, spec.image_size), dtype=np.int64)
        for o in objects:
            mask[o["mask"]] = spec.shapes.index(o["shape"]) + 1
        out.append(Sample(sample_id=i, image=image, mask=mask))
    return out


def gen_captioned(spec: SceneSpec, n: int) -> list[Sample]:
    """One object with (size, color, shape) attributes and a templated caption."""
    if n < 1:
        raise DataError("gen_captioned: n must be >= 1")
    out = []
    for i in range(n):
        rng = _sample_rng(spec, "captioned", i)
        size_name = SIZE_NAMES[rng.integers(len(SIZE_NAMES))]
        objects = _place_objects(rng, spec, 1, SIZE_RANGES[size_name])
        if not objects:
            raise DataError(f"could not place a {size_name} object; spec too tight")
        image = _render(rng, spec, objects)
        attrs = {"size": size_name, "color": objects[0]["color"], "shape": objects[0]["shape"]}
        out.append(
            Sample(
                sample_id=i,
                image=image,
                label=spec.shapes.index(objects[0]["shape"]),
                caption=CAPTION_TEMPLATE.format(**attrs),
                attributes=attrs,
            )
        )
    return out


def parse_caption(caption: str) -> dict:
    """Invert the caption template back to its attribute record."""
    words = caption.strip().split()
    if len(words) != 4 or words[0] != "a":
        raise DataError(f"caption {caption!r} does not match template {CAPTION_TEMPLATE!r}")
    size, color, shape = words[1], words[2], words[3]
    if size not in SIZE_NAMES:
        raise DataError(f"unknown size {size!r} in caption {caption!r}")
    return {"size": size, "color": color, "shape": shape}


def label_noise(samples: list[Sample], rate: float, seed: int):
    """Corrupt exactly floor(rate * n) captions by one attribute.

    Images and stored attribute records stay truthful; only the caption text
    lies. Returns (new samples, corruption log).
    """
    if not 0.0 <= rate <= 1.0:
        raise DataError(f"label_noise: rate must be in [0, 1], got {rate}")
    rng = np.random.default_rng((seed, 0xC0FFEE))
    n_corrupt = int(rate * len(samples))
    chosen = set(rng.choice(len(samples), size=n_corrupt, replace=False).tolist())
    domains = {"size": SIZE_NAMES, "color": tuple(PALETTE), "shape": SHAPES}
    out = []
    log = []
    for idx, sample in enumerate(samples):
        if idx not in chosen:
            out.append(sample)
            continue
        attrs = dict(sample.attributes)
        fields = ("size", "color", "shape")
        f = fields[rng.integers(3)]
        options = [v for v in domains[f] if v != attrs[f]]
        new_value = options[rng.integers(len(options))]
        old_value = attrs[f]
        attrs[f] = new_value
        corrupted = dataclasses.replace(sample, caption=CAPTION_TEMPLATE.format(**attrs))
        out.append(corrupted)
        log.append(
            {"id": sample.sample_id, "field": f, "old": old_value, "new": new_value}
        )
    return out, log


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentPolicy:
    flip_prob: float = 0.0
    scale: bool = False
    crop: bool = False
    scale_range: tuple[float, float] = (0.5, 2.0)
    crop_range: tuple[float, float] = (0.7, 1.0)

    @property
    def is_identity(self) -> bool:
        return self.flip_prob == 0.0 and not self.scale and not self.crop


def _resize_nearest(img: np.ndarray, out_size: int) -> np.ndarray:
    in_size = img.shape[-1]
    idx = (np.arange(out_size) * in_size) // out_size
    return img[..., idx, :][..., idx] if img.ndim == 2 else img[:, idx, :][:, :, idx]


def hflip(sample: Sample) -> Sample:
    """Mirror x; boxes map cx -> 1 - cx; applying twice restores the input."""
    new = dataclasses.replace(sample, image=np.ascontiguousarray(sample.image[:, :, ::-1]))
    if sample.boxes is not None:
        boxes = sample.boxes.copy()
        boxes[:, 0] = 1.0 - boxes[:, 0]
        new.boxes = boxes
    if sample.mask is not None:
        new.mask = np.ascontiguousarray(sample.mask[:, ::-1])
    return new


def _crop_resize(sample: Sample, x0: int, y0: int, crop: int) -> Sample:
    size = sample.image.shape[-1]
    img = sample.image[:, y0:y0 + crop, x0:x0 + crop]
    new = dataclasses.replace(sample, image=_resize_nearest(img, size))
    if sample.mask is not None:
        new.mask = _resize_nearest(sample.mask[y0:y0 + crop, x0:x0 + crop], size)
    if sample.boxes is not None:
        kept_boxes, kept_classes = [], []
        for box, cls in zip(sample.boxes, sample.box_classes):
            x1, y1, x2, y2 = (
                box[0] - box[2] / 2, box[1] - box[3] / 2,
                box[0] + box[2] / 2, box[1] + box[3] / 2,
            )
            # into crop-local normalized coordinates, then clip
            nx1 = (x1 * size - x0) / crop
            nx2 = (x2 * size - x0) / crop
            ny1 = (y1 * size - y0) / crop
            ny2 = (y2 * size - y0) / crop
            cx1, cy1 = max(0.0, nx1), max(0.0, ny1)
            cx2, cy2 = min(1.0, nx2), min(1.0, ny2)
            if cx2 <= cx1 or cy2 <= cy1:
                continue
            remaining = (cx2 - cx1) * (cy2 - cy1)
            original = (nx2 - nx1) * (ny2 - ny1)
            if remaining < 0.25 * original:
                continue
            kept_boxes.append(
                [(cx1 + cx2) / 2, (cy1 + cy2) / 2, cx2 - cx1, cy2 - cy1]
            )
            kept_classes.append(cls)
        new.boxes = np.array(kept_boxes).reshape(-1, 4)
        new.box_classes = np.array(kept_classes, dtype=np.int64)
    return new


def _pad_center(sample: Sample, small: int) -> Sample:
    size = sample.image.shape[-1]
    off = (size - small) // 2
    img = np.full((3, size, size), 0.0)
    img[:, off:off + small, off:off + small] = sample.image[:, :small, :small]
    new = dataclasses.replace(sample, image=img)
    if sample.mask is not None:
        mask = np.zeros((size, size), dtype=sample.mask.dtype)
        mask[off:off + small, off:off + small] = sample.mask[:small, :small]
        new.mask = mask
    if sample.boxes is not None and len(sample.boxes):
        boxes = sample.boxes.copy()
        boxes[:, 0] = (boxes[:, 0] * small + off) / size
        boxes[:, 1] = (boxes[:, 1] * small + off) / size
        boxes[:, 2] = boxes[:, 2] * small / size
        boxes[:, 3] = boxes[:, 3] * small / size
        new.boxes = boxes
    return new


def augment(sample: Sample, task: str, policy: AugmentPolicy, seed: int) -> Sample:
    """Apply the policy's enabled transforms; labels move with the pixels."""
    if policy.is_identity:
        return sample
    rng = np.random.default_rng((seed, sample.sample_id, 0xA06))
    out = sample
    if policy.flip_prob > 0 and rng.random() < policy.flip_prob:
        out = hflip(out)
    if policy.scale:
        size = out.image.shape[-1]
        s = rng.uniform(*policy.scale_range)
        scaled = max(8, int(round(size * s)))
        resized = dataclasses.replace(out, image=_resize_nearest(out.image, scaled))
        if out.mask is not None:
            resized.mask = _resize_nearest(out.mask, scaled)
        if scaled >= size:
            x0 = int(rng.integers(0, scaled - size + 1))
            y0 = int(rng.integers(0, scaled - size + 1))
            out = _crop_resize_identity_scale(resized, x0, y0, size)
        else:
            out = _pad_center(resized, scaled)
    if policy.crop:
        size = out.image.shape[-1]
        frac = rng.uniform(*policy.crop_range)
        crop = max(8, int(round(size * frac)))
        x0 = int(rng.integers(0, size - crop + 1))
        y0 = int(rng.integers(0, size - crop + 1))
        out = _crop_resize(out, x0, y0, crop)
    return out


def _crop_resize_identity_scale(sample: Sample, x0: int, y0: int, out_size: int) -> Sample:
    """Crop an out_size window out of an upscaled sample (no further resize)."""
    img = sample.image[:, y0:y0 + out_size, x0:x0 + out_size]
    big = sample.image.shape[-1]
    new = dataclasses.replace(sample, image=np.ascontiguousarray(img))
    if sample.mask is not None:
        new.mask = np.ascontiguousarray(sample.mask[y0:y0 + out_size, x0:x0 + out_size])
    if sample.boxes is not None and len(sample.boxes):
        kept_boxes, kept_classes = [], []
        for box, cls in zip(sample.boxes, sample.box_classes):
            x1 = box[0] * big - box[2] * big / 2 - x0
            x2 = box[0] * big + box[2] * big / 2 - x0
            y1 = box[1] * big - box[3] * big / 2 - y0
            y2 = box[1] * big + box[3] * big / 2 - y0
            cx1, cy1 = max(0.0, x1), max(0.0, y1)
            cx2, cy2 = min(float(out_size), x2), min(float(out_size), y2)
            if cx2 <= cx1 or cy2 <= cy1:
                continue
            if (cx2 - cx1) * (cy2 - cy1) < 0.25 * (x2 - x1) * (y2 - y1):
                continue
            kept_boxes.append(
                [
                    (cx1 + cx2) / 2 / out_size,
                    (cy1 + cy2) / 2 / out_size,
                    (cx2 - cx1) / out_size,
                    (cy2 - cy1) / out_size,
                ]
            )
            kept_classes.append(cls)
        new.boxes = np.array(kept_boxes).reshape(-1, 4)
        new.box_classes = np.array(kept_classes, dtype=np.int64)
    else:
        new.boxes = sample.boxes
        new.box_classes = sample.box_classes
    return new


# ---------------------------------------------------------------------------
# splits and persistence
# ---------------------------------------------------------------------------


def split(ids: list[int], fractions: tuple[float, float, float], seed: int) -> SplitManifest:
    """Disjoint, exhaustive train/val/test split, stable under the seed.

    Sizes use the largest-remainder rule, so (0.8, 0.1, 0.1) over 100 ids is
    exactly 80/10/10.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fractions}")
    n = len(ids)
    raw = [f * n for f in fractions]
    sizes = [int(np.floor(x)) for x in raw]
    remainders = [x - s for x, s in zip(raw, sizes)]
    for _ in range(n - sum(sizes)):
        i = int(np.argmax(remainders))
        sizes[i] += 1
        remainders[i] = -1.0
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    train = shuffled[: sizes[0]]
    val = shuffled[sizes[0]: sizes[0] + sizes[1]]
    test = shuffled[sizes[0] + sizes[1]:]
    return SplitManifest(train=train, val=val, test=test, seed=seed, fractions=tuple(fractions))


def save_dataset(path: str | Path, dataset: Dataset) -> None:
    """Write images as tensor files plus annotations.jsonl and manifest.json."""
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for s in dataset.samples:
        image_file = f"images/{s.sample_id:05d}.otmt"
        fileio.save_tensor(path / image_file, s.image)
        rec: dict = {"id": s.sample_id, "image": image_file}
        if s.label is not None:
            rec["label"] = int(s.label)
        if s.boxes is not None:
            rec["boxes"] = [[float(v) for v in b] for b in s.boxes]
            rec["box_classes"] = [int(c) for c in s.box_classes]
        if s.mask is not None:
            mask_file = f"masks/{s.sample_id:05d}.otmt"
            fileio.save_tensor(path / mask_file, s.mask.astype(np.float64))
            rec["mask"] = mask_file
        if s.caption is not None:
            rec["caption"] = s.caption
        if s.attributes is not None:
            rec["attributes"] = s.attributes
        records.append(rec)
    fileio.write_jsonl(path / "annotations.jsonl", records)
    fileio.write_json(
        path / "manifest.json",
        {
            "task": dataset.task,
            "spec": dataset.spec.to_dict(),
            "split": dataset.split.to_dict(),
            "num_samples": len(dataset.samples),
        },
    )


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    manifest = fileio.read_json(path / "manifest.json")
    records = fileio.read_jsonl(path / "annotations.jsonl")
    samples = []
    for rec in records:
        sample = Sample(
            sample_id=int(rec["id"]),
            image=fileio.load_tensor(path / rec["image"]),
            label=rec.get("label"),
            caption=rec.get("caption"),
            attributes=rec.get("attributes"),
        )
        if "boxes" in rec:
            sample.boxes = np.asarray(rec["boxes"], dtype=np.float64).reshape(-1, 4)
            sample.box_classes = np.asarray(rec["box_classes"], dtype=np.int64)
        if "mask" in rec:
            sample.mask = fileio.load_tensor(path / rec["mask"]).astype(np.int64)
        samples.append(sample)
    return Dataset(
        task=manifest["task"],
        samples=samples,
        spec=SceneSpec.from_dict(manifest["spec"]),
        split=SplitManifest.from_dict(manifest["split"]),
    )

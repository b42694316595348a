"""Encoder-side inputs: image vectors, object labels, LangId, optional text.

The encoder sequence is laid out as ``[image, labels..., langid, text...]``.
Batches pad each block separately, so every row of a batch shares the same
position layout and padding lives in the attention mask only.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .tensor import DimensionError, Tensor, add, concat, embedding, matmul, mul, reshape
from .text import LANGS, check_lang

IMAGE_DIM = 64
LABEL_DIM = 256
MAX_LABELS = 16
OBJ_MAGIC = b"PLGS-OBJ v1\n"


class FeatureFormatError(ValueError):
    pass


class FeatureConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    image: np.ndarray              # global embedding, float32[64]
    labels: tuple                  # label ids, confidence-descending

    def __post_init__(self):
        if self.image.shape != (IMAGE_DIM,):
            raise FeatureFormatError(f"global embedding must have {IMAGE_DIM} dims")
        if len(self.labels) > MAX_LABELS:
            raise FeatureFormatError(f"more than {MAX_LABELS} labels")

    def __eq__(self, other):
        return (isinstance(other, ImageRecord) and self.labels == other.labels
                and np.array_equal(self.image, other.image))


class ObjectLabelTable:
    """Frozen label-id -> 256-d embedding map."""

    def __init__(self, vectors: dict[int, np.ndarray]):
        self.ids = sorted(vectors)
        self.index = {lid: k for k, lid in enumerate(self.ids)}
        mat = np.zeros((len(self.ids) + 1, LABEL_DIM), dtype=np.float32)
        for lid, vec in vectors.items():
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (LABEL_DIM,):
                raise FeatureFormatError(f"label {lid}: embedding must have {LABEL_DIM} dims")
            mat[self.index[lid]] = vec
        # last row is the padding slot
        self.matrix = mat

    @property
    def pad_row(self) -> int:
        return len(self.ids)

    def rows(self, labels: Sequence[int]) -> list[int]:
        try:
            return [self.index[int(l)] for l in labels]
        except KeyError as e:
            raise FeatureFormatError(f"label id {e.args[0]} not in embedding table") from None

    def __contains__(self, lid):
        return lid in self.index

    def vector(self, lid: int) -> np.ndarray:
        return self.matrix[self.index[lid]]

    @classmethod
    def random(cls, ids: Sequence[int], seed: int) -> "ObjectLabelTable":
        rng = np.random.default_rng(seed)
        vecs = rng.standard_normal((len(ids), LABEL_DIM)).astype(np.float32) / np.sqrt(LABEL_DIM)
        return cls({int(i): v for i, v in zip(ids, vecs)})

    def dumps(self) -> bytes:
        out = [OBJ_MAGIC, struct.pack("<I", len(self.ids))]
        for lid in self.ids:
            out.append(struct.pack("<I", lid))
            out.append(self.vector(lid).astype("<f4").tobytes())
        return b"".join(out)

    def save(self, path) -> None:
        Path(path).write_bytes(self.dumps())

    @classmethod
    def loads(cls, raw: bytes) -> "ObjectLabelTable":
        if not raw.startswith(OBJ_MAGIC):
            raise FeatureFormatError("missing PLGS-OBJ header")
        pos = len(OBJ_MAGIC)
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        rec = 4 + 4 * LABEL_DIM
        if len(raw) != pos + count * rec:
            raise FeatureFormatError("label table size does not match its record count")
        vecs = {}
        for _ in range(count):
            (lid,) = struct.unpack_from("<I", raw, pos)
            vecs[lid] = np.frombuffer(raw, dtype="<f4", count=LABEL_DIM, offset=pos + 4).copy()
            pos += rec
        return cls(vecs)

    @classmethod
    def load(cls, path) -> "ObjectLabelTable":
        return cls.loads(Path(path).read_bytes())


def write_features_file(path, records: dict[str, ImageRecord]) -> None:
    lines = []
    for image_id, rec in records.items():
        vec = " ".join(f"{float(x):.9g}" for x in rec.image)
        lines.append(f"{image_id}\t{vec}\t{';'.join(str(l) for l in rec.labels)}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_features_file(path, table: ObjectLabelTable | None = None) -> dict[str, ImageRecord]:
    out: dict[str, ImageRecord] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FeatureFormatError(f"line {n}: expected 3 tab-separated fields")
        image_id, vec, labels = parts
        try:
            image = np.array([float(x) for x in vec.split()], dtype=np.float32)
            label_ids = tuple(int(x) for x in labels.split(";") if x)
        except ValueError as e:
            raise FeatureFormatError(f"record {image_id}: {e}") from None
        if image.shape != (IMAGE_DIM,):
            raise FeatureFormatError(
                f"record {image_id}: global embedding has {image.size} dims, expected {IMAGE_DIM}")
        if len(label_ids) > MAX_LABELS:
            raise FeatureFormatError(f"record {image_id}: {len(label_ids)} labels > {MAX_LABELS}")
        if not np.isfinite(image).all():
            raise FeatureFormatError(f"record {image_id}: non-finite values")
        if table is not None:
            missing = [l for l in label_ids if l not in table]
            if missing:
                raise FeatureFormatError(f"record {image_id}: unknown label ids {missing}")
        out[image_id] = ImageRecord(image, label_ids)
    return out


# -- projections ---------------------------------------------------------------

@dataclass
class ProjectionMLP:
    """Two affine layers with linear activation: ``W2 (W1 v + b1) + b2``."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def from_params(cls, params: dict, prefix: str) -> "ProjectionMLP":
        return cls(*(params[f"{prefix}.{k}"] for k in ("w1", "b1", "w2", "b2")))

    @staticmethod
    def init(rng: np.random.Generator, d_in: int, d_model: int, prefix: str,
             dtype=np.float32) -> dict:
        return {
            f"{prefix}.w1": Tensor((rng.standard_normal((d_in, d_model)) / np.sqrt(d_in)).astype(dtype)),
            f"{prefix}.b1": Tensor(np.zeros(d_model, dtype)),
            f"{prefix}.w2": Tensor((rng.standard_normal((d_model, d_model)) / np.sqrt(d_model)).astype(dtype)),
            f"{prefix}.b2": Tensor(np.zeros(d_model, dtype)),
        }

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"projection expects {self.d_in} inputs, got {x.shape[-1]}")
        h = add(matmul(x, self.w1), self.b1)
        return add(matmul(h, self.w2), self.b2)


def project(vec, mlp: ProjectionMLP) -> Tensor:
    x = vec if isinstance(vec, Tensor) else Tensor(np.asarray(vec, dtype=mlp.w1.dtype))
    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, -1))
    y = mlp(x)
    return reshape(y, y.shape[1:]) if squeeze else y


def sinusoid(length: int, d_model: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


def embed_text(params: dict, ids: np.ndarray) -> Tensor:
    """Token embeddings scaled by sqrt(d_model) plus sinusoidal positions."""
    table = params["tok_emb"]
    d = table.shape[1]
    x = mul(embedding(table, ids), float(np.sqrt(d)))
    return add(x, Tensor(sinusoid(ids.shape[-1], d, table.dtype)))


# -- assembly ------------------------------------------------------------------

@dataclass(frozen=True)
class EncoderItem:
    image: np.ndarray
    labels: tuple
    lang: str
    text: Optional[tuple] = None


@dataclass
class EncoderInput:
    vectors: Tensor                # [S, d] or [B, S, d]
    mask: np.ndarray               # True where the slot is real
    segments: tuple                # per-position tag: image / label / langid / text

    def __len__(self):
        return self.vectors.shape[-2]


def make_item(image, labels, lang: str, src_text_ids=None, prefix_len: int | None = None) -> EncoderItem:
    check_lang(lang)
    labels = tuple(int(l) for l in labels)
    if len(labels) > MAX_LABELS:
        raise FeatureFormatError(f"more than {MAX_LABELS} labels")
    if prefix_len is not None:
        if src_text_ids is None:
            raise FeatureConfigError("prefix_len given without source text")
        src_text_ids = list(src_text_ids)[:prefix_len]
    text = None if src_text_ids is None else tuple(int(t) for t in src_text_ids)
    return EncoderItem(np.asarray(image, dtype=np.float32), labels, lang, text)


def embed_batch(params: dict, table: ObjectLabelTable, items: Sequence[EncoderItem],
                pad_id: int = 0) -> EncoderInput:
    """Project and concatenate the encoder blocks for a batch of items."""
    B = len(items)
    dtype = params["tok_emb"].dtype
    n_lab = max(len(it.labels) for it in items)
    n_txt = max(len(it.text) if it.text else 0 for it in items)

    img = Tensor(np.stack([it.image for it in items]).astype(dtype))
    blocks = [reshape(project(img, ProjectionMLP.from_params(params, "proj_img")), (B, 1, -1))]
    mask = [np.ones((B, 1), bool)]
    segments = ["image"]

    if n_lab:
        rows = np.full((B, n_lab), table.pad_row)
        lab_mask = np.zeros((B, n_lab), bool)
        for b, it in enumerate(items):
            rows[b, :len(it.labels)] = table.rows(it.labels)
            lab_mask[b, :len(it.labels)] = True
        lab = Tensor(table.matrix[rows].astype(dtype))
        blocks.append(ProjectionMLP.from_params(params, "proj_lab")(lab))
        mask.append(lab_mask)
        segments += ["label"] * n_lab

    onehot = np.zeros((B, len(LANGS)), dtype)
    for b, it in enumerate(items):
        onehot[b, LANGS.index(it.lang)] = 1.0
    lang = project(Tensor(onehot), ProjectionMLP.from_params(params, "proj_lang"))
    blocks.append(reshape(lang, (B, 1, -1)))
    mask.append(np.ones((B, 1), bool))
    segments.append("langid")

    if n_txt:
        ids = np.full((B, n_txt), pad_id, dtype=np.int64)
        txt_mask = np.zeros((B, n_txt), bool)
        for b, it in enumerate(items):
            if it.text:
                ids[b, :len(it.text)] = it.text
                txt_mask[b, :len(it.text)] = True
        blocks.append(embed_text(params, ids))
        mask.append(txt_mask)
        segments += ["text"] * n_txt

    return EncoderInput(concat(blocks, axis=1), np.concatenate(mask, axis=1), tuple(segments))


def assemble_encoder_input(params: dict, table: ObjectLabelTable, image, labels, lang: str,
                           src_text_ids=None, prefix_len: int | None = None) -> EncoderInput:
    """Encoder input for one item: ``[image, labels, langid, text[:prefix_len]]``."""
    item = make_item(image, labels, lang, src_text_ids, prefix_len)
    batch = embed_batch(params, table, [item])
    return EncoderInput(reshape(batch.vectors, batch.vectors.shape[1:]), batch.mask[0], batch.segments)

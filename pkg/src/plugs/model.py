"""Pre-LN Transformer encoder-decoder, teacher forcing, beam search, checkpoints.

Parameters are a flat ``dict[str, Tensor]``; every function here is a pure
function of that dict plus its inputs.
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .features import (IMAGE_DIM, LABEL_DIM, EncoderInput, EncoderItem, ObjectLabelTable,
                       ProjectionMLP, embed_batch, embed_text, make_item)
from .optim import OptimizerState, TrainConfig, init_optimizer, optimizer_step
from .tensor import Tape, Tensor
from .text import LANGS

NEG_INF = -1e9
CKPT_MAGIC = b"PLGS-CKPT v1\n"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    enc_layers: int
    dec_layers: int
    heads: int
    d_model: int
    d_ff: int
    vocab_size: int
    dropout: float = 0.0
    langs: tuple = LANGS

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["langs"] = ",".join(self.langs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            if f.name == "langs":
                kw[f.name] = tuple(v.split(",")) if isinstance(v, str) else tuple(v)
            elif f.name == "dropout":
                kw[f.name] = float(v)
            else:
                kw[f.name] = int(v)
        return cls(**kw)


# (enc_layers, dec_layers, heads, d_model, d_ff)
MODEL_PRESETS = {
    "multi30k": (3, 3, 8, 512, 2048),
    "cc_base": (6, 6, 8, 512, 2048),
    "cc_large": (10, 10, 12, 768, 3072),
    "desk_tiny": (2, 2, 4, 64, 256),
    "desk_large": (3, 3, 6, 96, 384),
}


def preset(name: str, vocab_size: int, dropout: float = 0.0) -> ModelConfig:
    e, d, h, m, ff = MODEL_PRESETS[name]
    return ModelConfig(e, d, h, m, ff, vocab_size, dropout)


@dataclass(frozen=True)
class DecodeConfig:
    beam_width: int = 5
    max_len: int = 64
    length_normalization: bool = False

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


# -- parameters ----------------------------------------------------------------

def _dense(rng, d_in, d_out, dtype):
    return Tensor((rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)).astype(dtype))


def _ln(prefix, d, dtype):
    return {f"{prefix}.g": Tensor(np.ones(d, dtype)), f"{prefix}.b": Tensor(np.zeros(d, dtype))}


def _attn(rng, prefix, d, dtype):
    return {f"{prefix}.{k}": _dense(rng, d, d, dtype) for k in ("wq", "wk", "wv", "wo")}


def _ffn(rng, prefix, d, d_ff, dtype):
    return {f"{prefix}.w1": _dense(rng, d, d_ff, dtype), f"{prefix}.b1": Tensor(np.zeros(d_ff, dtype)),
            f"{prefix}.w2": _dense(rng, d_ff, d, dtype), f"{prefix}.b2": Tensor(np.zeros(d, dtype))}


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    p: dict[str, Tensor] = {}
    p.update(ProjectionMLP.init(rng, IMAGE_DIM, d, "proj_img", dtype))
    p.update(ProjectionMLP.init(rng, LABEL_DIM, d, "proj_lab", dtype))
    p.update(ProjectionMLP.init(rng, len(LANGS), d, "proj_lang", dtype))
    p["tok_emb"] = Tensor((rng.standard_normal((cfg.vocab_size, d)) / np.sqrt(d)).astype(dtype))
    for i in range(cfg.enc_layers):
        pre = f"enc.{i}"
        p.update(_ln(f"{pre}.ln1", d, dtype))
        p.update(_attn(rng, f"{pre}.self", d, dtype))
        p.update(_ln(f"{pre}.ln2", d, dtype))
        p.update(_ffn(rng, f"{pre}.ff", d, cfg.d_ff, dtype))
    p.update(_ln("enc.ln_f", d, dtype))
    for i in range(cfg.dec_layers):
        pre = f"dec.{i}"
        p.update(_ln(f"{pre}.ln1", d, dtype))
        p.update(_attn(rng, f"{pre}.self", d, dtype))
        p.update(_ln(f"{pre}.ln2", d, dtype))
        p.update(_attn(rng, f"{pre}.cross", d, dtype))
        p.update(_ln(f"{pre}.ln3", d, dtype))
        p.update(_ffn(rng, f"{pre}.ff", d, cfg.d_ff, dtype))
    p.update(_ln("dec.ln_f", d, dtype))
    p["out.w"] = _dense(rng, d, cfg.vocab_size, dtype)
    p["out.b"] = Tensor(np.zeros(cfg.vocab_size, dtype))
    for name, t in p.items():
        t.name = name
    return p


def cast_params(params: dict[str, Tensor], dtype) -> dict[str, Tensor]:
    return {k: Tensor(v.data.astype(dtype), name=k) for k, v in params.items()}


# -- layers --------------------------------------------------------------------

def _layer_norm(p, prefix, x):
    return T.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, S, d = x.shape
    return T.transpose(T.reshape(x, (B, S, heads, d // heads)), (0, 2, 1, 3))


def attention(p, prefix, q_in: Tensor, kv_in: Tensor, heads: int, masked: np.ndarray) -> Tensor:
    """Multi-head attention; ``masked`` broadcasts to [B, h, Sq, Sk], true = blocked."""
    B, Sq, d = q_in.shape
    q = _split_heads(T.matmul(q_in, p[f"{prefix}.wq"]), heads)
    k = _split_heads(T.matmul(kv_in, p[f"{prefix}.wk"]), heads)
    v = _split_heads(T.matmul(kv_in, p[f"{prefix}.wv"]), heads)
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), float(1.0 / np.sqrt(d // heads)))
    weights = T.softmax(T.masked_fill(scores, masked, NEG_INF), axis=-1)
    ctx = T.reshape(T.transpose(T.matmul(weights, v), (0, 2, 1, 3)), (B, Sq, d))
    return T.matmul(ctx, p[f"{prefix}.wo"])


def _ffn_apply(p, prefix, x):
    h = T.relu(T.add(T.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    return T.add(T.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])


def encode(params, cfg: ModelConfig, enc: EncoderInput, rng=None) -> Tensor:
    """Encoder memory states [B, S, d]; padded slots are never attended to."""
    x = enc.vectors
    mask = enc.mask
    if x.ndim == 2:
        x = T.reshape(x, (1,) + x.shape)
        mask = mask[None]
    blocked = ~mask[:, None, None, :]
    x = T.dropout(x, cfg.dropout, rng)
    for i in range(cfg.enc_layers):
        pre = f"enc.{i}"
        h_in = _layer_norm(params, f"{pre}.ln1", x)
        h = attention(params, f"{pre}.self", h_in, h_in, cfg.heads, blocked)
        x = T.add(x, T.dropout(h, cfg.dropout, rng))
        h = _ffn_apply(params, f"{pre}.ff", _layer_norm(params, f"{pre}.ln2", x))
        x = T.add(x, T.dropout(h, cfg.dropout, rng))
    return _layer_norm(params, "enc.ln_f", x)


def _causal(T_len: int) -> np.ndarray:
    return np.triu(np.ones((T_len, T_len), bool), k=1)


def forward_teacher_forced(params, cfg: ModelConfig, memory: Tensor, mem_mask: np.ndarray,
                           targets, rng=None) -> Tensor:
    """Logits [B, T, V]; position t predicts token t+1 and sees only tokens <= t."""
    ids = np.asarray(targets, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    if mem_mask.ndim == 1:
        mem_mask = mem_mask[None]
    if memory.ndim == 2:
        memory = T.reshape(memory, (1,) + memory.shape)
    x = T.dropout(embed_text(params, ids), cfg.dropout, rng)
    self_block = _causal(ids.shape[1])[None, None]
    cross_block = ~mem_mask[:, None, None, :]
    for i in range(cfg.dec_layers):
        pre = f"dec.{i}"
        h_in = _layer_norm(params, f"{pre}.ln1", x)
        x = T.add(x, T.dropout(attention(params, f"{pre}.self", h_in, h_in, cfg.heads, self_block),
                               cfg.dropout, rng))
        h_in = _layer_norm(params, f"{pre}.ln2", x)
        x = T.add(x, T.dropout(attention(params, f"{pre}.cross", h_in, memory, cfg.heads, cross_block),
                               cfg.dropout, rng))
        h = _ffn_apply(params, f"{pre}.ff", _layer_norm(params, f"{pre}.ln3", x))
        x = T.add(x, T.dropout(h, cfg.dropout, rng))
    x = _layer_norm(params, "dec.ln_f", x)
    return T.add(T.matmul(x, params["out.w"]), params["out.b"])


# -- training ------------------------------------------------------------------

@dataclass(frozen=True)
class Example:
    """One training pair: encoder slots and the full target ``<s:l> ... </s>``."""

    item: EncoderItem
    target: tuple


def pad_targets(targets: Sequence[Sequence[int]], pad_id: int) -> np.ndarray:
    L = max(len(t) for t in targets)
    out = np.full((len(targets), L), pad_id, dtype=np.int64)
    for b, t in enumerate(targets):
        out[b, :len(t)] = t
    return out


def batch_loss(params, cfg: ModelConfig, table: ObjectLabelTable, batch: Sequence[Example],
               pad_id: int, rng=None) -> Tensor:
    """Mean token cross-entropy over every non-pad target position."""
    enc = embed_batch(params, table, [ex.item for ex in batch], pad_id)
    memory = encode(params, cfg, enc, rng)
    ids = pad_targets([ex.target for ex in batch], pad_id)
    logits = forward_teacher_forced(params, cfg, memory, enc.mask, ids[:, :-1], rng)
    gold = ids[:, 1:]
    return T.cross_entropy(logits, gold, gold == pad_id)


def stream(seed: int, a: int, b: int = 0) -> np.random.Generator:
    """Counter-based generator: the same (seed, a, b) always yields the same stream."""
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, a, b]))


DROPOUT_STREAM = 1
SHUFFLE_STREAM = 2


def train_step(params, cfg: ModelConfig, table: ObjectLabelTable, batch: Sequence[Example],
               train_cfg: TrainConfig, step: int, opt_state: OptimizerState,
               pad_id: int = 0) -> float:
    """One optimizer update at schedule position ``step``; returns the batch loss."""
    if not batch:
        raise ValueError("empty batch")
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    rng = stream(train_cfg.seed, DROPOUT_STREAM, step) if cfg.dropout > 0 else None
    with Tape() as tape:
        loss = batch_loss(params, cfg, table, batch, pad_id, rng)
    tape.backward(loss)
    grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    optimizer_step(opt_state, params, grads, train_cfg, step)
    for p in params.values():
        p.grad = None
        p.requires_grad = False
    return loss.item()


def batch_for_step(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices of the examples used at 1-based ``step`` (epoch-wise reshuffled)."""
    per_epoch = max(1, n // batch_size)
    epoch, k = divmod(step - 1, per_epoch)
    order = stream(seed, SHUFFLE_STREAM, epoch).permutation(n)
    return order[k * batch_size:(k + 1) * batch_size]


def train(params, cfg: ModelConfig, table: ObjectLabelTable, examples: Sequence[Example],
          train_cfg: TrainConfig, steps: int, pad_id: int = 0,
          opt_state: OptimizerState | None = None, start_step: int = 0,
          log: Callable[[int, float, float], None] | None = None) -> OptimizerState:
    from .optim import schedule_lr

    opt_state = opt_state or init_optimizer(train_cfg, params)
    for step in range(start_step + 1, start_step + steps + 1):
        idx = batch_for_step(len(examples), train_cfg.batch_size, train_cfg.seed, step)
        loss = train_step(params, cfg, table, [examples[i] for i in idx], train_cfg, step,
                          opt_state, pad_id)
        if log is not None:
            log(step, schedule_lr(train_cfg.schedule, step), loss)
    return opt_state


# -- decoding ------------------------------------------------------------------

def _order_key(score: float, seq: Sequence[int]):
    return (-score, tuple(seq), len(seq))


def beam_search_fn(step_fn: Callable[[list], np.ndarray], eos: int, cfg: DecodeConfig) -> list[int]:
    """Beam search over a next-token log-probability function.

    ``step_fn(prefixes)`` receives the generated tokens of each live
    hypothesis (all of equal length) and returns log-probabilities
    [len(prefixes), V].  Hypotheses end at ``eos`` or after ``max_len``
    tokens; the best finished one wins, ties going to lower token ids, then
    to the shorter sequence.
    """
    live: list[tuple[float, list[int]]] = [(0.0, [])]
    finished: list[tuple[float, list[int]]] = []
    k = cfg.beam_width
    for t in range(cfg.max_len):
        logp = np.asarray(step_fn([seq for _, seq in live]), dtype=np.float64)
        total = np.array([s for s, _ in live])[:, None] + logp
        flat = total.ravel()
        if flat.size > k:
            kth = np.partition(flat, flat.size - k)[flat.size - k]
            picked = np.flatnonzero(flat >= kth)
        else:
            picked = np.arange(flat.size)
        V = logp.shape[1]
        cands = [(float(flat[j]), live[j // V][1] + [int(j % V)]) for j in picked]
        cands.sort(key=lambda c: _order_key(*c))
        cands = cands[:k]
        live = []
        for score, seq in cands:
            if seq[-1] == eos or t == cfg.max_len - 1:
                finished.append((score, seq))
            else:
                live.append((score, seq))
        if not live:
            break
        best_done = max((s for s, _ in finished), default=None)
        if best_done is not None and best_done > max(s for s, _ in live):
            break
    finished.sort(key=lambda c: _order_key(*c))
    return finished[0][1]


def greedy_fn(step_fn: Callable[[list], np.ndarray], eos: int, max_len: int) -> list[int]:
    seq: list[int] = []
    for _ in range(max_len):
        tok = int(np.argmax(step_fn([seq])[0]))
        seq.append(tok)
        if tok == eos:
            break
    return seq


def model_step_fn(params, cfg: ModelConfig, memory: Tensor, mem_mask: np.ndarray, sos: int):
    mem = memory.data if memory.ndim == 3 else memory.data[None]
    mask = mem_mask if mem_mask.ndim == 2 else mem_mask[None]

    def step(prefixes):
        n = len(prefixes)
        ids = np.array([[sos] + list(p) for p in prefixes], dtype=np.int64)
        mem_n = Tensor(np.broadcast_to(mem, (n,) + mem.shape[1:]))
        mask_n = np.broadcast_to(mask, (n, mask.shape[1]))
        logits = forward_teacher_forced(params, cfg, mem_n, mask_n, ids)
        return T.log_softmax(Tensor(logits.data[:, -1, :].astype(np.float64))).data

    return step


def beam_search(params, cfg: ModelConfig, memory: Tensor, mem_mask: np.ndarray,
                dcfg: DecodeConfig, sos: int, eos: int) -> list[int]:
    return beam_search_fn(model_step_fn(params, cfg, memory, mem_mask, sos), eos, dcfg)


def generate(params, cfg: ModelConfig, table: ObjectLabelTable, image, labels, lang: str,
             dcfg: DecodeConfig, sos: int, eos: int, src_text_ids=None) -> list[int]:
    """Raw generated tokens (ending in ``eos`` unless ``max_len`` was hit)."""
    item = make_item(image, labels, lang, src_text_ids)
    enc = embed_batch(params, table, [item])
    memory = encode(params, cfg, enc)
    return beam_search(params, cfg, memory, enc.mask, dcfg, sos, eos)


# -- checkpoints ---------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    step: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)
    opt_state: Optional[OptimizerState] = None


def _record(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    head = struct.pack("<Q", len(raw)) + raw + struct.pack("<Q", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def dumps_checkpoint(ckpt: Checkpoint) -> bytes:
    conf = dict(ckpt.config.to_dict())
    conf["step"] = ckpt.step
    conf["seed"] = ckpt.seed
    if ckpt.opt_state is not None:
        conf["opt_kind"] = ckpt.opt_state.kind
        conf["opt_t"] = ckpt.opt_state.t
    for k, v in ckpt.meta.items():
        conf[f"meta.{k}"] = v
    lines = "".join(f"{k}={v}\n" for k, v in conf.items())
    out = [CKPT_MAGIC, lines.encode("utf-8"), b"\n"]
    for name, t in ckpt.params.items():
        out.append(_record(name, t.data))
    if ckpt.opt_state is not None:
        for name, arr in ckpt.opt_state.m.items():
            out.append(_record(f"opt.m/{name}", arr))
        for name, arr in ckpt.opt_state.v.items():
            out.append(_record(f"opt.v/{name}", arr))
    return b"".join(out)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps_checkpoint(ckpt))


def loads_checkpoint(raw: bytes) -> Checkpoint:
    if not raw.startswith(CKPT_MAGIC):
        raise CheckpointError("missing PLGS-CKPT header")
    end = raw.find(b"\n\n", len(CKPT_MAGIC) - 1)
    if end < 0:
        raise CheckpointError("unterminated config block")
    conf = {}
    for line in raw[len(CKPT_MAGIC):end + 1].decode("utf-8").splitlines():
        if line:
            k, _, v = line.partition("=")
            conf[k] = v
    pos = end + 2
    params, m, v = {}, {}, {}
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise CheckpointError("trailing bytes after the last record")
        (n,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        name = raw[pos:pos + n].decode("utf-8")
        pos += n
        try:
            (rank,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            dims = struct.unpack_from(f"<{rank}Q", raw, pos)
        except struct.error:
            raise CheckpointError(f"record {name!r} has a truncated header") from None
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        if pos + 4 * count > len(raw):
            raise CheckpointError(f"record {name!r} is truncated")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(dims)
        arr = arr.astype(np.float32)
        pos += 4 * count
        if name.startswith("opt.m/"):
            m[name[6:]] = arr
        elif name.startswith("opt.v/"):
            v[name[6:]] = arr
        else:
            params[name] = Tensor(arr, name=name)
    opt = None
    if "opt_kind" in conf:
        opt = OptimizerState(conf["opt_kind"], m, v, int(conf["opt_t"]))
    meta = {k[5:]: val for k, val in conf.items() if k.startswith("meta.")}
    return Checkpoint(ModelConfig.from_dict(conf), params, int(conf.get("step", 0)),
                      int(conf.get("seed", 0)), meta, opt)


def load_checkpoint(path) -> Checkpoint:
    return loads_checkpoint(Path(path).read_bytes())

"""Functional micro Transformer encoder-decoder over SMILES tokens.

Parameters live in a flat, ordered ``ParameterSet`` of named tensors rather than in
``nn.Module`` objects, so optimizers, checkpoints and gradient checks can treat the
whole model as one dictionary. Gradients come from torch autograd.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .smiles import tokenize
from .utils import atomic_write_bytes

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class ModelError(Exception):
    pass


class ConfigError(ModelError):
    pass


class SequenceTooLong(ModelError):
    pass


class CheckpointError(ModelError):
    pass


class IoError(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ChecksumMismatch(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_layers: int = 2
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    max_seq_len: int = 64
    dropout_rate: float = 0.1
    layernorm_epsilon: float = 1e-5
    label_smoothing: float = 0.0
    dtype: str = "float32"

    def validate(self) -> None:
        if self.vocab_size <= len(RESERVED):
            raise ConfigError("vocabulary must hold at least one non-reserved token")
        if min(self.num_layers, self.model_dim, self.num_heads, self.ffn_dim, self.max_seq_len) < 1:
            raise ConfigError("layer counts and dimensions must be positive")
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")

    @classmethod
    def paper_scale(cls, vocab_size: int) -> ModelConfig:
        # heads and FFN width are our assumption; layers, width and length are the published values
        return cls(vocab_size, num_layers=3, model_dim=500, num_heads=10, ffn_dim=2048,
                   max_seq_len=200, dropout_rate=0.1)

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]


class Vocabulary:
    """Token <-> id map with the four reserved ids PAD, BOS, EOS, UNK first."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        for tok in tokens:
            if tok in RESERVED:
                raise ValueError(f"token {tok!r} collides with a reserved symbol")
            if tok not in self.itos:
                self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, texts: Iterable[str]) -> Vocabulary:
        seen = set()
        for text in texts:
            seen.update(tokenize(text))
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i] if i != UNK else "?")
        return "".join(out)

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.itos[len(RESERVED):])

    @classmethod
    def from_text(cls, text: str) -> Vocabulary:
        return cls(line for line in text.splitlines() if line)


@dataclass
class ParameterSet:
    tensors: dict[str, torch.Tensor]
    step: int = 0

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def clone(self) -> ParameterSet:
        return ParameterSet({k: v.detach().clone() for k, v in self.tensors.items()}, self.step)

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in self.tensors.values())

    def equal(self, other: ParameterSet) -> bool:
        return self.names() == other.names() and all(
            torch.equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


@dataclass
class LossValue:
    total: float
    token_count: int

    @property
    def mean(self) -> float:
        return self.total / self.token_count

    @property
    def perplexity(self) -> float:
        return math.exp(self.mean)


# -- parameters -----------------------------------------------------------------


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, v = cfg.model_dim, cfg.ffn_dim, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embedding": (v, d)}

    def attn(prefix: str) -> None:
        for proj in "qkvo":
            shapes[f"{prefix}.{proj}.weight"] = (d, d)
            shapes[f"{prefix}.{proj}.bias"] = (d,)

    def norm(prefix: str) -> None:
        shapes[f"{prefix}.scale"] = (d,)
        shapes[f"{prefix}.offset"] = (d,)

    def ffn(prefix: str) -> None:
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)

    for i in range(cfg.num_layers):
        norm(f"enc.{i}.ln1")
        attn(f"enc.{i}.self_attn")
        norm(f"enc.{i}.ln2")
        ffn(f"enc.{i}.ffn")
    norm("enc.final_ln")
    for i in range(cfg.num_layers):
        norm(f"dec.{i}.ln1")
        attn(f"dec.{i}.self_attn")
        norm(f"dec.{i}.ln2")
        attn(f"dec.{i}.cross_attn")
        norm(f"dec.{i}.ln3")
        ffn(f"dec.{i}.ffn")
    norm("dec.final_ln")
    shapes["output.weight"] = (d, v)
    shapes["output.bias"] = (v,)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> ParameterSet:
    cfg.validate()
    gen = torch.Generator().manual_seed(seed)
    tensors = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".scale"):
            t = torch.ones(shape, dtype=torch.float64)
        elif len(shape) == 1:
            t = torch.zeros(shape, dtype=torch.float64)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            t = (torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound
        tensors[name] = t.to(cfg.torch_dtype)
    return ParameterSet(tensors)


# -- forward ----------------------------------------------------------------------


@lru_cache(maxsize=64)
def positional_encoding(length: int, dim: int, dtype: torch.dtype) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe.to(dtype)


def _layer_norm(x, p, prefix, eps):
    return F.layer_norm(x, x.shape[-1:], p[f"{prefix}.scale"], p[f"{prefix}.offset"], eps)


def _dropout(x, rate, train):
    return F.dropout(x, rate, training=True) if train and rate else x


def _attention(p, prefix, q_in, kv_in, mask, heads, rate, train):
    b, tq, d = q_in.shape
    tk = kv_in.shape[1]
    dh = d // heads
    q = (q_in @ p[f"{prefix}.q.weight"] + p[f"{prefix}.q.bias"]).view(b, tq, heads, dh).transpose(1, 2)
    k = (kv_in @ p[f"{prefix}.k.weight"] + p[f"{prefix}.k.bias"]).view(b, tk, heads, dh).transpose(1, 2)
    v = (kv_in @ p[f"{prefix}.v.weight"] + p[f"{prefix}.v.bias"]).view(b, tk, heads, dh).transpose(1, 2)
    # mask marks positions to hide; the fused kernel wants positions to keep
    out = F.scaled_dot_product_attention(q, k, v, attn_mask=~mask, dropout_p=rate if train else 0.0)
    out = out.transpose(1, 2).reshape(b, tq, d)
    return out @ p[f"{prefix}.o.weight"] + p[f"{prefix}.o.bias"]


def _ffn(p, prefix, x, rate, train):
    h = _dropout(torch.relu(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]), rate, train)
    return h @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]


def _embed(p, cfg, ids, rate, train):
    x = p["embedding"][ids] * math.sqrt(cfg.model_dim)
    x = x + positional_encoding(ids.shape[1], cfg.model_dim, x.dtype)
    return _dropout(x, rate, train)


def encode(params: ParameterSet, cfg: ModelConfig, src: torch.Tensor, train: bool = False):
    """Encoder memory and key-padding mask for a (batch, length) id tensor."""
    p = params.tensors
    rate = cfg.dropout_rate
    pad = (src == PAD)[:, None, None, :]
    x = _embed(p, cfg, src, rate, train)
    eps = cfg.layernorm_epsilon
    for i in range(cfg.num_layers):
        h = _layer_norm(x, p, f"enc.{i}.ln1", eps)
        x = x + _dropout(_attention(p, f"enc.{i}.self_attn", h, h, pad, cfg.num_heads, rate, train), rate, train)
        h = _layer_norm(x, p, f"enc.{i}.ln2", eps)
        x = x + _dropout(_ffn(p, f"enc.{i}.ffn", h, rate, train), rate, train)
    return _layer_norm(x, p, "enc.final_ln", eps), pad


def decode(params: ParameterSet, cfg: ModelConfig, memory, src_pad, tgt_in: torch.Tensor, train: bool = False):
    """Logits (batch, length, vocab) for teacher-forced decoder input ``tgt_in``."""
    p = params.tensors
    rate = cfg.dropout_rate
    t = tgt_in.shape[1]
    causal = torch.triu(torch.ones(t, t, dtype=torch.bool), diagonal=1)[None, None]
    x = _embed(p, cfg, tgt_in, rate, train)
    eps = cfg.layernorm_epsilon
    for i in range(cfg.num_layers):
        h = _layer_norm(x, p, f"dec.{i}.ln1", eps)
        x = x + _dropout(_attention(p, f"dec.{i}.self_attn", h, h, causal, cfg.num_heads, rate, train), rate, train)
        h = _layer_norm(x, p, f"dec.{i}.ln2", eps)
        x = x + _dropout(_attention(p, f"dec.{i}.cross_attn", h, memory, src_pad, cfg.num_heads, rate, train), rate, train)
        h = _layer_norm(x, p, f"dec.{i}.ln3", eps)
        x = x + _dropout(_ffn(p, f"dec.{i}.ffn", h, rate, train), rate, train)
    x = _layer_norm(x, p, "dec.final_ln", eps)
    return x @ p["output.weight"] + p["output.bias"]


def _as_batch(ids) -> torch.Tensor:
    t = torch.as_tensor(ids, dtype=torch.long)
    return t.unsqueeze(0) if t.dim() == 1 else t


def forward(params: ParameterSet, cfg: ModelConfig, src, tgt_in, train: bool = False):
    """Logits for each target position; 1-D inputs give a (len, vocab) result.

    ``train=True`` switches dropout on, drawing from torch's global generator; the
    default evaluation mode is deterministic.
    """
    squeeze = torch.as_tensor(src).dim() == 1
    src_t, tgt_t = _as_batch(src), _as_batch(tgt_in)
    for t in (src_t, tgt_t):
        if t.shape[1] > cfg.max_seq_len:
            raise SequenceTooLong(f"sequence of length {t.shape[1]} exceeds max_seq_len {cfg.max_seq_len}")
        if t.numel() and int(t.max()) >= cfg.vocab_size:
            raise ModelError("token id outside the vocabulary")
    memory, pad = encode(params, cfg, src_t, train)
    logits = decode(params, cfg, memory, pad, tgt_t, train)
    return logits[0] if squeeze else logits


class IncrementalDecoder:
    """Step-wise decoder state for search: encoder memory plus per-layer key/value caches.

    ``step`` returns log-probabilities for the next token of every live row and must
    agree with teacher-forced ``decode`` on the same prefix.
    """

    def __init__(self, params: ParameterSet, cfg: ModelConfig, src: torch.Tensor):
        self.p, self.cfg = params.tensors, cfg
        memory, self.src_pad = encode(params, cfg, src)
        b, s, d = memory.shape
        h = cfg.num_heads
        self.cross = []
        for i in range(cfg.num_layers):
            pre = f"dec.{i}.cross_attn"
            k = (memory @ self.p[f"{pre}.k.weight"] + self.p[f"{pre}.k.bias"]).view(b, s, h, d // h).transpose(1, 2)
            v = (memory @ self.p[f"{pre}.v.weight"] + self.p[f"{pre}.v.bias"]).view(b, s, h, d // h).transpose(1, 2)
            self.cross.append((k, v))
        self.self_kv: list[tuple[torch.Tensor, torch.Tensor] | None] = [None] * cfg.num_layers
        self.length = 0

    def reorder(self, index: torch.Tensor) -> None:
        """Keep rows ``index`` (with repetition) of every cached tensor."""
        self.src_pad = self.src_pad.index_select(0, index)
        self.cross = [(k.index_select(0, index), v.index_select(0, index)) for k, v in self.cross]
        self.self_kv = [
            None if kv is None else (kv[0].index_select(0, index), kv[1].index_select(0, index))
            for kv in self.self_kv
        ]

    def step(self, tokens: torch.Tensor) -> torch.Tensor:
        p, cfg = self.p, self.cfg
        if self.length >= cfg.max_seq_len:
            raise SequenceTooLong("decoder reached max_seq_len")
        b = tokens.shape[0]
        d, h = cfg.model_dim, cfg.num_heads
        dh = d // h
        eps = cfg.layernorm_epsilon
        x = p["embedding"][tokens].unsqueeze(1) * math.sqrt(d)
        x = x + positional_encoding(self.length + 1, d, x.dtype)[self.length]
        for i in range(cfg.num_layers):
            hdn = _layer_norm(x, p, f"dec.{i}.ln1", eps)
            pre = f"dec.{i}.self_attn"
            q = (hdn @ p[f"{pre}.q.weight"] + p[f"{pre}.q.bias"]).view(b, 1, h, dh).transpose(1, 2)
            k = (hdn @ p[f"{pre}.k.weight"] + p[f"{pre}.k.bias"]).view(b, 1, h, dh).transpose(1, 2)
            v = (hdn @ p[f"{pre}.v.weight"] + p[f"{pre}.v.bias"]).view(b, 1, h, dh).transpose(1, 2)
            if self.self_kv[i] is not None:
                k = torch.cat([self.self_kv[i][0], k], dim=2)
                v = torch.cat([self.self_kv[i][1], v], dim=2)
            self.self_kv[i] = (k, v)
            att = torch.softmax((q @ k.transpose(-2, -1)) / math.sqrt(dh), dim=-1) @ v
            x = x + att.transpose(1, 2).reshape(b, 1, d) @ p[f"{pre}.o.weight"] + p[f"{pre}.o.bias"]
            hdn = _layer_norm(x, p, f"dec.{i}.ln2", eps)
            pre = f"dec.{i}.cross_attn"
            q = (hdn @ p[f"{pre}.q.weight"] + p[f"{pre}.q.bias"]).view(b, 1, h, dh).transpose(1, 2)
            ck, cv = self.cross[i]
            scores = ((q @ ck.transpose(-2, -1)) / math.sqrt(dh)).masked_fill(self.src_pad, float("-inf"))
            att = torch.softmax(scores, dim=-1) @ cv
            x = x + att.transpose(1, 2).reshape(b, 1, d) @ p[f"{pre}.o.weight"] + p[f"{pre}.o.bias"]
            hdn = _layer_norm(x, p, f"dec.{i}.ln3", eps)
            x = x + _ffn(p, f"dec.{i}.ffn", hdn, 0.0, False)
        x = _layer_norm(x, p, "dec.final_ln", eps)
        self.length += 1
        logits = x[:, 0] @ p["output.weight"] + p["output.bias"]
        return torch.log_softmax(logits, dim=-1)


# -- loss ---------------------------------------------------------------------------


@dataclass
class Batch:
    src: torch.Tensor
    tgt_in: torch.Tensor
    tgt_out: torch.Tensor

    @property
    def token_count(self) -> int:
        return int((self.tgt_out != PAD).sum())

    @property
    def size(self) -> int:
        return self.src.shape[0]


def make_batch(pairs: Sequence[tuple[Sequence[int], Sequence[int]]], max_seq_len: int | None = None) -> Batch:
    """Pad (src, tgt) id pairs; teacher forcing uses BOS+tgt as input and tgt+EOS as output."""
    if not pairs:
        raise ModelError("empty batch")
    s_len = max(len(s) for s, _ in pairs)
    t_len = max(len(t) for _, t in pairs) + 1
    if max_seq_len is not None and max(s_len, t_len) > max_seq_len:
        raise SequenceTooLong(f"batch needs length {max(s_len, t_len)} > max_seq_len {max_seq_len}")
    src = torch.full((len(pairs), s_len), PAD, dtype=torch.long)
    tin = torch.full((len(pairs), t_len), PAD, dtype=torch.long)
    tout = torch.full((len(pairs), t_len), PAD, dtype=torch.long)
    for i, (s, t) in enumerate(pairs):
        src[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        tin[i, 0] = BOS
        tin[i, 1 : len(t) + 1] = torch.as_tensor(list(t), dtype=torch.long)
        tout[i, : len(t)] = torch.as_tensor(list(t), dtype=torch.long)
        tout[i, len(t)] = EOS
    return Batch(src, tin, tout)


def batch_nll(params: ParameterSet, cfg: ModelConfig, batch: Batch, train: bool = False, smoothing: float = 0.0):
    """Token-summed negative log-likelihood of ``batch`` as a differentiable scalar."""
    if batch.src.shape[1] > cfg.max_seq_len or batch.tgt_in.shape[1] > cfg.max_seq_len:
        raise SequenceTooLong("batch exceeds max_seq_len")
    memory, pad = encode(params, cfg, batch.src, train)
    logits = decode(params, cfg, memory, pad, batch.tgt_in, train)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        batch.tgt_out.reshape(-1),
        ignore_index=PAD,
        reduction="sum",
        label_smoothing=smoothing,
    )


def loss_and_grad(
    params: ParameterSet,
    cfg: ModelConfig,
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]] | Batch,
    train: bool = False,
) -> tuple[LossValue, dict[str, torch.Tensor]]:
    """Token-summed NLL and its exact gradient with respect to every parameter tensor."""
    batch = pairs if isinstance(pairs, Batch) else make_batch(pairs, cfg.max_seq_len)
    leaves = {k: v.detach().requires_grad_(True) for k, v in params.tensors.items()}
    live = ParameterSet(leaves, params.step)
    loss = batch_nll(live, cfg, batch, train, cfg.label_smoothing)
    grads = torch.autograd.grad(loss, list(leaves.values()), allow_unused=True)
    out = {
        k: (g if g is not None else torch.zeros_like(leaves[k])).detach()
        for k, g in zip(leaves, grads)
    }
    return LossValue(float(loss.detach()), batch.token_count), out


@torch.no_grad()
def evaluate_nll(params: ParameterSet, cfg: ModelConfig, batches: Iterable[Batch]) -> LossValue:
    total, count = 0.0, 0
    for batch in batches:
        total += float(batch_nll(params, cfg, batch))
        count += batch.token_count
    return LossValue(total, count)


# -- checkpoints -------------------------------------------------------------------

MAGIC = b"RTXCKPT\x00"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: ParameterSet
    config: ModelConfig
    vocab: Vocabulary
    moments: dict[str, torch.Tensor] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _block(data: bytes) -> bytes:
    return struct.pack("<Q", len(data)) + data


def save_checkpoint(
    params: ParameterSet,
    cfg: ModelConfig,
    vocab: Vocabulary,
    path: str | Path,
    moments: dict[str, torch.Tensor] | None = None,
    meta: dict | None = None,
) -> None:
    """Write a versioned binary checkpoint.

    Layout: magic, u32 version, length-prefixed JSON header (precision, step, meta),
    config block, vocabulary block, u32 tensor count, then per tensor a length-prefixed
    name, u32 rank, u64 dims and little-endian IEEE-754 data; a SHA-256 of all preceding
    bytes closes the file.
    """
    tensors = dict(params.tensors)
    for k, v in (moments or {}).items():
        tensors[f"moment.{k}"] = v
    header = {"precision": cfg.dtype, "step": params.step, "meta": meta or {}}
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    out += _block(json.dumps(header, sort_keys=True).encode())
    out += _block(json.dumps(asdict(cfg), sort_keys=True).encode())
    out += _block(vocab.to_text().encode())
    out += struct.pack("<I", len(tensors))
    for name, t in tensors.items():
        arr = t.detach().to(cfg.torch_dtype).contiguous().numpy()
        raw = name.encode()
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += _block(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    out += hashlib.sha256(out).digest()
    try:
        atomic_write_bytes(path, bytes(out))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ChecksumMismatch("checkpoint truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def block(self) -> bytes:
        (n,) = self.unpack("<Q")
        return self.take(n)


def load_checkpoint(path: str | Path, expect_config: ModelConfig | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if not data.startswith(MAGIC):
        if MAGIC.startswith(data):
            raise ChecksumMismatch(f"{path} is truncated")
        raise VersionMismatch(f"{path} is not a checkpoint file")
    if len(data) < len(MAGIC) + 4 + 32:
        raise ChecksumMismatch(f"{path} is truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch(f"{path} failed its checksum (truncated or corrupted)")
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    header = json.loads(r.block())
    cfg = ModelConfig(**json.loads(r.block()))
    vocab = Vocabulary.from_text(r.block().decode())
    if expect_config is not None and cfg != expect_config:
        raise VersionMismatch(f"checkpoint config {cfg} differs from run config {expect_config}")
    np_dtype = np.dtype(header["precision"]).newbyteorder("<")
    (count,) = r.unpack("<I")
    tensors, moments = {}, {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        arr = np.frombuffer(r.block(), dtype=np_dtype).reshape(shape)
        t = torch.from_numpy(arr.astype(np_dtype.newbyteorder("="))).clone()
        if name.startswith("moment."):
            moments[name[len("moment."):]] = t
        else:
            tensors[name] = t
    return Checkpoint(ParameterSet(tensors, header["step"]), cfg, vocab, moments, header.get("meta", {}))

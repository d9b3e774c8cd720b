"""Small encoder-decoder transformer for token-id translation tasks.

Post-norm architecture (self-attention / cross-attention / feed-forward
sublayers, each followed by residual + layer norm), learned positional
embeddings, shared input embedding between encoder and decoder, untied
output projection. Sequences follow the multilingual convention: the
first source and target token is a language-id token, the last is eos.

Training is teacher-forced: the decoder input is the target sequence
without its final token and the loss averages the gold-token negative
log-probabilities over non-pad positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from . import tensor as T
from .params import ParamStore
from .tensor import MASK_NEG, Tensor, no_grad
from .vocab import EOS, PAD


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    model_dim: int = 64
    ffn_dim: int = 128
    heads: int = 4
    vocab_size: int = 0
    max_len: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "model_dim": self.model_dim,
            "ffn_dim": self.ffn_dim,
            "heads": self.heads,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class Batch:
    """Padded token matrices plus float pad masks (1 = real token)."""

    src: np.ndarray  # (B, S) int64
    tgt: np.ndarray  # (B, T) int64
    src_mask: np.ndarray  # (B, S) float64
    tgt_mask: np.ndarray  # (B, T) float64

    @property
    def size(self) -> int:
        return self.src.shape[0]


def collate(pairs: list[tuple[list[int], list[int]]]) -> Batch:
    """Pad a list of (src, tgt) token-id sequences into a Batch."""
    if not pairs:
        raise ValueError("collate: empty batch")
    bsz = len(pairs)
    smax = max(len(p[0]) for p in pairs)
    tmax = max(len(p[1]) for p in pairs)
    src = np.full((bsz, smax), PAD, dtype=np.int64)
    tgt = np.full((bsz, tmax), PAD, dtype=np.int64)
    src_mask = np.zeros((bsz, smax))
    tgt_mask = np.zeros((bsz, tmax))
    for i, (s, t) in enumerate(pairs):
        src[i, : len(s)] = s
        tgt[i, : len(t)] = t
        src_mask[i, : len(s)] = 1.0
        tgt_mask[i, : len(t)] = 1.0
    return Batch(src, tgt, src_mask, tgt_mask)


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed: int) -> ParamStore:
    """Scaled-uniform init; every array drawn from a stream keyed by its name."""
    store = ParamStore()

    def glorot(name, fan_in, fan_out, shape):
        r = rngmod.stream(seed, "init", name)
        store.add(name, _uniform(r, shape, (6.0 / (fan_in + fan_out)) ** 0.5))

    def emb(name, rows, dim):
        r = rngmod.stream(seed, "init", name)
        store.add(name, _uniform(r, (rows, dim), dim**-0.5))

    def zeros(name, shape):
        store.add(name, np.zeros(shape))

    def ones(name, shape):
        store.add(name, np.ones(shape))

    d, f, v = cfg.model_dim, cfg.ffn_dim, cfg.vocab_size
    emb("emb.token", v, d)
    emb("emb.enc_pos", cfg.max_len, d)
    emb("emb.dec_pos", cfg.max_len, d)

    def attn_block(prefix):
        for part in ("wq", "wk", "wv", "wo"):
            glorot(f"{prefix}.{part}", d, d, (d, d))
        for part in ("bq", "bk", "bv", "bo"):
            zeros(f"{prefix}.{part}", (d,))

    def ffn_block(prefix):
        glorot(f"{prefix}.w1", d, f, (d, f))
        zeros(f"{prefix}.b1", (f,))
        glorot(f"{prefix}.w2", f, d, (f, d))
        zeros(f"{prefix}.b2", (d,))

    def norm_block(prefix):
        ones(f"{prefix}.gain", (d,))
        zeros(f"{prefix}.bias", (d,))

    for i in range(cfg.layers):
        attn_block(f"encoder.layer{i}.attn")
        norm_block(f"encoder.layer{i}.norm1")
        ffn_block(f"encoder.layer{i}.ffn")
        norm_block(f"encoder.layer{i}.norm2")
    for i in range(cfg.layers):
        attn_block(f"decoder.layer{i}.self_attn")
        norm_block(f"decoder.layer{i}.norm1")
        attn_block(f"decoder.layer{i}.cross_attn")
        norm_block(f"decoder.layer{i}.norm2")
        ffn_block(f"decoder.layer{i}.ffn")
        norm_block(f"decoder.layer{i}.norm3")
    glorot("out.weight", d, v, (d, v))
    zeros("out.bias", (v,))
    return store


def _key_pad_bias(mask: np.ndarray) -> np.ndarray:
    """(B, L) pad mask -> (B, 1, 1, L) additive attention bias."""
    return np.where(mask[:, None, None, :] > 0, 0.0, MASK_NEG)


def _causal_bias(length: int) -> np.ndarray:
    bias = np.triu(np.full((length, length), MASK_NEG), k=1)
    return bias[None, None, :, :]


class Seq2SeqModel:
    """Transformer parameters plus the forward passes built on them.

    `frozen_names` marks parameters that optimizers must not update and
    that region search pins to their current values (norm layers,
    embedding layers, ...). The set travels with the model.
    """

    def __init__(self, cfg: ModelConfig, params: ParamStore, frozen_names=()):
        self.cfg = cfg
        self.params = params
        self.frozen_names = set(frozen_names)

    @classmethod
    def build(cls, cfg: ModelConfig, seed: int) -> "Seq2SeqModel":
        return cls(cfg, init_params(cfg, seed))

    def copy(self) -> "Seq2SeqModel":
        return Seq2SeqModel(self.cfg, self.params.copy(), set(self.frozen_names))

    # ------------------------------------------------------------------
    # forward passes

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _dropout(self, x, rng):
        if rng is None or self.cfg.dropout == 0.0:
            return x
        return T.dropout(x, self.cfg.dropout, rng)

    def _attention(self, prefix, q_in, kv_in, bias, rng):
        d, h = self.cfg.model_dim, self.cfg.heads
        dh = d // h
        bsz, lq = q_in.shape[0], q_in.shape[1]
        lk = kv_in.shape[1]

        def proj(x, w, b, length):
            y = T.add(T.matmul(x, self._p(w)), self._p(b))
            y = T.reshape(y, (bsz, length, h, dh))
            return T.transpose(y, (0, 2, 1, 3))  # (B, H, L, dh)

        q = proj(q_in, f"{prefix}.wq", f"{prefix}.bq", lq)
        k = proj(kv_in, f"{prefix}.wk", f"{prefix}.bk", lk)
        v = proj(kv_in, f"{prefix}.wv", f"{prefix}.bv", lk)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), dh**-0.5)
        scores = T.add(scores, Tensor(bias))
        weights = T.softmax(scores, axis=-1)
        ctx = T.matmul(weights, v)  # (B, H, Lq, dh)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (bsz, lq, d))
        out = T.add(T.matmul(ctx, self._p(f"{prefix}.wo")), self._p(f"{prefix}.bo"))
        return self._dropout(out, rng)

    def _ffn(self, prefix, x, rng):
        hidden = T.relu(T.add(T.matmul(x, self._p(f"{prefix}.w1")), self._p(f"{prefix}.b1")))
        out = T.add(T.matmul(hidden, self._p(f"{prefix}.w2")), self._p(f"{prefix}.b2"))
        return self._dropout(out, rng)

    def _norm(self, prefix, x):
        return T.layer_norm(x, self._p(f"{prefix}.gain"), self._p(f"{prefix}.bias"))

    def _embed(self, ids: np.ndarray, pos_name: str, rng):
        length = ids.shape[1]
        if length > self.cfg.max_len:
            raise ValueError(f"sequence length {length} exceeds max_len {self.cfg.max_len}")
        tok = T.embedding(self._p("emb.token"), ids)
        pos = T.embedding(self._p(pos_name), np.arange(length)[None, :])
        return self._dropout(T.add(tok, pos), rng)

    def encode(self, src: np.ndarray, src_mask: np.ndarray, rng=None) -> Tensor:
        x = self._embed(src, "emb.enc_pos", rng)
        bias = _key_pad_bias(src_mask)
        for i in range(self.cfg.layers):
            p = f"encoder.layer{i}"
            x = self._norm(f"{p}.norm1", T.add(x, self._attention(f"{p}.attn", x, x, bias, rng)))
            x = self._norm(f"{p}.norm2", T.add(x, self._ffn(f"{p}.ffn", x, rng)))
        return x

    def decode_hidden(self, dec_in, enc_out, src_mask, dec_mask, rng=None) -> Tensor:
        y = self._embed(dec_in, "emb.dec_pos", rng)
        self_bias = _causal_bias(dec_in.shape[1]) + _key_pad_bias(dec_mask)
        cross_bias = _key_pad_bias(src_mask)
        for i in range(self.cfg.layers):
            p = f"decoder.layer{i}"
            y = self._norm(
                f"{p}.norm1", T.add(y, self._attention(f"{p}.self_attn", y, y, self_bias, rng))
            )
            y = self._norm(
                f"{p}.norm2",
                T.add(y, self._attention(f"{p}.cross_attn", y, enc_out, cross_bias, rng)),
            )
            y = self._norm(f"{p}.norm3", T.add(y, self._ffn(f"{p}.ffn", y, rng)))
        return y

    def output_logits(self, hidden: Tensor) -> Tensor:
        return T.add(T.matmul(hidden, self._p("out.weight")), self._p("out.bias"))

    def batch_logits(self, batch: Batch, rng=None) -> Tensor:
        """Teacher-forced logits over the gold prefix: (B, T-1, V)."""
        self._check_ids(batch)
        enc = self.encode(batch.src, batch.src_mask, rng)
        dec_in = batch.tgt[:, :-1]
        dec_mask = batch.tgt_mask[:, :-1]
        hidden = self.decode_hidden(dec_in, enc, batch.src_mask, dec_mask, rng)
        return self.output_logits(hidden)

    def _check_ids(self, batch: Batch) -> None:
        v = self.cfg.vocab_size
        for name, ids in (("src", batch.src), ("tgt", batch.tgt)):
            if ids.size and (ids.min() < 0 or ids.max() >= v):
                raise ValueError(f"{name} token id out of range [0, {v})")

    def loss(self, batch: Batch, rng=None) -> Tensor:
        """Mean gold-token negative log-probability over non-pad positions."""
        logits = self.batch_logits(batch, rng)
        return loss_from_logits(logits, batch)

    def forward_logits(self, batch: Batch, rng=None) -> np.ndarray:
        """Teacher-forced next-token probability rows, (B, T-1, V)."""
        with no_grad():
            return T.softmax(self.batch_logits(batch, rng), axis=-1).data

    def per_example_log_likelihood(self, batch: Batch, rng=None) -> Tensor:
        """Sum of gold-token log-probabilities per example, shape (B,)."""
        logits = self.batch_logits(batch, rng)
        lp = T.log_softmax(logits, axis=-1)
        gathered = T.cross_entropy_gather(lp, batch.tgt[:, 1:])
        return T.tsum(T.mul(gathered, Tensor(batch.tgt_mask[:, 1:])), axis=1)

    # ------------------------------------------------------------------
    # decoding

    def decode_logits(self, prefix: np.ndarray, enc_out: Tensor, src_mask: np.ndarray):
        """Logits (B, L, V) for a decoder prefix during incremental decoding."""
        dec_mask = np.ones(prefix.shape, dtype=np.float64)
        hidden = self.decode_hidden(prefix, enc_out, src_mask, dec_mask)
        return self.output_logits(hidden).data

    # ------------------------------------------------------------------
    # vocabulary extension

    def extend_vocabulary(self, new_tokens: int, seed: int) -> "Seq2SeqModel":
        """Append embedding rows / output columns for new token ids.

        Existing parameter values are copied bit-for-bit; new rows are
        seed-initialized from streams keyed by the old vocabulary size.
        """
        if new_tokens < 0:
            raise ValueError("new_tokens must be >= 0")
        if new_tokens == 0:
            return self.copy()
        d = self.cfg.model_dim
        old_v = self.cfg.vocab_size
        new_cfg = ModelConfig(**{**self.cfg.to_dict(), "vocab_size": old_v + new_tokens})
        store = self.params.copy()
        r_emb = rngmod.stream(seed, "extend", "emb.token", old_v)
        emb_new = np.concatenate(
            [store["emb.token"].data, _uniform(r_emb, (new_tokens, d), d**-0.5)], axis=0
        )
        store.replace("emb.token", emb_new)
        r_out = rngmod.stream(seed, "extend", "out.weight", old_v)
        out_new = np.concatenate(
            [store["out.weight"].data, _uniform(r_out, (d, new_tokens), (6.0 / (d + 1)) ** 0.5)],
            axis=1,
        )
        store.replace("out.weight", out_new)
        store.replace("out.bias", np.concatenate([store["out.bias"].data, np.zeros(new_tokens)]))
        return Seq2SeqModel(new_cfg, store, set(self.frozen_names))

    def new_row_masks(self, old_vocab_size: int) -> dict[str, np.ndarray]:
        """Update masks that let training touch only appended vocab rows."""
        masks = {}
        for name, t in self.params.items():
            if name == "emb.token":
                m = np.zeros(t.data.shape, dtype=bool)
                m[old_vocab_size:, :] = True
            elif name == "out.weight":
                m = np.zeros(t.data.shape, dtype=bool)
                m[:, old_vocab_size:] = True
            elif name == "out.bias":
                m = np.zeros(t.data.shape, dtype=bool)
                m[old_vocab_size:] = True
            else:
                m = np.zeros(t.data.shape, dtype=bool)
            masks[name] = m
        return masks


def loss_from_logits(logits: Tensor, batch: Batch) -> Tensor:
    """Assemble the teacher-forced CE loss from precomputed logits."""
    lp = T.log_softmax(logits, axis=-1)
    return loss_from_log_probs(lp, batch)


def loss_from_log_probs(log_probs: Tensor, batch: Batch) -> Tensor:
    """Masked mean negative log-probability of the gold continuation."""
    targets = batch.tgt[:, 1:]
    mask = batch.tgt_mask[:, 1:]
    count = float(mask.sum())
    if count == 0:
        raise ValueError("loss: batch has no target tokens")
    gathered = T.cross_entropy_gather(log_probs, targets)
    return T.mul(T.tsum(T.mul(gathered, Tensor(mask))), -1.0 / count)


def greedy_decode(model, srcs: list[list[int]], tgt_lang_token: int, max_len: int):
    """Deterministic argmax decoding for a batch of source sequences.

    The decoder context is seeded with the target language-id token;
    generation stops per sequence at eos or after max_len steps. Returns
    the generated content tokens (language token and eos excluded).
    """
    if not srcs:
        return []
    with no_grad():
        bsz = len(srcs)
        smax = max(len(s) for s in srcs)
        src = np.full((bsz, smax), PAD, dtype=np.int64)
        src_mask = np.zeros((bsz, smax))
        for i, s in enumerate(srcs):
            src[i, : len(s)] = s
            src_mask[i, : len(s)] = 1.0
        enc = model.encode(src, src_mask)
        prefix = np.full((bsz, 1), tgt_lang_token, dtype=np.int64)
        done = np.zeros(bsz, dtype=bool)
        outputs: list[list[int]] = [[] for _ in range(bsz)]
        cfg = getattr(model, "cfg", None)
        prefix_cap = cfg.max_len if cfg is not None else max_len + 1
        for _ in range(max_len):
            logits = model.decode_logits(prefix, enc, src_mask)
            nxt = logits[:, -1, :].argmax(axis=-1).astype(np.int64)
            for i in range(bsz):
                if done[i]:
                    continue
                if nxt[i] == EOS:
                    done[i] = True
                else:
                    outputs[i].append(int(nxt[i]))
            if done.all() or prefix.shape[1] + 1 > prefix_cap:
                break
            prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
    return outputs

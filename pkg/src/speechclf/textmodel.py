"""Toy-scale bidirectional transformer classifier for token chunks.

The encoder follows the post-norm BERT/RoBERTa layout with learned
positional embeddings. Pretraining is dynamic-masking MLM; the classifier
head pools the first (BOS) position, applies a tanh projection and maps to
the three diagnosis classes.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from .bpe import Vocab
from .data import Chunk, Label
from . import nn
from .nn import Tensor
from .nn.tensor import add, embedding, mul, softmax, tanh as t_tanh, gelu as t_gelu

MLM_MASK_RATE = 0.15
MLM_KEEP_MASK = 0.8   # of the selected positions: replaced by <mask>
MLM_RANDOM = 0.1      # replaced by a random content token


class SequenceTooLong(ValueError):
    pass


class VocabMissingMask(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_positions: int = 512
    vocab_size: int = 16384
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class EncoderBlock:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.attn = nn.MultiHeadAttention(cfg.d_model, cfg.heads, rng)
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.ff1 = nn.Dense(cfg.d_model, cfg.d_ff, rng)
        self.ff2 = nn.Dense(cfg.d_ff, cfg.d_model, rng)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def __call__(self, x: Tensor, key_mask, rng, training: bool) -> Tensor:
        a = self.drop(self.attn(x, key_mask), rng, training)
        x = self.ln1(add(x, a))
        f = self.drop(self.ff2(t_gelu(self.ff1(x))), rng, training)
        return self.ln2(add(x, f))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for tag, lin in (("wq", self.attn.wq), ("wk", self.attn.wk),
                         ("wv", self.attn.wv), ("wo", self.attn.wo)):
            out[f"{prefix}.attn.{tag}.w"] = lin.w
            out[f"{prefix}.attn.{tag}.b"] = lin.b
        out[f"{prefix}.ln1.gamma"] = self.ln1.gamma
        out[f"{prefix}.ln1.beta"] = self.ln1.beta
        out[f"{prefix}.ff1.w"] = self.ff1.w
        out[f"{prefix}.ff1.b"] = self.ff1.b
        out[f"{prefix}.ff2.w"] = self.ff2.w
        out[f"{prefix}.ff2.b"] = self.ff2.b
        out[f"{prefix}.ln2.gamma"] = self.ln2.gamma
        out[f"{prefix}.ln2.beta"] = self.ln2.beta
        return out


class TransformerEncoder:
    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.Generator(np.random.PCG64(seed))
        self.tok_emb = Tensor(rng.normal(0, 0.02, (cfg.vocab_size, cfg.d_model)),
                              requires_grad=True)
        self.pos_emb = Tensor(rng.normal(0, 0.02, (cfg.max_positions, cfg.d_model)),
                              requires_grad=True)
        self.emb_ln = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.layers)]

    def __call__(self, ids: np.ndarray, key_mask: np.ndarray | None = None,
                 rng: np.random.Generator | None = None,
                 training: bool = False) -> Tensor:
        batch, seq = ids.shape
        if seq > self.cfg.max_positions:
            raise SequenceTooLong(
                f"sequence of {seq} exceeds max_positions {self.cfg.max_positions}")
        x = add(embedding(self.tok_emb, ids),
                embedding(self.pos_emb, np.arange(seq)))
        x = self.drop(self.emb_ln(x), rng, training)
        for block in self.blocks:
            x = block(x, key_mask, rng, training)
        return x

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"tok_emb": self.tok_emb, "pos_emb": self.pos_emb,
               "emb_ln.gamma": self.emb_ln.gamma, "emb_ln.beta": self.emb_ln.beta}
        for i, block in enumerate(self.blocks):
            out.update(block.named_parameters(f"block{i}"))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


class MlmHead:
    """Masked-token prediction head: dense + gelu + norm + vocab projection."""

    def __init__(self, cfg: EncoderConfig, seed: int = 1):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.dense = nn.Dense(cfg.d_model, cfg.d_model, rng)
        self.ln = nn.LayerNorm(cfg.d_model)
        self.out = nn.Dense(cfg.d_model, cfg.vocab_size, rng)

    def __call__(self, hidden: Tensor) -> Tensor:
        return self.out(self.ln(t_gelu(self.dense(hidden))))

    def named_parameters(self) -> dict[str, Tensor]:
        return {"mlm.dense.w": self.dense.w, "mlm.dense.b": self.dense.b,
                "mlm.ln.gamma": self.ln.gamma, "mlm.ln.beta": self.ln.beta,
                "mlm.out.w": self.out.w, "mlm.out.b": self.out.b}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


class ClassifierHead:
    """BOS pooling, tanh projection, dropout, 3-way output."""

    def __init__(self, cfg: EncoderConfig, seed: int = 2):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.pool = nn.Dense(cfg.d_model, cfg.d_model, rng)
        self.drop = nn.Dropout(cfg.dropout)
        self.out = nn.Dense(cfg.d_model, len(Label), rng)

    def __call__(self, hidden: Tensor, rng=None, training: bool = False) -> Tensor:
        pooled = t_tanh(self.pool(hidden[:, 0, :]))
        return self.out(self.drop(pooled, rng, training))

    def named_parameters(self) -> dict[str, Tensor]:
        return {"head.pool.w": self.pool.w, "head.pool.b": self.pool.b,
                "head.out.w": self.out.w, "head.out.b": self.out.b}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


@dataclass
class SpecialIds:
    bos: int
    eos: int
    pad: int
    mask: int | None = None

    @classmethod
    def from_vocab(cls, vocab: Vocab) -> "SpecialIds":
        return cls(vocab.bos_id, vocab.eos_id, vocab.pad_id, vocab.mask_id)


def prepare_batch(token_seqs: list[list[int]], specials: SpecialIds,
                  max_positions: int) -> tuple[np.ndarray, np.ndarray]:
    """Wrap chunks in BOS/EOS and pad to a rectangle.

    Returns (ids, real_mask); raises SequenceTooLong when a chunk plus its
    two special tokens does not fit.
    """
    for seq in token_seqs:
        if len(seq) + 2 > max_positions:
            raise SequenceTooLong(
                f"chunk of {len(seq)} tokens exceeds {max_positions - 2}")
    width = max(len(s) for s in token_seqs) + 2
    ids = np.full((len(token_seqs), width), specials.pad, dtype=np.int64)
    mask = np.zeros((len(token_seqs), width), dtype=bool)
    for row, seq in enumerate(token_seqs):
        ids[row, 0] = specials.bos
        ids[row, 1:1 + len(seq)] = seq
        ids[row, 1 + len(seq)] = specials.eos
        mask[row, :len(seq) + 2] = True
    return ids, mask


def apply_mlm_masking(ids: np.ndarray, real_mask: np.ndarray,
                      specials: SpecialIds, content_range: tuple[int, int],
                      rng: np.random.Generator,
                      rate: float = MLM_MASK_RATE):
    """Dynamic masking: select ``rate`` of content positions, then 80/10/10
    mask/random/keep. Returns (masked_ids, selected_mask, targets)."""
    if specials.mask is None:
        raise VocabMissingMask("vocabulary has no <mask> token")
    special_vals = {specials.bos, specials.eos, specials.pad}
    candidates = real_mask & ~np.isin(ids, sorted(special_vals))
    selected = candidates & (rng.random(ids.shape) < rate)
    if not selected.any() and candidates.any():
        # Degenerate draw: force one position so the loss is defined.
        flat = np.flatnonzero(candidates)
        pick = flat[rng.integers(len(flat))]
        selected.flat[pick] = True
    targets = ids[selected].copy()
    masked = ids.copy()
    action = rng.random(ids.shape)
    lo, hi = content_range
    masked[selected & (action < MLM_KEEP_MASK)] = specials.mask
    random_slots = selected & (action >= MLM_KEEP_MASK) & (
        action < MLM_KEEP_MASK + MLM_RANDOM)
    masked[random_slots] = rng.integers(lo, hi, int(random_slots.sum()))
    return masked, selected, targets


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    val_accuracy: float | None = None


class TextClassifier:
    """Encoder plus classification head with the ids needed to run it."""

    def __init__(self, encoder: TransformerEncoder, head: ClassifierHead,
                 specials: SpecialIds):
        self.encoder = encoder
        self.head = head
        self.specials = specials
        self.training = False

    def logits(self, token_seqs: list[list[int]],
               rng: np.random.Generator | None = None) -> Tensor:
        ids, mask = prepare_batch(token_seqs, self.specials,
                                  self.encoder.cfg.max_positions)
        hidden = self.encoder(ids, mask, rng, self.training)
        return self.head(hidden, rng, self.training)

    def predict_proba(self, token_seqs: list[list[int]]) -> np.ndarray:
        self.training = False
        return softmax(self.logits(token_seqs), axis=-1).data

    def named_parameters(self) -> dict[str, Tensor]:
        out = dict(self.encoder.named_parameters())
        out.update(self.head.named_parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        p.data[...] = snap[name]


def mlm_pretrain(token_seqs: list[list[int]], vocab: Vocab,
                 cfg: EncoderConfig, train_cfg: nn.TrainConfig,
                 max_steps: int | None = None,
                 encoder: TransformerEncoder | None = None,
                 ) -> tuple[TransformerEncoder, MlmHead, list[float]]:
    """Masked-language-model pretraining over tokenized lines.

    Returns the encoder, the MLM head and the per-step loss history.
    """
    if not token_seqs:
        raise ValueError("empty pretraining corpus")
    specials = SpecialIds.from_vocab(vocab)
    if specials.mask is None:
        raise VocabMissingMask("vocabulary has no <mask> token")
    content_range = vocab.content_id_range()
    seqs = [s[:cfg.max_positions - 2] for s in token_seqs if s]

    encoder = encoder or TransformerEncoder(cfg, seed=train_cfg.seed)
    head = MlmHead(cfg, seed=train_cfg.seed + 1)
    params = list(encoder.parameters()) + list(head.parameters())
    state = nn.AdamState.for_params(params, train_cfg.beta1, train_cfg.beta2,
                                    train_cfg.eps)
    rng = np.random.Generator(np.random.PCG64((train_cfg.seed, 0x41)))
    batches_per_epoch = max(1, (len(seqs) + train_cfg.batch_size - 1)
                            // train_cfg.batch_size)
    total = max_steps or train_cfg.epochs * batches_per_epoch
    lr_of = nn.schedule_for(train_cfg, total)

    history: list[float] = []
    step = 0
    while step < total:
        for idx in nn.minibatch_indices(len(seqs), train_cfg.batch_size, rng):
            if step >= total:
                break
            batch = [seqs[i] for i in idx]
            ids, real = prepare_batch(batch, specials, cfg.max_positions)
            masked, selected, targets = apply_mlm_masking(
                ids, real, specials, content_range, rng)
            for p in params:
                p.zero_grad()
            hidden = encoder(masked, real, rng, training=True)
            logits = head(hidden[selected])
            loss = nn.cross_entropy(logits, targets)
            loss.backward()
            step += 1
            nn.adam_step(params, state, lr_of(step))
            history.append(loss.item())
    return encoder, head, history


def fine_tune(encoder: TransformerEncoder, head: ClassifierHead,
              train_chunks: list[Chunk], val_chunks: list[Chunk],
              train_cfg: nn.TrainConfig, specials: SpecialIds,
              freeze_encoder: bool = False,
              ) -> tuple[TextClassifier, list[EpochStats]]:
    """Train encoder+head on labeled chunks with the warmup/decay schedule;
    the returned model carries the weights of the best-validation epoch."""
    clf = TextClassifier(encoder, head, specials)
    trainable = (head.parameters() if freeze_encoder else clf.parameters())
    state = nn.AdamState.for_params(trainable, train_cfg.beta1,
                                    train_cfg.beta2, train_cfg.eps)
    rng = np.random.Generator(np.random.PCG64((train_cfg.seed, 0xF1)))
    batches = max(1, (len(train_chunks) + train_cfg.batch_size - 1)
                  // train_cfg.batch_size)
    total = train_cfg.epochs * batches
    lr_of = nn.schedule_for(train_cfg, total)

    named = clf.named_parameters()
    best = _snapshot(named)
    best_val = np.inf
    history: list[EpochStats] = []
    step = 0
    for epoch in range(train_cfg.epochs):
        clf.training = True
        losses = []
        for idx in nn.minibatch_indices(len(train_chunks),
                                        train_cfg.batch_size, rng):
            batch = [train_chunks[i] for i in idx]
            for p in trainable:
                p.zero_grad()
            logits = clf.logits([c.token_ids for c in batch], rng)
            loss = nn.cross_entropy(logits,
                                    np.array([int(c.label) for c in batch]))
            loss.backward()
            step += 1
            nn.adam_step(trainable, state, lr_of(step))
            losses.append(loss.item())
        val_loss, val_acc = (None, None)
        if val_chunks:
            val_loss, val_acc = evaluate_chunks(clf, val_chunks,
                                                train_cfg.batch_size)
            if val_loss < best_val:
                best_val = val_loss
                best = _snapshot(named)
        history.append(EpochStats(epoch, float(np.mean(losses)),
                                  val_loss, val_acc))
    if val_chunks:
        _restore(named, best)
    return clf, history


def evaluate_chunks(clf: TextClassifier, chunks: list[Chunk],
                    batch_size: int = 16) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over labeled chunks."""
    clf.training = False
    total_nll = 0.0
    correct = 0
    for start in range(0, len(chunks), batch_size):
        batch = chunks[start:start + batch_size]
        labels = np.array([int(c.label) for c in batch])
        logits = clf.logits([c.token_ids for c in batch])
        total_nll += nn.cross_entropy(logits, labels).item() * len(batch)
        correct += int((logits.data.argmax(axis=1) == labels).sum())
    return total_nll / len(chunks), correct / len(chunks)


def save_encoder(path, encoder: TransformerEncoder, mlm_head: MlmHead | None,
                 specials: SpecialIds) -> None:
    tensors = {k: v.data for k, v in encoder.named_parameters().items()}
    if mlm_head is not None:
        tensors.update({k: v.data for k, v in mlm_head.named_parameters().items()})
    meta = {
        "kind": "text_encoder",
        "config": encoder.cfg.to_dict(),
        "specials": {"bos": specials.bos, "eos": specials.eos,
                     "pad": specials.pad, "mask": specials.mask},
        "has_mlm_head": mlm_head is not None,
    }
    nn.save_checkpoint(path, tensors, meta)


def load_encoder(path) -> tuple[TransformerEncoder, MlmHead | None, SpecialIds]:
    tensors, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "text_encoder":
        raise nn.CheckpointError(f"{path}: not a text encoder checkpoint")
    cfg = EncoderConfig(**meta["config"])
    encoder = TransformerEncoder(cfg, seed=0)
    head = MlmHead(cfg, seed=0) if meta.get("has_mlm_head") else None
    live = {k: v.data for k, v in encoder.named_parameters().items()}
    if head is not None:
        live.update({k: v.data for k, v in head.named_parameters().items()})
    nn.assign_state(live, tensors)
    sp = meta["specials"]
    return encoder, head, SpecialIds(sp["bos"], sp["eos"], sp["pad"], sp["mask"])


def save_text_classifier(path, clf: TextClassifier) -> None:
    tensors = {k: v.data for k, v in clf.named_parameters().items()}
    meta = {
        "kind": "text_classifier",
        "config": clf.encoder.cfg.to_dict(),
        "specials": {"bos": clf.specials.bos, "eos": clf.specials.eos,
                     "pad": clf.specials.pad, "mask": clf.specials.mask},
    }
    nn.save_checkpoint(path, tensors, meta)


def load_text_classifier(path) -> TextClassifier:
    tensors, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "text_classifier":
        raise nn.CheckpointError(f"{path}: not a text classifier checkpoint")
    cfg = EncoderConfig(**meta["config"])
    sp = meta["specials"]
    clf = TextClassifier(TransformerEncoder(cfg, seed=0),
                         ClassifierHead(cfg, seed=0),
                         SpecialIds(sp["bos"], sp["eos"], sp["pad"], sp["mask"]))
    live = {k: v.data for k, v in clf.named_parameters().items()}
    nn.assign_state(live, tensors)
    return clf


# Best fine-tuning runs reported for the two chunk lengths, plus the
# alternative-tokenizer baselines they were compared against.
FINE_TUNE_PRESETS: dict[str, nn.TrainConfig] = {
    "chunk505": nn.TrainConfig(batch_size=10, epochs=3, peak_lr=6.22e-5,
                               warmup_steps=373, lr_schedule="linear"),
    "chunk220": nn.TrainConfig(batch_size=9, epochs=5, peak_lr=8.42e-5,
                               warmup_steps=190, lr_schedule="linear"),
    "chunk505_alt": nn.TrainConfig(batch_size=10, epochs=3, peak_lr=1.19e-4,
                                   warmup_steps=401, lr_schedule="linear"),
    "chunk220_alt": nn.TrainConfig(batch_size=13, epochs=3, peak_lr=6.58e-5,
                                   warmup_steps=401, lr_schedule="linear"),
}

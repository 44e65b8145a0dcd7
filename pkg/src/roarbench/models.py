"""Trainable classifiers: linear bag-of-words and BiLSTM with additive
attention (single- and paired-sequence variants).

Every model exposes two input paths that must agree: token ids through an
embedding gather, and an explicit (possibly scaled) one-hot tensor through
a matmul with the embedding matrix. Gradient-based importance measures
differentiate the one-hot path.
"""

from dataclasses import dataclass

import numpy as np

from . import grad_core as gc
from ._util import canonical_json, derive_rng
from .data import PAD, STRUCTURAL_IDS
from .errors import (ConfigError, ContractViolation, NumericFailure,
                     TrainingFailure)

ARCHITECTURES = ("linear", "bilstm-attention-single", "bilstm-attention-paired")


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    vocab_size: int
    classes: int
    embed_dim: int = 16
    hidden: int = 16
    max_epochs: int = 20
    batch_size: int = 32
    lr: float = 0.001
    weight_decay: float = 1e-5
    amsgrad: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.vocab_size < len(STRUCTURAL_IDS) + 1:
            raise ConfigError("vocabulary smaller than the reserved tokens")
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")

    def to_dict(self):
        return {
            "arch": self.arch, "vocab_size": self.vocab_size,
            "classes": self.classes, "embed_dim": self.embed_dim,
            "hidden": self.hidden, "max_epochs": self.max_epochs,
            "batch_size": self.batch_size, "lr": self.lr,
            "weight_decay": self.weight_decay, "amsgrad": self.amsgrad,
            "seed": self.seed,
        }

    def digest_payload(self):
        return canonical_json(self.to_dict())


def _attendable(ids):
    out = np.ones(ids.shape, dtype=bool)
    for sid in STRUCTURAL_IDS:
        out &= ids != sid
    return out


def _pad_batch(seqs):
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


class LinearModel:
    """Bag-of-words: logits = sum_t W[token_t] + b over non-PAD positions.

    Order-invariant by construction; has no attention layer. When an
    auxiliary sequence is present its tokens join the bag.
    """

    has_attention = False

    def __init__(self, config, rng):
        if config.arch != "linear":
            raise ConfigError("LinearModel requires arch 'linear'")
        self.config = config
        k = 1.0 / np.sqrt(config.vocab_size)
        self.W = gc.tensor(rng.uniform(-k, k, (config.vocab_size,
                                               config.classes)))
        self.b = gc.tensor(np.zeros(config.classes))
        self.train_history = []
        self.best_epoch = None

    def parameters(self):
        return {"W": self.W, "b": self.b}

    def _bag(self, ids):
        rows = gc.embedding(self.W, ids)                  # (B,T,C)
        keep = (ids != PAD).astype(np.float64)[..., None]
        return gc.reduce_sum(gc.multiply(rows, keep), axis=1)

    def forward_ids(self, ids, aux_ids=None):
        if ids.ndim != 2 or ids.shape[1] < 1:
            raise ContractViolation("forward expects a non-empty (B,T) batch")
        total = self._bag(ids)
        if aux_ids is not None:
            total = gc.add(total, self._bag(aux_ids))
        logits = gc.add(total, self.b)
        return logits, None

    def forward_onehot(self, x, ids, aux_ids=None):
        """x: (B,T,V) tensor aligned with the constant id array `ids`."""
        contrib = gc.matmul(x, self.W)                    # (B,T,C)
        keep = (ids != PAD).astype(np.float64)[..., None]
        total = gc.reduce_sum(gc.multiply(contrib, keep), axis=1)
        if aux_ids is not None:
            aux_batch = np.broadcast_to(aux_ids, (x.data.shape[0],
                                                  len(aux_ids)))
            total = gc.add(total, self._bag(np.ascontiguousarray(aux_batch)))
        return gc.add(total, self.b)


class _LstmDirection:
    """One direction of an LSTM layer; gate order i, f, g, o."""

    def __init__(self, prefix, embed_dim, hidden, rng):
        k = 1.0 / np.sqrt(hidden)
        self.prefix = prefix
        self.hidden = hidden
        self.Wx = gc.tensor(rng.uniform(-k, k, (embed_dim, 4 * hidden)))
        self.Wh = gc.tensor(rng.uniform(-k, k, (hidden, 4 * hidden)))
        bias = np.zeros(4 * hidden)
        bias[hidden: 2 * hidden] = 1.0  # forget gate opens at init
        self.b = gc.tensor(bias)

    def parameters(self):
        return {f"{self.prefix}.Wx": self.Wx, f"{self.prefix}.Wh": self.Wh,
                f"{self.prefix}.b": self.b}

    def run(self, steps, step_masks):
        """steps: list of (B,d) tensors; step_masks: list of (B,1) floats.

        Masked (padded) steps carry the previous state through unchanged.
        Returns the list of per-step hidden states.
        """
        batch = steps[0].data.shape[0]
        h = gc.tensor(np.zeros((batch, self.hidden)))
        c = gc.tensor(np.zeros((batch, self.hidden)))
        states = []
        for x_t, m in zip(steps, step_masks):
            gates = gc.add(gc.add(gc.matmul(x_t, self.Wx),
                                  gc.matmul(h, self.Wh)), self.b)
            i = gc.sigmoid(gc.narrow(gates, 1, 0, self.hidden))
            f = gc.sigmoid(gc.narrow(gates, 1, self.hidden, self.hidden))
            g = gc.tanh(gc.narrow(gates, 1, 2 * self.hidden, self.hidden))
            o = gc.sigmoid(gc.narrow(gates, 1, 3 * self.hidden, self.hidden))
            c_new = gc.add(gc.multiply(f, c), gc.multiply(i, g))
            h_new = gc.multiply(o, gc.tanh(c_new))
            c = gc.add(gc.multiply(c_new, m), gc.multiply(c, 1.0 - m))
            h = gc.add(gc.multiply(h_new, m), gc.multiply(h, 1.0 - m))
            states.append(h)
        return states


class BilstmAttentionModel:
    """BiLSTM encoder with additive attention over the primary sequence.

    Single variant: u_i = tanh(W h_i + b), alpha = softmax(u_i . v) over
    attendable positions. Paired variant adds a second encoder for the
    auxiliary sequence and uses u_i = tanh(W_x h_i + W_y h_aux) with no
    bias, attending only over the primary sequence. Classification reads
    a dense layer on the attention-weighted context.
    """

    has_attention = True

    def __init__(self, config, rng):
        if config.arch not in ("bilstm-attention-single",
                               "bilstm-attention-paired"):
            raise ConfigError("BilstmAttentionModel requires a bilstm arch")
        self.config = config
        self.paired = config.arch == "bilstm-attention-paired"
        d, hid = config.embed_dim, config.hidden
        k = 1.0 / np.sqrt(hid)
        self.embed = gc.tensor(rng.standard_normal((config.vocab_size, d)))
        self.fw = _LstmDirection("lstm_fw", d, hid, rng)
        self.bw = _LstmDirection("lstm_bw", d, hid, rng)
        self.W_att = gc.tensor(rng.uniform(-k, k, (2 * hid, hid)))
        if self.paired:
            self.aux_fw = _LstmDirection("aux_fw", d, hid, rng)
            self.aux_bw = _LstmDirection("aux_bw", d, hid, rng)
            self.W_att_aux = gc.tensor(rng.uniform(-k, k, (2 * hid, hid)))
            self.b_att = None
        else:
            self.b_att = gc.tensor(np.zeros(hid))
        self.v_att = gc.tensor(rng.uniform(-k, k, (hid, 1)))
        self.W_out = gc.tensor(rng.uniform(-k, k, (2 * hid, config.classes)))
        self.b_out = gc.tensor(np.zeros(config.classes))
        self.train_history = []
        self.best_epoch = None

    def parameters(self):
        params = {"embed": self.embed}
        params.update(self.fw.parameters())
        params.update(self.bw.parameters())
        params["W_att"] = self.W_att
        if self.paired:
            params.update(self.aux_fw.parameters())
            params.update(self.aux_bw.parameters())
            params["W_att_aux"] = self.W_att_aux
        else:
            params["b_att"] = self.b_att
        params["v_att"] = self.v_att
        params["W_out"] = self.W_out
        params["b_out"] = self.b_out
        return params

    def _encode(self, steps, ids, fw, bw):
        """Per-position concat of forward and backward hidden states."""
        masks = [(ids[:, t] != PAD).astype(np.float64)[:, None]
                 for t in range(ids.shape[1])]
        h_fw = fw.run(steps, masks)
        h_bw = bw.run(steps[::-1], masks[::-1])[::-1]
        return [gc.concatenate([f, b], axis=1) for f, b in zip(h_fw, h_bw)]

    def _steps_from_ids(self, ids):
        emb = gc.embedding(self.embed, ids)               # (B,T,d)
        return [gc.select_index(emb, t, axis=1) for t in range(ids.shape[1])]

    def _steps_from_onehot(self, x):
        emb = gc.matmul(x, self.embed)                    # (B,T,d)
        return [gc.select_index(emb, t, axis=1)
                for t in range(x.data.shape[1])]

    def _attend(self, states, ids, aux_summary):
        scores = []
        for h_i in states:
            if self.paired:
                u = gc.tanh(gc.add(gc.matmul(h_i, self.W_att),
                                   gc.matmul(aux_summary, self.W_att_aux)))
            else:
                u = gc.tanh(gc.add(gc.matmul(h_i, self.W_att), self.b_att))
            scores.append(gc.matmul(u, self.v_att))       # (B,1)
        score_row = gc.concatenate(scores, axis=1)        # (B,T)
        attendable = _attendable(ids)
        if not attendable.any(axis=1).all():
            raise ContractViolation("sequence with no attendable position")
        alpha = gc.masked_softmax(score_row, attendable)
        context = None
        for t, h_i in enumerate(states):
            term = gc.multiply(gc.narrow(alpha, 1, t, 1), h_i)
            context = term if context is None else gc.add(context, term)
        return alpha, context

    def _aux_summary(self, aux_ids):
        steps = self._steps_from_ids(aux_ids)
        states = self._encode(steps, aux_ids, self.aux_fw, self.aux_bw)
        # padded steps carry state through, so the final state is the
        # summary of the real sequence
        return states[-1]

    def _head(self, steps, ids, aux_ids):
        if self.paired:
            if aux_ids is None:
                raise ContractViolation("paired model requires aux sequence")
            aux_summary = self._aux_summary(aux_ids)
        else:
            aux_summary = None
        states = self._encode(steps, ids, self.fw, self.bw)
        alpha, context = self._attend(states, ids, aux_summary)
        logits = gc.add(gc.matmul(context, self.W_out), self.b_out)
        return logits, alpha

    def forward_ids(self, ids, aux_ids=None):
        if ids.ndim != 2 or ids.shape[1] < 1:
            raise ContractViolation("forward expects a non-empty (B,T) batch")
        return self._head(self._steps_from_ids(ids), ids, aux_ids)

    def forward_onehot(self, x, ids, aux_ids=None):
        """x: (B,T,V) tensor; `ids` supplies the padding/attention masks
        and must describe the same tokens x encodes."""
        if x.data.ndim != 3:
            raise ContractViolation("one-hot input must be (B,T,V)")
        batch = x.data.shape[0]
        ids_b = np.broadcast_to(ids, (batch, len(ids)))
        aux_b = None
        if aux_ids is not None:
            aux_b = np.ascontiguousarray(
                np.broadcast_to(aux_ids, (batch, len(aux_ids))))
        logits, _ = self._head(self._steps_from_onehot(x),
                               np.ascontiguousarray(ids_b), aux_b)
        return logits


def build_model(config, init_seed):
    rng = derive_rng("model-init", config.arch, init_seed)
    if config.arch == "linear":
        return LinearModel(config, rng)
    return BilstmAttentionModel(config, rng)


def _batches(count, batch_size):
    for start in range(0, count, batch_size):
        yield range(start, min(start + batch_size, count))


def _batch_arrays(observations, indices):
    ids = _pad_batch([observations[i].ids for i in indices])
    labels = np.array([observations[i].label for i in indices],
                      dtype=np.int64)
    aux = None
    if observations[indices[0]].aux_ids is not None:
        aux = _pad_batch([observations[i].aux_ids for i in indices])
    return ids, aux, labels


def _split_loss(model, observations, batch_size):
    total, n = 0.0, 0
    for idx in _batches(len(observations), batch_size):
        ids, aux, labels = _batch_arrays(observations, list(idx))
        logits, _ = model.forward_ids(ids, aux)
        loss = gc.cross_entropy_with_logits(logits, labels)
        total += float(loss.data) * len(labels)
        n += len(labels)
    return total / n


def train(config, splits, seed=None):
    """Train with AMSGrad-Adam; keep the epoch with lowest validation loss.

    Deterministic given (config, seed): initialization, shuffling and
    batching all derive from the seed. Non-finite losses abort the run as
    a TrainingFailure.
    """
    if seed is None:
        seed = config.seed
    train_obs = splits.get("train") or ()
    val_obs = splits.get("validation") or ()
    if not train_obs or not val_obs:
        raise ContractViolation("train and validation splits must be non-empty")
    model = build_model(config, seed)
    params = list(model.parameters().values())
    opt = gc.AmsgradAdam(params, lr=config.lr,
                         weight_decay=config.weight_decay,
                         amsgrad=config.amsgrad)
    shuffle_rng = derive_rng("shuffle", seed)
    best = None
    history = []
    try:
        for epoch in range(config.max_epochs):
            order = shuffle_rng.permutation(len(train_obs))
            total, n = 0.0, 0
            for idx in _batches(len(train_obs), config.batch_size):
                chosen = [int(order[i]) for i in idx]
                ids, aux, labels = _batch_arrays(train_obs, chosen)
                with gc.Tape() as tape:
                    logits, _ = model.forward_ids(ids, aux)
                    loss = gc.cross_entropy_with_logits(logits, labels)
                    grads = tape.backward(loss, params)
                opt.step(grads)
                total += float(loss.data) * len(labels)
                n += len(labels)
            train_loss = total / n
            val_loss = _split_loss(model, val_obs, config.batch_size)
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                raise NumericFailure("train", "non-finite epoch loss")
            history.append({"epoch": epoch, "train_loss": train_loss,
                            "val_loss": val_loss})
            if best is None or val_loss < best[0]:
                best = (val_loss, epoch,
                        [p.data.copy() for p in params])
    except NumericFailure as exc:
        raise TrainingFailure(f"training diverged: {exc}")
    for p, snapshot in zip(params, best[2]):
        p.data = snapshot
    model.train_history = history
    model.best_epoch = best[1]
    return model


def history_csv(model):
    lines = ["epoch,train_loss,val_loss"]
    for row in model.train_history:
        lines.append(f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r}")
    return "\n".join(lines) + "\n"


def predict(model, observations, batch_size=64):
    """Argmax class per observation; ties break toward the lower index."""
    if not observations:
        raise ContractViolation("predict on an empty split")
    out = np.empty(len(observations), dtype=np.int64)
    pos = 0
    for idx in _batches(len(observations), batch_size):
        ids, aux, _ = _batch_arrays(observations, list(idx))
        logits, _ = model.forward_ids(ids, aux)
        out[pos: pos + len(idx)] = np.argmax(logits.data, axis=1)
        pos += len(idx)
    return out


def evaluate(model, observations, metric="accuracy", batch_size=64):
    from .metrics import classification_metrics
    preds = predict(model, observations, batch_size)
    golds = np.array([o.label for o in observations], dtype=np.int64)
    return classification_metrics(preds, golds, metric, model.config.classes)


def attention_weights(model, observation):
    """Attention row for a single observation; linear models have none."""
    if not model.has_attention:
        raise ContractViolation("model has no attention layer")
    ids = np.asarray([observation.ids], dtype=np.int64)
    aux = None
    if observation.aux_ids is not None:
        aux = np.asarray([observation.aux_ids], dtype=np.int64)
    _, alpha = model.forward_ids(ids, aux)
    return alpha.data[0]


def checkpoint_params(model):
    return {name: p.data for name, p in model.parameters().items()}


def restore_params(model, arrays):
    params = model.parameters()
    if set(arrays) != set(params):
        raise ContractViolation("checkpoint parameter names do not match")
    for name, p in params.items():
        if arrays[name].shape != p.data.shape:
            raise ContractViolation(f"checkpoint shape mismatch for '{name}'")
        p.data = np.asarray(arrays[name], dtype=np.float64).copy()

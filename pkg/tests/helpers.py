"""Shared test oracles: finite differences, an independently coded numpy
BiLSTM-attention forward, rule classifiers, and Monte-Carlo references.

Nothing here imports the autodiff tape for its own math; the point is to
check the package against straight numpy.
"""

import math

import numpy as np

from roarbench import grad_core as gc
from roarbench.data import BOS, EOS, PAD, STRUCTURAL_IDS, Observation
from roarbench.models import ModelConfig, build_model

FD_H = 1e-5
FD_TOL = 1e-4


def numeric_grad(f, x, h=FD_H):
    """Central finite differences of scalar f at ndarray x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        hi = f(x)
        x[idx] = orig - h
        lo = f(x)
        x[idx] = orig
        g[idx] = (hi - lo) / (2.0 * h)
    return g


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(build_loss, tensors, h=FD_H, tol=FD_TOL):
    """Tape gradients vs central differences for every tensor.

    build_loss() must recompute the loss from the tensors' current data;
    it is called once under a tape and repeatedly without one.
    """
    with gc.Tape() as tape:
        loss = build_loss()
        grads = tape.backward(loss, tensors)
    worst = 0.0
    for t, g in zip(tensors, grads):
        def f(arr, t=t):
            old = t.data
            t.data = arr
            try:
                return float(build_loss().data)
            finally:
                t.data = old
        num = numeric_grad(f, t.data.copy(), h)
        err = max_rel_err(g, num)
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch {err:.2e} on shape {t.shape}"
    return worst


# ---------------------------------------------------------------------------
# independent numpy forward for the BiLSTM-attention models

def _np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _np_lstm(embeds, ids, Wx, Wh, b, reverse=False):
    """Hidden state per position, gate order i,f,g,o; PAD steps carry the
    previous state through. embeds: (T, d) for a single sequence."""
    hidden = Wh.shape[0]
    order = range(len(ids) - 1, -1, -1) if reverse else range(len(ids))
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    states = [None] * len(ids)
    for t in order:
        gates = embeds[t] @ Wx + h @ Wh + b
        i = _np_sigmoid(gates[:hidden])
        f = _np_sigmoid(gates[hidden: 2 * hidden])
        g = np.tanh(gates[2 * hidden: 3 * hidden])
        o = _np_sigmoid(gates[3 * hidden: 4 * hidden])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        if ids[t] != PAD:
            h, c = h_new, c_new
        states[t] = h
    return states


def np_bilstm_attention(params, ids, aux_ids=None, paired=False):
    """(logits, alpha) from plain numpy, mirroring the documented model:
    per-position [fw; bw] states, additive attention over non-structural
    positions, dense head on the attention-weighted context."""
    ids = list(ids)
    E = params["embed"]
    emb = np.stack([E[t] for t in ids])
    fw = _np_lstm(emb, ids, params["lstm_fw.Wx"], params["lstm_fw.Wh"],
                  params["lstm_fw.b"])
    bw = _np_lstm(emb, ids, params["lstm_bw.Wx"], params["lstm_bw.Wh"],
                  params["lstm_bw.b"], reverse=True)
    states = [np.concatenate([f, b]) for f, b in zip(fw, bw)]

    if paired:
        aux_ids = list(aux_ids)
        aux_emb = np.stack([E[t] for t in aux_ids])
        afw = _np_lstm(aux_emb, aux_ids, params["aux_fw.Wx"],
                       params["aux_fw.Wh"], params["aux_fw.b"])
        abw = _np_lstm(aux_emb, aux_ids, params["aux_bw.Wx"],
                       params["aux_bw.Wh"], params["aux_bw.b"], reverse=True)
        aux_summary = np.concatenate([afw[-1], abw[-1]])
        u = [np.tanh(s @ params["W_att"] + aux_summary @ params["W_att_aux"])
             for s in states]
    else:
        u = [np.tanh(s @ params["W_att"] + params["b_att"]) for s in states]
    raw = np.array([float(ui @ params["v_att"][:, 0]) for ui in u])
    attendable = np.array([t not in STRUCTURAL_IDS for t in ids])
    shifted = raw - raw[attendable].max()
    e = np.exp(shifted) * attendable
    alpha = e / e.sum()
    context = sum(a * s for a, s in zip(alpha, states))
    logits = context @ params["W_out"] + params["b_out"]
    return logits, alpha


# ---------------------------------------------------------------------------
# model/observation factories

def tiny_model(arch="bilstm-attention-single", vocab=9, embed_dim=3,
               hidden=3, classes=2, seed=0, scale=0.6):
    cfg = ModelConfig(arch=arch, vocab_size=vocab, classes=classes,
                      embed_dim=embed_dim, hidden=hidden)
    model = build_model(cfg, seed)
    rng = np.random.default_rng(seed + 104729)
    for name in sorted(model.parameters()):
        p = model.parameters()[name]
        p.data = rng.standard_normal(p.data.shape) * scale
    return model


def random_obs(rng, vocab=9, classes=2, min_content=2, max_content=5,
               paired=False):
    n = int(rng.integers(min_content, max_content + 1))
    content = [int(v) for v in rng.integers(5, vocab, size=n)]
    ids = (BOS,) + tuple(content) + (EOS,)
    aux = (BOS, int(rng.integers(5, vocab)), EOS) if paired else None
    return Observation(obs_id=f"t/{int(rng.integers(1 << 30))}", ids=ids,
                       label=int(rng.integers(classes)), aux_ids=aux)


# ---------------------------------------------------------------------------
# reference computations

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def trap_area(xs, ys):
    return float(_trapezoid(np.asarray(ys, dtype=np.float64),
                            np.asarray(xs, dtype=np.float64)))


def gold_logit(model, observation, x_scale=1.0):
    """Gold-class logit through the one-hot path at a path scale."""
    ids = np.asarray(observation.ids, dtype=np.int64)
    base = gc.one_hot(ids, model.config.vocab_size)
    x = gc.tensor(x_scale * base[None])
    aux = None
    if observation.aux_ids is not None:
        aux = np.asarray(observation.aux_ids, dtype=np.int64)
    logits = model.forward_onehot(x, ids, aux)
    return float(logits.data[0, observation.label])


def ig_riemann_oracle(model, observation, k, chunk=1000):
    """Right Riemann IG at the observed coordinates, straight zero path."""
    ids = np.asarray(observation.ids, dtype=np.int64)
    base = gc.one_hot(ids, model.config.vocab_size)
    aux = None
    if observation.aux_ids is not None:
        aux = np.asarray(observation.aux_ids, dtype=np.int64)
    acc = np.zeros_like(base)
    for start in range(1, k + 1, chunk):
        stop = min(start + chunk, k + 1)
        scales = np.arange(start, stop, dtype=np.float64) / k
        x = gc.tensor(scales[:, None, None] * base[None])
        with gc.Tape() as tape:
            logits = model.forward_onehot(x, ids, aux)
            total = gc.reduce_sum(gc.select_index(logits, observation.label,
                                                  axis=1))
            g = tape.backward(total, [x])[0]
        acc += g.sum(axis=0)
    avg = acc / k
    return avg[np.arange(len(ids)), ids]


def bayes_rate_mc(a, d, n=100000, seed=0):
    """Monte-Carlo accuracy of the analytic Bayes rule for the tabular
    task: x,z jointly Gaussian, so the posterior-optimal rule is linear."""
    rng = np.random.default_rng(seed)
    m = np.asarray(a, dtype=np.float64) / 10.0
    d = np.asarray(d, dtype=np.float64)
    sigma = np.outer(d, d) + np.eye(len(m)) / 100.0
    w = np.linalg.solve(sigma, m)
    z = rng.standard_normal(n)
    eta = rng.standard_normal(n)
    eps = rng.standard_normal((n, len(m)))
    x = np.outer(z, m) + np.outer(eta, d) + eps / 10.0
    return float(np.mean((x @ w > 0) == (z > 0)))


def keyword_rule_predict(observation, key_ids):
    """Predict by whichever class keyword survives; -1 when none does."""
    for c, kid in enumerate(key_ids):
        if kid in observation.ids:
            return c
    return -1


def paired_rule_predict(observation, ent_to_idx, loc_to_label):
    """Read the queried entity's next token as its location."""
    entity = observation.aux_ids[1]
    ids = observation.ids
    for i, t in enumerate(ids[:-1]):
        if t == entity:
            return loc_to_label[ids[i + 1]]
    return -1


def binom_3sigma(p, n):
    return 3.0 * math.sqrt(p * (1.0 - p) / n)


def topk_mask_oracle(scores, maskable, k):
    """First k maskable positions ordered by (-score, index)."""
    order = sorted((i for i, ok in enumerate(maskable) if ok),
                   key=lambda i: (-scores[i], i))
    return frozenset(order[:k])

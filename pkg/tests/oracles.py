"""Independent reference computations used by several test modules.

Everything here is written with plain loops and numpy, without calling the
library code it is compared against.
"""

import math

import numpy as np

# --- metrics -------------------------------------------------------------------


def brute_metrics(labels, preds, scores, num_classes, k):
    n = len(labels)
    correct = sum(1 for t, p in zip(labels, preds) if t == p)
    oa = correct / n
    recalls = []
    for c in range(num_classes):
        members = [i for i in range(n) if labels[i] == c]
        if members:
            recalls.append(sum(1 for i in members if preds[i] == c) / len(members))
    aa = sum(recalls) / len(recalls)
    p_e = 0.0
    for c in range(num_classes):
        true_c = sum(1 for t in labels if t == c)
        pred_c = sum(1 for p in preds if p == c)
        p_e += (true_c / n) * (pred_c / n)
    if p_e == 1.0:
        kappa = 1.0 if oa == 1.0 else 0.0
    else:
        kappa = (oa - p_e) / (1.0 - p_e)
    hits = 0
    for i in range(n):
        row = list(scores[i])
        # rank by score, ties to the lower class index
        ranked = sorted(range(num_classes), key=lambda c: (-row[c], c))[:k]
        hits += labels[i] in ranked
    return oa, aa, kappa, hits / n


def brute_from_confusion(conf):
    conf = [[int(v) for v in row] for row in conf]
    c = len(conf)
    total = sum(sum(r) for r in conf)
    diag = sum(conf[i][i] for i in range(c))
    p_o = diag / total
    rows = [sum(conf[i]) for i in range(c)]
    cols = [sum(conf[i][j] for i in range(c)) for j in range(c)]
    p_e = sum(rows[i] * cols[i] for i in range(c)) / (total * total)
    recalls = [conf[i][i] / rows[i] for i in range(c) if rows[i] > 0]
    if p_e == 1.0:
        kappa = 1.0 if p_o == 1.0 else 0.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    return p_o, sum(recalls) / len(recalls), kappa


# --- parameter counts --------------------------------------------------------


def layer_params(variant, d_t, d_i):
    sa_t = 4 * d_t * d_t
    ln_t, ln_i = 2 * d_t, 2 * d_i
    t2i = 2 * d_t * d_t + 2 * d_i * d_t
    i2t = 2 * d_i * d_i + 2 * d_i * d_t
    sa_i = 4 * d_i * d_i
    mlp = 4 * d_t * d_t + 3 * d_t
    return {
        "full": sa_t + t2i + ln_t + mlp + i2t + ln_i,
        "nocatt": sa_t + ln_t + sa_i + ln_i,
        "icatt": sa_t + ln_t + i2t + ln_i,
        "tcatt": sa_t + t2i + ln_t + sa_i + ln_i,
    }[variant]


def head_params(d_t, d_i, classes, hidden=512):
    return (d_t + d_i) * hidden + hidden + hidden * classes + classes


# --- attention composition oracle -------------------------------------------------


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attention(xa, xb, wq, wk, wv, wo, heads):
    d = wq.shape[1]
    hd = d // heads
    q, k, v = xa @ wq, xb @ wk, xb @ wv
    out = np.zeros((xa.shape[0], d))
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        w = _softmax(q[:, sl] @ k[:, sl].T / math.sqrt(hd))
        out[:, sl] = w @ v[:, sl]
    return out @ wo


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def full_layer(layer, x_t, x_i, heads):
    """The six steps of a full dual-attention layer, scripted by hand."""
    def w(m):
        return [p.data.astype(np.float64) for p in (m.W_Q, m.W_K, m.W_V, m.W_O)]

    s = attention(x_t, x_t, *w(layer.text_self_attn), heads)
    xt_dot = attention(s, x_i, *w(layer.t2i_cma), heads)
    xt_hat = layer_norm(xt_dot + s, layer.text_ln.gamma.data, layer.text_ln.beta.data)
    fc1, fc2 = layer.mlp.fc1, layer.mlp.fc2
    m = np.maximum(xt_dot @ fc1.W.data + fc1.b.data, 0.0) @ fc2.W.data + fc2.b.data
    xi_dot = attention(x_i, m, *w(layer.i2t_cma), heads)
    xi_hat = layer_norm(xi_dot + x_i, layer.image_ln.gamma.data, layer.image_ln.beta.data)
    return xt_hat, xi_hat


# --- information-flow probe --------------------------------------------------


def reachability(encoder, text, image, trials=3, seed=0):
    """Which stream's output moves when the other stream's input is perturbed.

    Returns ``{"text->image": bool, "image->text": bool}``.
    """
    from dualfuse.engine import Tensor

    rng = np.random.default_rng(seed)
    base_t, base_i = (o.data.astype(np.float64) for o in encoder(Tensor(text), Tensor(image)))
    moved = {"text->image": False, "image->text": False}
    for _ in range(trials):
        t2 = text + rng.normal(size=text.shape)
        _, out_i = encoder(Tensor(t2), Tensor(image))
        moved["text->image"] |= bool(np.max(np.abs(out_i.data - base_i)) > 1e-6)
        i2 = image + rng.normal(size=image.shape)
        out_t, _ = encoder(Tensor(text), Tensor(i2))
        moved["image->text"] |= bool(np.max(np.abs(out_t.data - base_t)) > 1e-6)
    return moved


# expected cross-modal reachability of each ablation
EXPECTED_FLOW = {
    "nocatt": {"text->image": False, "image->text": False},
    "icatt": {"text->image": True, "image->text": False},
    "tcatt": {"text->image": False, "image->text": True},
    "full": {"text->image": True, "image->text": True},
}

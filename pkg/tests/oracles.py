"""Straight-line loop re-implementations used as test oracles.

They deliberately avoid the package and vectorised numpy so that agreement
with the batched code is meaningful.
"""
import math

import numpy as np


def softmax_row(logits):
    m = max(logits)
    ex = [math.exp(x - m) for x in logits]
    s = sum(ex)
    return [e / s for e in ex]


def weighted_rows(w, V):
    l, d = len(V), len(V[0])
    return [sum(w[j] * V[j][c] for j in range(l)) for c in range(d)]


def affinity(Q, K, V, key_mask=None):
    """Per element: softmax_j(Σ_k Q_ik K_jk / √d + M_j) then weights·V."""
    lq, lk, d = len(Q), len(K), len(Q[0])
    key_mask = key_mask if key_mask is not None else [0.0] * lk
    weights, out = [], []
    for i in range(lq):
        logits = []
        for j in range(lk):
            dot = 0.0
            for k in range(d):
                dot += Q[i][k] * K[j][k]
            logits.append(dot / math.sqrt(d) + key_mask[j])
        w = softmax_row(logits)
        weights.append(w)
        out.append(weighted_rows(w, V))
    return np.array(out), np.array(weights)


def difference_scores(Q, K):
    """β[i][j] = Σ_k (Q[i][k] − K[j][k]), literally."""
    lq, lk, d = len(Q), len(K), len(Q[0])
    beta = np.zeros((lq, lk))
    for i in range(lq):
        for j in range(lk):
            s = 0.0
            for k in range(d):
                s += Q[i][k] - K[j][k]
            beta[i, j] = s
    return beta


def difference(Q, K, V, key_mask=None):
    lq, lk, d = len(Q), len(K), len(Q[0])
    key_mask = key_mask if key_mask is not None else [0.0] * lk
    beta = difference_scores(Q, K)
    weights, out = [], []
    for i in range(lq):
        w = softmax_row([(beta[i, j] + key_mask[j]) / math.sqrt(d) for j in range(lk)])
        weights.append(w)
        out.append(weighted_rows(w, V))
    return np.array(out), np.array(weights)


def _vecmat(x, W):
    """xᵀW for a list x and 2-D array W."""
    return [sum(x[r] * W[r][c] for r in range(len(x))) for c in range(len(W[0]))]


def _tanh(xs):
    return [math.tanh(x) for x in xs]


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def guided(query_row, S, key_mask, w_sig, w_q, b_q, w_score, mode):
    q = [x + b for x, b in zip(_vecmat(query_row, w_q), b_q[0])]
    scores = []
    for j in range(len(S)):
        s = _vecmat(S[j], w_sig)
        h = _tanh([a + b for a, b in zip(s, q)]) if mode == "additive" else _tanh(s + q)
        scores.append(sum(h[c] * w_score[c][0] for c in range(len(h))) + key_mask[j])
    w = softmax_row(scores)
    return weighted_rows(w, S), w


def fuse(A, D, key_mask, P, mode="additive", guide=True):
    """Whole fusion pipeline position by position. ``P`` maps names to arrays."""
    A, D = [list(r) for r in np.asarray(A)], [list(r) for r in np.asarray(D)]
    out, gs, fs = [], [], []
    for i in range(len(A)):
        a, d = A[i], D[i]
        if guide:
            d_bar, _ = guided(a, D, key_mask, P["w_sig_d"], P["w_q_a"], P["b_q_a"], P["w_score_d"], mode)
            a_bar, _ = guided(d_bar, A, key_mask, P["w_sig_a"], P["w_q_d"], P["b_q_d"], P["w_score_a"], mode)
        else:
            d_bar, a_bar = d, a
        d_star = _tanh([x + b for x, b in zip(_vecmat(d + d_bar, P["w_dstar"]), P["b_dstar"][0])])
        a_star = _tanh([x + b for x, b in zip(_vecmat(a + a_bar, P["w_astar"]), P["b_astar"][0])])
        d_hat = _tanh([x + b for x, b in zip(_vecmat(d_star, P["w_dhat"]), P["b_dhat"][0])])
        a_hat = _tanh([x + b for x, b in zip(_vecmat(a_star, P["w_ahat"]), P["b_ahat"][0])])
        g = _sigmoid(_vecmat(d_hat + a_hat, P["w_g"])[0] + P["b_g"][0][0])
        v = [g * x + (1 - g) * y for x, y in zip(a_hat, d_hat)]
        wv = [x + b for x, b in zip(_vecmat(v, P["w_v"]), P["b_v"][0])]
        f = _sigmoid(_vecmat(a + wv, P["w_f"])[0] + P["b_f"][0][0])
        l_i = [f * x for x in _tanh([x + b for x, b in zip(_vecmat(v, P["w_l"]), P["b_l"][0])])]
        out.append(l_i)
        gs.append(g)
        fs.append(f)
    return np.array(out), np.array(gs), np.array(fs)


def random_params(rng, d_k, d_h, d_g, mode="additive", scale=0.5):
    sw = d_g if mode == "additive" else 2 * d_g
    shapes = {
        "w_sig_d": (d_k, d_g), "w_q_a": (d_k, d_g), "b_q_a": (1, d_g), "w_score_d": (sw, 1),
        "w_sig_a": (d_k, d_g), "w_q_d": (d_k, d_g), "b_q_d": (1, d_g), "w_score_a": (sw, 1),
        "w_dstar": (2 * d_k, d_k), "b_dstar": (1, d_k), "w_astar": (2 * d_k, d_k), "b_astar": (1, d_k),
        "w_dhat": (d_k, d_h), "b_dhat": (1, d_h), "w_ahat": (d_k, d_h), "b_ahat": (1, d_h),
        "w_g": (2 * d_h, 1), "b_g": (1, 1), "w_v": (d_h, d_k), "b_v": (1, d_k),
        "w_f": (2 * d_k, 1), "b_f": (1, 1), "w_l": (d_h, d_k), "b_l": (1, d_k),
    }
    return {k: rng.normal(0, scale, size=s) for k, s in shapes.items()}

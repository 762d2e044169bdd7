"""Scalar pure-Python transformer used as an oracle for the numpy model.

Everything is lists of floats and explicit loops; no numpy.
"""

import math


def tolist(w):
    return {k: v.tolist() for k, v in w.items()}


def vecmat(x, W):
    return [sum(x[i] * W[i][j] for i in range(len(x))) for j in range(len(W[0]))]


def add(a, b):
    return [x + y for x, y in zip(a, b)]


def linear(x, w, name):
    return add(vecmat(x, w[name + ".weight"]), w[name + ".bias"])


def layer_norm(x, w, name, eps=1e-12):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [(v - mu) / math.sqrt(var + eps) * g + b
            for v, g, b in zip(x, w[name + ".scale"], w[name + ".bias"])]


def gelu(v):
    return 0.5 * v * (1 + math.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v ** 3)))


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def mha(xq, xkv, allowed, w, name, n_heads):
    """``allowed[i][j]``: query i may attend to key j."""
    Q = [linear(x, w, name + ".q") for x in xq]
    K = [linear(x, w, name + ".k") for x in xkv]
    V = [linear(x, w, name + ".v") for x in xkv]
    D = len(Q[0])
    dh = D // n_heads
    out = []
    for i in range(len(xq)):
        ctx = []
        for h in range(n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            keys = [j for j in range(len(xkv)) if allowed[i][j]]
            scores = [sum(a * b for a, b in zip(Q[i][sl], K[j][sl])) / math.sqrt(dh) for j in keys]
            p = softmax(scores)
            ctx += [sum(pj * V[j][sl][d] for pj, j in zip(p, keys)) for d in range(dh)]
        out.append(linear(ctx, w, name + ".o"))
    return out


def ffn(x, w, name):
    return linear([gelu(v) for v in linear(x, w, name + ".in")], w, name + ".out")


def embed(ids, w, tok, pos, norm):
    return [layer_norm(add(w[tok][t], w[pos][i]), w, norm) for i, t in enumerate(ids)]


def encoder(ids, w, n_layers, n_heads):
    x = embed(ids, w, "embeddings.token", "embeddings.position", "embeddings.norm")
    T = len(ids)
    full = [[True] * T for _ in range(T)]
    for layer in range(n_layers):
        p = f"encoder.{layer}"
        a = mha(x, x, full, w, p + ".attention", n_heads)
        h = [layer_norm(add(xi, ai), w, p + ".attention_norm") for xi, ai in zip(x, a)]
        x = [layer_norm(add(hi, ffn(hi, w, p + ".ffn")), w, p + ".ffn_norm") for hi in h]
    return x


def classifier_logits(ids, w, n_layers, n_heads):
    cls = encoder(ids, w, n_layers, n_heads)[0]
    z = [max(v, 0.0) for v in linear(cls, w, "pre_classifier")]
    return linear(z, w, "classifier")


def decoder_logits(src, dec, w, n_layers, n_dec_layers, n_heads):
    """Logits at every decoder position for teacher-forced input ``dec``."""
    enc = encoder(src, w, n_layers, n_heads)
    y = embed(dec, w, "embeddings.token", "decoder.position", "decoder.norm")
    Td = len(dec)
    causal = [[j <= i for j in range(Td)] for i in range(Td)]
    cross = [[True] * len(src) for _ in range(Td)]
    for layer in range(n_dec_layers):
        p = f"decoder.{layer}"
        a = mha(y, y, causal, w, p + ".self_attention", n_heads)
        h1 = [layer_norm(add(u, v), w, p + ".self_attention_norm") for u, v in zip(y, a)]
        c = mha(h1, enc, cross, w, p + ".cross_attention", n_heads)
        h2 = [layer_norm(add(u, v), w, p + ".cross_attention_norm") for u, v in zip(h1, c)]
        y = [layer_norm(add(u, ffn(u, w, p + ".ffn")), w, p + ".ffn_norm") for u in h2]
    return [linear(u, w, "lm_head") for u in y]

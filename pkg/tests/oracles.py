"""Plain-Python reference implementations used as test oracles.

Nothing here imports the package or numpy: every value comes from explicit
loops over nested lists with ``math`` so that a bug in the vectorized code
cannot be mirrored here.
"""

import math


def conv1x1(x, w, b):
    C, H, W = len(x), len(x[0]), len(x[0][0])
    return [[[sum(w[k][c] * x[c][i][j] for c in range(C)) + b[k]
              for j in range(W)] for i in range(H)] for k in range(len(w))]


def softmax_grid(ch):
    flat = [v for row in ch for v in row]
    m = max(flat)
    e = [[math.exp(v - m) for v in row] for row in ch]
    z = sum(v for row in e for v in row)
    return [[v / z for v in row] for row in e]


def grid_mean(ch):
    flat = [v for row in ch for v in row]
    return sum(flat) / len(flat)


def sigmoid(t):
    return 1.0 / (1.0 + math.exp(-t))


def softmax(v):
    m = max(v)
    e = [math.exp(t - m) for t in v]
    z = sum(e)
    return [t / z for t in e]


def cosine(a, b):
    dot = sum(p * q for p, q in zip(a, b))
    na = max(math.sqrt(sum(p * p for p in a)), 1e-12)
    nb = max(math.sqrt(sum(q * q for q in b)), 1e-12)
    return dot / (na * nb)


def forward(x, p, S, use_scu=True, use_global=True, use_arm=True, revision="sigmoid"):
    """Single-image forward pass. ``p`` maps names to nested lists."""
    A = len(p["wa"])
    att = [softmax_grid(ch) for ch in conv1x1(x, p["wa"], p["ba"])]
    sal = conv1x1(x, p["wv"], p["bv"])
    H, W = len(x[0]), len(x[0][0])
    phi_l = [sum(att[n][i][j] * sal[n][i][j] for i in range(H) for j in range(W))
             for n in range(A)]
    phi_g = [grid_mean(sal[n]) for n in range(A)]
    gate = [sigmoid(grid_mean(ch)) for ch in conv1x1(x, p["wg"], p["bg"])]
    if not use_global:
        phi = phi_l[:]
    elif not use_scu:
        phi = [(a + b) / 2 for a, b in zip(phi_l, phi_g)]
    else:
        phi = [g * a + (1 - g) * b for g, a, b in zip(gate, phi_l, phi_g)]
    pre = [grid_mean(ch) for ch in conv1x1(x, p["wr"], p["br"])]
    if not use_arm:
        r = [1.0] * A
    elif revision == "softmax":
        r = softmax(pre)
    else:
        r = [sigmoid(t) for t in pre]
    revised = [[r[n] * S[n][k] for k in range(len(S[0]))] for n in range(A)]
    return {"attention": att, "saliency": sal, "phi_local": phi_l, "phi_global": phi_g,
            "gate": gate, "phi": phi, "revision": r, "revised": revised}


def ce(cosines, target, tau):
    z = [tau * c for c in cosines]
    m = max(z)
    return m + math.log(sum(math.exp(t - m) for t in z)) - z[target]


def harmonic(s, u):
    return 0.0 if s + u == 0 else 2 * s * u / (s + u)


def per_class_top1(pairs, classes):
    accs = []
    for c in classes:
        rows = [(t, p) for t, p in pairs if t == c]
        accs.append(100.0 * sum(1 for t, p in rows if t == p) / len(rows))
    return sum(accs) / len(accs)

"""Independent reference computations used by the tests.

Nothing here imports the package under test: the oracles are plain loops over
Python floats, or a generic LP solver.
"""
import math

import numpy as np
from scipy.optimize import linprog


def lp_transport(a, b, C):
    """Transportation LP solved by HiGHS; returns (cost, coupling)."""
    a, b, C = np.asarray(a, float), np.asarray(b, float), np.asarray(C, float)
    n, m = C.shape
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.r_[a, b], bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return float(res.fun), res.x.reshape(n, m)


def loop_cost(x, y):
    return [[sum((xi - yi) ** 2 for xi, yi in zip(p, q)) for q in y] for p in x]


def brute_mmd(x, y, bandwidths):
    """Biased MMD^2 as an explicit double sum per kernel."""
    x = [list(map(float, r)) for r in x]
    y = [list(map(float, r)) for r in y]

    def k(p, q, g):
        return math.exp(-sum((pi - qi) ** 2 for pi, qi in zip(p, q)) / g)

    total = 0.0
    for g in bandwidths:
        sxx = sum(k(p, q, g) for p in x for q in x) / (len(x) ** 2)
        syy = sum(k(p, q, g) for p in y for q in y) / (len(y) ** 2)
        sxy = sum(k(p, q, g) for p in x for q in y) / (len(x) * len(y))
        total += sxx + syy - 2.0 * sxy
    return total


def brute_pairwise_mean(z, include_self):
    z = [list(map(float, r)) for r in z]
    vals = [sum((a - b) ** 2 for a, b in zip(p, q))
            for i, p in enumerate(z) for j, q in enumerate(z) if include_self or i != j]
    return sum(vals) / len(vals)


def _softmax(xs, tau=1.0):
    mx = max(xs)
    e = [math.exp((v - mx) / tau) for v in xs]
    s = sum(e)
    return [v / s for v in e]


def _matvec_rows(tokens, W):
    """Rows of tokens @ W^T."""
    return [[sum(W[r][c] * t[c] for c in range(len(t))) for r in range(len(W))] for t in tokens]


def scalar_attention(q_tokens, kv_tokens, wq, wk, wv, tau):
    """softmax_tau(mean_features(softmax(Q K^T / sqrt d) V)) with explicit loops."""
    d = len(q_tokens[0])
    Q = _matvec_rows(q_tokens, wq)
    K = _matvec_rows(kv_tokens, wk)
    V = _matvec_rows(kv_tokens, wv)
    pooled = []
    for q in Q:
        scores = _softmax([sum(qi * ki for qi, ki in zip(q, k)) / math.sqrt(d) for k in K])
        out = [sum(scores[t] * V[t][c] for t in range(len(V))) for c in range(len(V[0]))]
        pooled.append(sum(out) / len(out))
    return _softmax(pooled, tau)


def entropy(w):
    return -sum(p * math.log(p) for p in w if p > 0)


def infonce(a, b, temperature, symmetric=True):
    """Row-by-row log-sum-exp cross-entropy over cosine similarities."""
    def unit(r):
        n = math.sqrt(sum(v * v for v in r))
        return [v / n for v in r]

    A = [unit(r) for r in a]
    B = [unit(r) for r in b]
    n = len(A)
    S = [[sum(p * q for p, q in zip(A[i], B[j])) / temperature for j in range(n)] for i in range(n)]

    def direction(M):
        tot = 0.0
        for i in range(n):
            mx = max(M[i])
            lse = mx + math.log(sum(math.exp(v - mx) for v in M[i]))
            tot += lse - M[i][i]
        return tot / n

    fwd = direction(S)
    if not symmetric:
        return fwd
    ST = [[S[j][i] for j in range(n)] for i in range(n)]
    return 0.5 * (fwd + direction(ST))


def mlp_loop(raw, w1, b1, w2, b2):
    out = []
    for x in raw:
        h = [max(0.0, sum(w1[r][c] * x[c] for c in range(len(x))) + b1[0][r]) for r in range(len(w1))]
        out.append([sum(w2[r][c] * h[c] for c in range(len(h))) + b2[0][r] for r in range(len(w2))])
    return out


def mean_cosine_distance(frames, companion):
    def cos(p, q):
        return sum(a * b for a, b in zip(p, q)) / math.sqrt(sum(a * a for a in p) * sum(b * b for b in q))
    return sum(1.0 - cos(f, companion) for f in frames) / len(frames)

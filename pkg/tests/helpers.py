"""Test-only optimisers and fixtures."""
import numpy as np

from tokenalign.ot import solve_transport


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u * k > css - 1.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def entropy_regularised_objective(D, alpha, beta, lam):
    G, u, v, _ = solve_transport(alpha, beta, D)
    H = lambda w: -float(np.sum(w[w > 0] * np.log(w[w > 0])))
    return float(np.sum(G * D)) - lam * (H(alpha) + H(beta)), u, v


def simplex_minimize(D, lam, steps=2000, lr=None):
    """Projected gradient on (alpha, beta) for EMD(alpha, beta; D) - lam (H(alpha) + H(beta)).

    The transport part contributes the dual potentials as its (sub)gradient.
    """
    n, m = D.shape
    alpha, beta = np.full(n, 1.0 / n), np.full(m, 1.0 / m)
    if lr is None:
        lr = 0.1 / max(lam * max(n, m), float(D.max()), 1e-12)
    for _ in range(steps):
        _, u, v = entropy_regularised_objective(D, alpha, beta, lam)
        ga = u + lam * (np.log(np.maximum(alpha, 1e-300)) + 1.0)
        gb = v + lam * (np.log(np.maximum(beta, 1e-300)) + 1.0)
        if lam > 0:
            # keep the iterate interior; the entropy gradient is unbounded at the boundary
            alpha = np.maximum(project_simplex(alpha - lr * ga), 1e-300)
            beta = np.maximum(project_simplex(beta - lr * gb), 1e-300)
            alpha, beta = alpha / alpha.sum(), beta / beta.sum()
        else:
            alpha = project_simplex(alpha - lr * u)
            beta = project_simplex(beta - lr * v)
    return alpha, beta

"""Dense reference recursions used as test oracles."""

import numpy as np


def dense_vogn(grad_seq, cfg, dim):
    """Textbook dense recursion with the same averaging of the empirical Fisher."""
    prec = cfg.prior_precision * np.eye(dim)
    mean = np.zeros(dim)
    buf = np.zeros(dim)
    out = []
    for t, g in enumerate(grad_seq):
        alpha, beta = cfg.rates(t)
        g3 = g if g.ndim == 3 else g[None]
        s, m, _ = g3.shape
        flat = g3.reshape(s * m, dim)
        fisher = cfg.n_total / (m * s) * flat.T @ flat
        prec = (1 - beta) * prec + beta * (fisher + cfg.prior_precision * np.eye(dim))
        ghat = -(cfg.n_total / m) * g3.mean(axis=0).sum(axis=0) + cfg.prior_precision * mean
        buf = cfg.momentum * buf + np.linalg.solve(prec, ghat)
        mean = mean - alpha * buf
        out.append((prec.copy(), mean.copy()))
    return out


def grad_sequence(seed, steps, m, dim, s=1):
    rng = np.random.default_rng(seed)
    return [0.3 * rng.standard_normal((s, m, dim)) for _ in range(steps)]

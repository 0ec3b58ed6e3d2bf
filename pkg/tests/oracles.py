"""Independent reference implementations used by the tests.

Everything here is written with plain Python loops over float64 numpy
arrays so that it shares no code with the torch implementations.
"""

import math

import numpy as np


def lifted_loss_bruteforce(emb, labels, lam, xi, neg_mask=None, bound=True):
    emb = np.asarray(emb, dtype=np.float64)
    m = len(emb)
    total = 0.0
    for i in range(m):
        pos_sum = 0.0
        has_pos = False
        neg_sum = 0.0
        has_neg = False
        for k in range(m):
            s = float(np.dot(emb[i], emb[k]))
            if k != i and labels[k] == labels[i]:
                has_pos = True
                pos_sum += math.exp(lam - s)
                if bound and s > xi:
                    pos_sum += s
            elif labels[k] != labels[i] and (neg_mask is None or neg_mask[i][k]):
                has_neg = True
                neg_sum += math.exp(s)
        if has_pos:
            total += math.log(pos_sum)
        if has_neg:
            total += math.log(neg_sum)
    return total


def entropy_row(p):
    return -sum(x * math.log(x) for x in p if x > 0)


def conditional_entropy_bruteforce(probs):
    return sum(entropy_row(r) for r in probs) / len(probs)


def marginal_entropy_bruteforce(probs):
    n, c = len(probs), len(probs[0])
    mean = [sum(probs[i][j] for i in range(n)) / n for j in range(c)]
    return entropy_row(mean)


def kl_bruteforce(mu, log_var):
    """Per-row KL(N(mu, exp(log_var)) || N(0, 1)) summed over dimensions."""
    out = []
    for mrow, lrow in zip(mu, log_var):
        out.append(sum(0.5 * (m * m + math.exp(lv) - lv - 1.0) for m, lv in zip(mrow, lrow)))
    return out


def kl_numeric_1d(mu, sigma, half_width=12.0, n=200001):
    """KL(N(mu, sigma^2) || N(0, 1)) by trapezoidal integration."""
    lo = min(mu - half_width * sigma, -half_width)
    hi = max(mu + half_width * sigma, half_width)
    x = np.linspace(lo, hi, n)
    logp = -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi)
    logq = -0.5 * x ** 2 - 0.5 * np.log(2 * np.pi)
    return float(np.trapezoid(np.exp(logp) * (logp - logq), x))


def central_difference(fn, x, h=1e-6):
    """Gradient of scalar ``fn`` at float64 array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def alignment_bruteforce(v1, v2, return_indices=False):
    f = len(v1)
    nn = []
    for j in range(f):
        best, best_k = math.inf, 0
        for k in range(f):
            d = math.sqrt(sum((a - b) ** 2 for a, b in zip(v1[j], v2[k])))
            if d < best:
                best, best_k = d, k
        nn.append(best_k)
    # integer numerator, so the value is exact up to the two divisions
    value = sum(abs(j - k) for j, k in enumerate(nn)) / f / f
    return (value, nn) if return_indices else value


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))

"""Reference computations that share no code path with the package under test."""

import itertools
import math

import numpy as np
import torch


def rel_error(analytic, numeric, floor=1e-6):
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


# Five-point stencil: truncation O(h^4), so a wide step keeps roundoff small even
# when the objective is large (lambda = 100 puts it in the hundreds).
_STENCIL = ((2, -1.0), (1, 8.0), (-1, -8.0), (-2, 1.0))


def central_difference(f, param, index, eps=1e-3):
    """d f / d p_i for one flat coordinate of ``param``."""
    flat = param.data.view(-1)
    orig = flat[index].item()
    total = 0.0
    with torch.no_grad():
        for step, w in _STENCIL:
            flat[index] = orig + step * eps
            total += w * float(f())
        flat[index] = orig
    return total / (12 * eps)


def directional_difference(f, params, directions, eps=1e-3):
    originals = [p.detach().clone() for p in params]
    total = 0.0
    with torch.no_grad():
        for step, w in _STENCIL:
            for p, o, d in zip(params, originals, directions):
                p.copy_(o + step * eps * d)
            total += w * float(f())
        for p, o in zip(params, originals):
            p.copy_(o)
    return total / (12 * eps)


def check_gradients(f, named_params, rng, coords_per_param=6, n_dirs=3, eps=1e-3):
    """Max relative error between autograd and five-point central differences.

    Probes a few random coordinates of every parameter plus random directions
    through all parameters jointly.
    """
    names, params = zip(*named_params)
    for p in params:
        p.grad = None
    f().backward()
    grads = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    worst = 0.0
    for name, p, g in zip(names, params, grads):
        n = p.numel()
        for i in rng.choice(n, size=min(coords_per_param, n), replace=False):
            num = central_difference(f, p, int(i), eps)
            worst = max(worst, float(rel_error(g.view(-1)[int(i)].item(), num)))
    for _ in range(n_dirs):
        dirs = [torch.as_tensor(rng.standard_normal(tuple(p.shape)), dtype=p.dtype) for p in params]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        numeric = directional_difference(f, params, dirs, eps)
        worst = max(worst, float(rel_error(analytic, numeric)))
    return worst


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_lstm_cell(x, h, c, W_ih, W_hh, b_ih, b_hh):
    """Gate equations written out per coordinate in plain Python floats (order i, f, g, o)."""
    n = len(h)
    pre = []
    for r in range(4 * n):
        s = b_ih[r] + b_hh[r]
        for j, xj in enumerate(x):
            s += W_ih[r][j] * xj
        for j, hj in enumerate(h):
            s += W_hh[r][j] * hj
        pre.append(s)
    h_new, c_new = [], []
    for q in range(n):
        i = _sigmoid(pre[q])
        f = _sigmoid(pre[n + q])
        g = math.tanh(pre[2 * n + q])
        o = _sigmoid(pre[3 * n + q])
        cq = f * c[q] + i * g
        c_new.append(cq)
        h_new.append(o * math.tanh(cq))
    return h_new, c_new


def cell_params(cell):
    t = lambda a: a.detach().tolist()
    return t(cell.weight_ih), t(cell.weight_hh), t(cell.bias_ih), t(cell.bias_hh)


def scalar_log_softmax(z):
    top = max(z)
    lse = top + math.log(sum(math.exp(v - top) for v in z))
    return [v - lse for v in z]


def exhaustive_best(score_fn, vocab, end_id, max_len, banned=()):
    """Best completed sequence over all token strings of length <= max_len ending in end_id."""
    best, best_score = None, -math.inf
    allowed = [v for v in vocab if v not in banned and v != end_id]
    for L in range(1, max_len + 1):
        for prefix in itertools.product(allowed, repeat=L - 1):
            seq = list(prefix) + [end_id]
            s = score_fn(seq)
            if s > best_score:
                best, best_score = seq, s
    return best, best_score


def ngram_counts_bruteforce(tokens, n):
    out = {}
    for i in range(len(tokens) - n + 1):
        key = tuple(tokens[i:i + n])
        out[key] = out.get(key, 0) + 1
    return out


def lcs_bruteforce(a, b):
    """Longest common subsequence by full quadratic table."""
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]

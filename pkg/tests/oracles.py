"""Independent reference implementations used as test oracles.

These are deliberately naive scalar loops written from the model equations,
sharing no code with the package.
"""
import cmath
import math

import numpy as np


def steering(theta, phi, M, spacing=0.5, axis=(1.0, 0.0, 0.0)):
    u = (math.sin(phi) * math.cos(theta) * axis[0] + math.sin(phi) * math.sin(theta) * axis[1]
         + math.cos(phi) * axis[2])
    return [cmath.exp(2j * math.pi * spacing * m * u) for m in range(M)]


def unit_sample(t, ts):
    return 1.0 if -0.5 <= t / ts < 0.5 else 0.0


def naive_channel(paths, K, D, ts, M, spacing=0.5, axis=(1.0, 0.0, 0.0), pulse=unit_sample):
    """h[k][m] = sum_d sum_l alpha_l exp(-j 2 pi k d / K) p(d ts - tau_l) a_m(theta_l, phi_l)."""
    h = [[0j] * M for _ in range(K)]
    for k in range(K):
        for d in range(D):
            ph = cmath.exp(-2j * math.pi * k * d / K)
            for (alpha, tau, theta, phi) in paths:
                p = pulse(d * ts - tau, ts)
                if p == 0.0:
                    continue
                a = steering(theta, phi, M, spacing, axis)
                for m in range(M):
                    h[k][m] += alpha * ph * p * a[m]
    return np.array(h)


def naive_rate(h, f, snr):
    total = 0.0
    for k in range(len(h)):
        g = sum(h[k][m] * f[m] for m in range(len(f)))
        total += math.log2(1.0 + snr * abs(g) ** 2)
    return total


def naive_best_beam(h, F, snr):
    """1-based index of the first beam with the largest rate."""
    best, best_rate = 1, -1.0
    for i in range(F.shape[1]):
        r = naive_rate(h, F[:, i], snr)
        if r > best_rate:
            best, best_rate = i + 1, r
    return best


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_gru_forward(beams, params, depth, hidden):
    """Step-by-step GRU on one sequence; returns last-layer outputs per step.

    Gates follow z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
    n = tanh(x Wn + (r * h) Un + bn), h' = (1 - z) n + z h, with the column
    blocks of the stacked matrices ordered update, reset, candidate.
    """
    E = params["embedding"]
    xs = [list(E[b - 1]) for b in beams]
    H = hidden
    for q in range(depth):
        Wx, Wh, b = params[f"gru{q}.Wx"], params[f"gru{q}.Wh"], params[f"gru{q}.b"]
        h = [0.0] * H
        outs = []
        for x in xs:
            ax = [sum(x[i] * Wx[i][j] for i in range(len(x))) + b[j] for j in range(3 * H)]
            ah = [sum(h[i] * Wh[i][j] for i in range(H)) for j in range(2 * H)]
            z = [sigmoid(ax[j] + ah[j]) for j in range(H)]
            r = [sigmoid(ax[H + j] + ah[H + j]) for j in range(H)]
            rh = [r[i] * h[i] for i in range(H)]
            n = [math.tanh(ax[2 * H + j] + sum(rh[i] * Wh[i][2 * H + j] for i in range(H)))
                 for j in range(H)]
            h = [(1 - z[j]) * n[j] + z[j] * h[j] for j in range(H)]
            outs.append(h)
        xs = outs
    return xs


def scalar_softmax(v):
    m = max(v)
    e = [math.exp(x - m) for x in v]
    s = sum(e)
    return [x / s for x in e]


def central_difference_check(f_and_grad, params, step=1e-5, floor=1e-6):
    """Worst relative error between analytic and central-difference gradients.

    ``f_and_grad()`` returns (loss, grads) for the current contents of the
    ``params`` dict, which is perturbed in place one entry at a time.  The
    relative error of a pair (a, n) is |a - n| / max(|a| + |n|, floor).
    """
    _, grads = f_and_grad()
    worst = 0.0
    for k, v in params.items():
        flat = v.reshape(-1)
        g = grads[k].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp, _ = f_and_grad()
            flat[i] = old - step
            fm, _ = f_and_grad()
            flat[i] = old
            num = (fp - fm) / (2 * step)
            err = abs(g[i] - num) / max(abs(g[i]) + abs(num), floor)
            worst = max(worst, err)
    return worst

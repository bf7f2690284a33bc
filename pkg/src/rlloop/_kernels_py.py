"""Pure-Python reference versions of the compiled kernels in ``_kernels.pyx``.

Both modules expose the same functions with the same argument order. The
scalar arithmetic here is written in the same order as the Cython code so the
slice simulation agrees bit for bit.
"""

import math

import numpy as np


def simulate_fixed(arrivals, noise, allocation_mc, per_ue_demand_mc, target_rate_mbps,
                   exponent, session_len):
    """Serve an arrival sequence under a constant CPU limit.

    Returns ``(active_users, cpu_usage_mc, throughput_mbps)`` arrays.
    """
    n = len(arrivals)
    users = np.empty(n, dtype=np.int64)
    usage = np.empty(n, dtype=np.float64)
    thr = np.empty(n, dtype=np.float64)
    window = 0
    for t in range(n):
        window += int(arrivals[t])
        if t >= session_len:
            window -= int(arrivals[t - session_len])
        demand = window * per_ue_demand_mc
        served = allocation_mc if allocation_mc < demand else demand
        u = served * (1.0 + float(noise[t]))
        if u < 0.0:
            u = 0.0
        if window > 0:
            phi = allocation_mc / demand
            if phi > 1.0:
                phi = 1.0
            q = target_rate_mbps * math.pow(phi, exponent)
        else:
            q = target_rate_mbps
        users[t] = window
        usage[t] = u
        thr[t] = q
    return users, usage, thr


def gae(rewards, values, next_values, dones, gamma, lam):
    """Backward generalized-advantage recursion (no normalization)."""
    n = len(rewards)
    adv = np.empty(n, dtype=np.float64)
    running = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - float(dones[t])
        delta = float(rewards[t]) + gamma * float(next_values[t]) * nonterminal - float(values[t])
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv


def mlp_forward(x, weights, biases):
    """Scalar output of a tanh MLP for a single input vector.

    Raises ValueError if any weight or bias is NaN or infinite.
    """
    for a in (*weights, *biases):
        if not np.isfinite(a).all():
            raise ValueError("non-finite parameter")
    h = np.asarray(x, dtype=np.float64)
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ w + b)
    return float((h @ weights[-1] + biases[-1])[0])

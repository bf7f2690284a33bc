# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled hot loops: fixed-allocation slice simulation, GAE and MLP inference."""

import numpy as np
from libc.math cimport pow, tanh


def simulate_fixed(const long long[::1] arrivals, const double[::1] noise,
                   double allocation_mc, double per_ue_demand_mc,
                   double target_rate_mbps, double exponent, Py_ssize_t session_len):
    cdef Py_ssize_t n = arrivals.shape[0], t
    users = np.empty(n, dtype=np.int64)
    usage = np.empty(n, dtype=np.float64)
    thr = np.empty(n, dtype=np.float64)
    cdef long long[::1] users_v = users
    cdef double[::1] usage_v = usage
    cdef double[::1] thr_v = thr
    cdef long long window = 0
    cdef double demand, served, u, phi, q
    for t in range(n):
        window += arrivals[t]
        if t >= session_len:
            window -= arrivals[t - session_len]
        demand = window * per_ue_demand_mc
        served = allocation_mc if allocation_mc < demand else demand
        u = served * (1.0 + noise[t])
        if u < 0.0:
            u = 0.0
        if window > 0:
            phi = allocation_mc / demand
            if phi > 1.0:
                phi = 1.0
            q = target_rate_mbps * pow(phi, exponent)
        else:
            q = target_rate_mbps
        users_v[t] = window
        usage_v[t] = u
        thr_v[t] = q
    return users, usage, thr


def gae(const double[::1] rewards, const double[::1] values,
        const double[::1] next_values, const double[::1] dones,
        double gamma, double lam):
    cdef Py_ssize_t n = rewards.shape[0], t
    adv = np.empty(n, dtype=np.float64)
    cdef double[::1] adv_v = adv
    cdef double running = 0.0, nonterminal, delta
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values[t] * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv_v[t] = running
    return adv


cdef double[256] _buf_a
cdef double[256] _buf_b
cdef double[256] _poison


def mlp_forward(const double[::1] x, list weights, list biases):
    """Scalar output of a tanh MLP for one input; layers up to 256 wide.

    Raises ValueError if any weight or bias is NaN or infinite.
    """
    cdef Py_ssize_t n_layers = len(weights), layer, i, j, n_in, n_out
    cdef const double[:, ::1] w
    cdef const double[::1] b
    cdef double s, wij, poison = 0.0
    cdef const double* wrow
    cdef double* src = _buf_a
    cdef double* dst = _buf_b
    cdef double* tmp
    n_in = x.shape[0]
    if n_in > 256:
        raise ValueError("input wider than 256")
    for i in range(n_in):
        src[i] = x[i]
    for layer in range(n_layers):
        w = weights[layer]
        b = biases[layer]
        n_out = w.shape[1]
        if w.shape[0] != n_in or b.shape[0] != n_out or n_out > 256:
            raise ValueError("layer shape mismatch")
        for j in range(n_out):
            dst[j] = b[j]
            _poison[j] = b[j] * 0.0
        # row-major accumulation; w*0 is NaN exactly when w is NaN or inf
        for i in range(n_in):
            s = src[i]
            wrow = &w[i, 0]
            for j in range(n_out):
                wij = wrow[j]
                dst[j] += s * wij
                _poison[j] += wij * 0.0
        for j in range(n_out):
            poison += _poison[j]
            if layer < n_layers - 1:
                dst[j] = tanh(dst[j])
        tmp = src
        src = dst
        dst = tmp
        n_in = n_out
    if poison != 0.0:
        raise ValueError("non-finite parameter")
    return src[0]

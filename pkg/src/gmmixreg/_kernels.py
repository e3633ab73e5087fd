"""Hot numeric kernels.

Every function here sticks to the numpy subset numba understands, so the same
source serves as the compiled kernel and as the pure-numpy fallback (see
:mod:`gmmixreg._accel`).  Inputs are expected to be C-contiguous float64 arrays;
the public modules take care of that.

Integer codes are used instead of enums because numba cannot dispatch on
Python objects:

* family: 0 = Huber, 1 = Tukey bisquare
* kind:   0 = M, 1 = GM-Mallows, 2 = GM-Schweppe
"""

import math

import numpy as np

from ._accel import jit

HUBER = 0
TUKEY = 1

KIND_M = 0
KIND_MALLOWS = 1
KIND_SCHWEPPE = 2

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# EM exit status
OK = 0
EMPTY_COMPONENT = 1
SINGULAR_GRAM = 2

MAX_CONDITION = 1e12


@jit
def rho_values(family, c, t):
    a = np.abs(t)
    if family == HUBER:
        return np.where(a <= c, 0.5 * t * t, c * a - 0.5 * c * c)
    u2 = np.minimum((t / c) ** 2, 1.0)
    return (c * c / 6.0) * (1.0 - (1.0 - u2) ** 3)


@jit
def psi_values(family, c, t):
    if family == HUBER:
        return np.minimum(np.maximum(t, -c), c)
    u2 = np.minimum((t / c) ** 2, 1.0)
    return t * (1.0 - u2) ** 2


@jit
def weight_values(family, c, t):
    # psi(t)/t with the t -> 0 limit filled in (= 1 for both families)
    if family == HUBER:
        return c / np.maximum(np.abs(t), c)
    u2 = np.minimum((t / c) ** 2, 1.0)
    return (1.0 - u2) ** 2


@jit
def chi_values(family, c, t):
    if family == HUBER:
        return 0.5 * np.minimum(t * t, c * c)
    return psi_values(family, c, t) * t - rho_values(family, c, t)


@jit
def log_densities(X, y, B, sigma, pi):
    n = X.shape[0]
    g = B.shape[0]
    L = np.empty((n, g))
    for i in range(g):
        t = (y - X @ B[i]) / sigma[i]
        L[:, i] = math.log(pi[i]) - HALF_LOG_2PI - math.log(sigma[i]) - 0.5 * t * t
    return L


@jit
def e_step(X, y, B, sigma, pi):
    """Posterior membership probabilities and the mixture log-likelihood."""
    L = log_densities(X, y, B, sigma, pi)
    n, g = L.shape
    shift = L[:, 0].copy()
    for i in range(1, g):
        shift = np.maximum(shift, L[:, i])
    Z = np.empty((n, g))
    total = np.zeros(n)
    for i in range(g):
        Z[:, i] = np.exp(L[:, i] - shift)
        total += Z[:, i]
    for i in range(g):
        Z[:, i] = Z[:, i] / total
    return Z, np.sum(shift + np.log(total))


@jit
def coefficient_weights(kind, family, c, z, t, lev):
    """Per-observation weight z* w(x) entering the weighted normal equations.

    For Schweppe, psi(t/w)/t * w == W*(t/w), so no division by t is needed.
    """
    if kind == KIND_SCHWEPPE:
        return z * weight_values(family, c, t / lev)
    return z * weight_values(family, c, t) * lev


@jit
def normal_equations(X, y, wt):
    Xw = X * wt.reshape((-1, 1))
    return Xw.T @ X, Xw.T @ y


@jit
def solve_weighted(X, y, wt):
    """Weighted least squares; returns (beta, ok)."""
    G, rhs = normal_equations(X, y, wt)
    ev = np.linalg.eigvalsh(G)
    if not (ev[0] > 0.0 and ev[-1] <= MAX_CONDITION * ev[0]):
        return np.zeros(X.shape[1]), False
    return np.linalg.solve(G, rhs), True


@jit
def pack(out, pi, B, sigma):
    g, p = B.shape
    out[:g] = pi
    out[g:g + g * p] = B.ravel()
    out[g + g * p:] = sigma


@jit
def em_run(X, y, lev, kind, family, c, a, B0, sigma0, pi0, tol, max_iter, sigma_floor, empty_eps, history):
    """EM-type iterations from a given starting point.

    Returns ``(B, sigma, pi, iterations, converged, status, bad_component)``.
    ``history`` must have ``max_iter + 1`` rows; row k holds the packed
    parameter vector after iteration k.
    """
    n, p = X.shape
    g = B0.shape[0]
    B = B0.copy()
    sigma = sigma0.copy()
    pi = pi0.copy()
    pack(history[0], pi, B, sigma)
    floor2 = sigma_floor * sigma_floor
    status = OK
    bad = -1
    converged = False
    it = 0
    while it < max_iter:
        Z, _ = e_step(X, y, B, sigma, pi)
        mass = Z.sum(axis=0)
        for i in range(g):
            if not mass[i] > empty_eps:
                status = EMPTY_COMPONENT
                bad = i
        if status != OK:
            break
        new_B = np.empty_like(B)
        new_sigma = np.empty_like(sigma)
        for i in range(g):
            z = Z[:, i]
            t = (y - X @ B[i]) / sigma[i]
            beta, ok = solve_weighted(X, y, coefficient_weights(kind, family, c, z, t, lev))
            if not ok:
                status = SINGULAR_GRAM
                bad = i
                break
            new_B[i] = beta
            s2 = sigma[i] * sigma[i] / (a * mass[i]) * np.sum(z * chi_values(family, c, t))
            new_sigma[i] = math.sqrt(max(s2, floor2))
        if status != OK:
            break
        new_pi = mass / n
        step = np.sum((new_pi - pi) ** 2) + np.sum((new_B - B) ** 2) + np.sum((new_sigma - sigma) ** 2)
        B = new_B
        sigma = new_sigma
        pi = new_pi
        it += 1
        pack(history[it], pi, B, sigma)
        if math.sqrt(step) < tol:
            converged = True
            break
    return B, sigma, pi, it, converged, status, bad


@jit
def subset_moments(X, idx):
    S = X[idx]
    m = S.sum(axis=0) / idx.shape[0]
    D = S - m
    return m, D.T @ D / idx.shape[0]


@jit
def squared_distances(X, m, C):
    D = X - m
    sol = np.linalg.solve(C, D.T.copy())
    return np.sum(D.T * sol, axis=0)


@jit
def concentrate(X, idx, h, max_steps):
    """C-steps from subset ``idx``; returns (sorted h-support, log det)."""
    m, C = subset_moments(X, idx)
    sign, logdet = np.linalg.slogdet(C)
    support = np.sort(idx)
    if sign <= 0.0:
        return support, -np.inf
    for _ in range(max_steps):
        d = squared_distances(X, m, C)
        new = np.sort(np.argsort(d, kind="mergesort")[:h])
        if new.shape[0] == support.shape[0] and np.all(new == support):
            break
        m2, C2 = subset_moments(X, new)
        sign2, logdet2 = np.linalg.slogdet(C2)
        if sign2 <= 0.0:
            return new, -np.inf
        if new.shape[0] == support.shape[0] and logdet2 >= logdet:
            break
        support, m, C, logdet = new, m2, C2, logdet2
    return support, logdet


@jit
def mcd_starts(X, starts, h, n_steps):
    """Run ``n_steps`` C-steps from each random start.

    ``starts[k]`` lists candidate indices; the first p+1 form the elemental
    subset and later ones are appended only while its covariance is singular.
    A start that never becomes non-singular yields log det = +inf.
    """
    n_starts, width = starts.shape
    p = X.shape[1]
    supports = np.zeros((n_starts, h), dtype=np.int64)
    logdets = np.full(n_starts, np.inf)
    for k in range(n_starts):
        size = p + 1
        while size <= width:
            _, C = subset_moments(X, starts[k, :size])
            sign, _ = np.linalg.slogdet(C)
            if sign > 0.0:
                break
            size += 1
        if size > width:
            continue
        support, logdet = concentrate(X, starts[k, :size], h, n_steps)
        if support.shape[0] == h:
            supports[k] = support
            logdets[k] = logdet
    return supports, logdets

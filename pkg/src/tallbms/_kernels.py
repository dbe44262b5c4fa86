"""Compiled inner loops shared by every optimizer.

All GLM arithmetic that runs per observation lives here so that IRLS,
gradient descent, BSGD and S-IRLS perform bit-identical operations when
their configurations coincide (the collapse identities rely on it).
Families are passed as small integer codes.
"""

import math

import numpy as np
from numba import njit

GAUSSIAN = 0
BERNOULLI = 1

MU_EPS = 1e-12
XI_FLOOR = 1e-12
SIGMA2_FLOOR = 1e-12
PIVOT_RTOL = 1e-10
LOG_2PI = math.log(2.0 * math.pi)

OK = 0
DIVERGED = 1
RANK_DEFICIENT = 2


@njit(cache=True)
def inv_link(fam, eta):
    if fam == GAUSSIAN:
        return eta
    if eta >= 0.0:
        mu = 1.0 / (1.0 + math.exp(-eta))
    else:
        e = math.exp(eta)
        mu = e / (1.0 + e)
    if mu < MU_EPS:
        mu = MU_EPS
    elif mu > 1.0 - MU_EPS:
        mu = 1.0 - MU_EPS
    return mu


@njit(cache=True)
def working_row(fam, eta, y, sqrt_weights):
    """Return (mu, xi, var_mu, w, z) for one observation."""
    if fam == GAUSSIAN:
        mu = eta
        xi = 1.0
        var = 1.0
    else:
        mu = inv_link(fam, eta)
        var = mu * (1.0 - mu)
        xi = var
        if xi < XI_FLOOR:
            xi = XI_FLOOR
    w = xi * xi / var
    if sqrt_weights:
        w = math.sqrt(w)
    if fam == GAUSSIAN:
        # eta + (y - eta) is y up to rounding; exact y keeps every Gaussian step identical.
        z = y
    else:
        z = eta + (y - mu) / xi
    return mu, xi, var, w, z


@njit(cache=True)
def working_all(fam, eta, y, sqrt_weights):
    n = eta.shape[0]
    out = np.empty((5, n))
    for i in range(n):
        out[0, i], out[1, i], out[2, i], out[3, i], out[4, i] = working_row(
            fam, eta[i], y[i], sqrt_weights)
    return out


@njit(cache=True)
def deviance_row(fam, y, mu):
    if fam == GAUSSIAN:
        r = y - mu
        return r * r
    # y is exactly 0 or 1, so one log suffices.
    if y == 1.0:
        return -2.0 * math.log(mu)
    return -2.0 * math.log(1.0 - mu)


@njit(cache=True)
def row_eta(X, r, beta):
    s = 0.0
    for j in range(X.shape[1]):
        s += X[r, j] * beta[j]
    return s


@njit(cache=True)
def start_eta(fam, y):
    """Linear predictor at the family's starting mean, as in glm.fit."""
    n = y.shape[0]
    eta = np.empty(n)
    for i in range(n):
        if fam == GAUSSIAN:
            eta[i] = y[i]
        else:
            mu = (y[i] + 0.5) / 2.0
            eta[i] = math.log(mu / (1.0 - mu))
    return eta


@njit(cache=True)
def start_weight(fam, y, sqrt_weights):
    """IRLS weight at the starting mean; equals working_row's w there."""
    if fam == GAUSSIAN:
        return 1.0
    mu = (y + 0.5) / 2.0
    w = mu * (1.0 - mu)
    if sqrt_weights:
        w = math.sqrt(w)
    return w


@njit(cache=True)
def start_rows(fam, y, rows, eta):
    for k in range(rows.shape[0]):
        r = rows[k]
        if fam == GAUSSIAN:
            eta[k] = y[r]
        else:
            mu = (y[r] + 0.5) / 2.0
            eta[k] = math.log(mu / (1.0 - mu))


@njit(cache=True)
def loglik_deviance(X, y, fam, beta, dispersion):
    """Full-data (log-likelihood, deviance); dispersion <= 0 means profiled."""
    n = X.shape[0]
    dev = 0.0
    for i in range(n):
        mu = inv_link(fam, row_eta(X, i, beta))
        dev += deviance_row(fam, y[i], mu)
    if fam == GAUSSIAN:
        s2 = dispersion
        if s2 <= 0.0:
            s2 = dev / n
            if s2 < SIGMA2_FLOOR:
                s2 = SIGMA2_FLOOR
        ll = -0.5 * n * (LOG_2PI + math.log(s2)) - 0.5 * dev / s2
    else:
        ll = -0.5 * dev
    return ll, dev


@njit(cache=True)
def unit_score(X, y, fam, beta, rows):
    """X_S^T (y_S - mu_S): canonical-link score with unit dispersion."""
    m = X.shape[1]
    g = np.zeros(m)
    for k in range(rows.shape[0]):
        r = rows[k]
        resid = y[r] - inv_link(fam, row_eta(X, r, beta))
        for j in range(m):
            g[j] += X[r, j] * resid
    return g


@njit(cache=True)
def chol_solve(A, b):
    """Solve A x = b for symmetric A by Cholesky; ok=False on a vanishing pivot."""
    m = b.shape[0]
    L = np.zeros((m, m))
    x = np.zeros(m)
    for j in range(m):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > PIVOT_RTOL * A[j, j]) or not (s > 0.0):
            return x, False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, m):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    v = np.empty(m)
    for i in range(m):
        t = b[i]
        for k in range(i):
            t -= L[i, k] * v[k]
        v[i] = t / L[i, i]
    for i in range(m - 1, -1, -1):
        t = v[i]
        for k in range(i + 1, m):
            t -= L[k, i] * x[k]
        x[i] = t / L[i, i]
    return x, True


@njit(cache=True)
def wls_solve(X, rows, w, z):
    """beta = (X_S^T W X_S)^{-1} X_S^T W z with w, z aligned to rows."""
    m = X.shape[1]
    A = np.zeros((m, m))
    b = np.zeros(m)
    for k in range(rows.shape[0]):
        r = rows[k]
        wk = w[k]
        for i in range(m):
            xi = X[r, i] * wk
            b[i] += xi * z[k]
            for j in range(i + 1):
                A[i, j] += xi * X[r, j]
    for i in range(m):
        for j in range(i):
            A[j, i] = A[i, j]
    return chol_solve(A, b)


@njit(cache=True)
def fill_working(X, y, fam, rows, eta, sqrt_weights, w, z):
    for k in range(rows.shape[0]):
        _, _, _, wk, zk = working_row(fam, eta[k], y[rows[k]], sqrt_weights)
        w[k] = wk
        z[k] = zk


@njit(cache=True)
def irls_kernel(X, y, fam, tol, max_iter, sqrt_weights):
    n, m = X.shape
    rows = np.arange(n)
    eta = start_eta(fam, y)
    w = np.empty(n)
    z = np.empty(n)
    beta = np.zeros(m)
    trace = np.empty(max_iter)
    status = OK
    converged = False
    it = 0
    while it < max_iter:
        fill_working(X, y, fam, rows, eta, sqrt_weights, w, z)
        new_beta, ok = wls_solve(X, rows, w, z)
        if not ok:
            status = RANK_DEFICIENT
            break
        beta = new_beta
        dev = 0.0
        for i in range(n):
            eta[i] = row_eta(X, i, beta)
            dev += deviance_row(fam, y[i], inv_link(fam, eta[i]))
        trace[it] = dev
        it += 1
        if not math.isfinite(dev):
            status = DIVERGED
            break
        g = unit_score(X, y, fam, beta, rows)
        if np.max(np.abs(g)) < tol:
            converged = True
            break
    return beta, trace[:it], it, converged, status


@njit(cache=True)
def sample_uniform(n, k, rng, taken, out):
    """k distinct indices from range(n) (Floyd); k == n gives range order."""
    if k == n:
        for i in range(n):
            out[i] = i
        return
    j = 0
    for t in range(n - k, n):
        r = int(rng.random() * (t + 1))
        if taken[r]:
            r = t
        taken[r] = True
        out[j] = r
        j += 1
    for i in range(k):
        taken[out[i]] = False


@njit(cache=True)
def fenwick_build(vals):
    n = vals.shape[0]
    tree = np.zeros(n + 1)
    for i in range(n):
        tree[i + 1] += vals[i]
        parent = (i + 1) + ((i + 1) & -(i + 1))
        if parent <= n:
            tree[parent] += tree[i + 1]
    return tree


@njit(cache=True)
def fenwick_add(tree, i, delta):
    n = tree.shape[0] - 1
    i += 1
    while i <= n:
        tree[i] += delta
        i += i & -i


@njit(cache=True)
def fenwick_total(tree):
    n = tree.shape[0] - 1
    s = 0.0
    i = n
    while i > 0:
        s += tree[i]
        i -= i & -i
    return s


@njit(cache=True)
def fenwick_find(tree, u):
    n = tree.shape[0] - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] < u:
            pos = nxt
            u -= tree[nxt]
        step //= 2
    return pos


@njit(cache=True)
def sample_weighted(tree, vals, k, rng, taken, out):
    """k distinct indices drawn successively with probability proportional to vals.

    k == n gives range order.
    """
    n = vals.shape[0]
    if k == n:
        for i in range(n):
            out[i] = i
        return
    for j in range(k):
        total = fenwick_total(tree)
        i = fenwick_find(tree, rng.random() * total)
        if i >= n or taken[i] or vals[i] <= 0.0:
            i = 0
            while taken[i] or vals[i] <= 0.0:
                i += 1
        taken[i] = True
        fenwick_add(tree, i, -vals[i])
        out[j] = i
    for j in range(k):
        i = out[j]
        taken[i] = False
        fenwick_add(tree, i, vals[i])


@njit(cache=True)
def subsample_deviance(X, y, fam, beta, rows, eta):
    dev = 0.0
    for k in range(rows.shape[0]):
        r = rows[k]
        eta[k] = row_eta(X, r, beta)
        dev += deviance_row(fam, y[r], inv_link(fam, eta[k]))
    return dev


@njit(cache=True)
def sirls_kernel(X, y, fam, n_s, T, tau0, tau_d, t_const, delta_expl, eps_w,
                 sqrt_weights, rng):
    """Subsampling IRLS with cooling and exploding-deviance backtracking.

    Returns (beta, path, dev_trace, tau_trace, exploded, iterations, status).
    path[t] is the iterate after iteration t+1 (post-rollback).
    """
    n, m = X.shape
    vals = np.empty(n)
    for i in range(n):
        vals[i] = start_weight(fam, y[i], sqrt_weights) + eps_w
    tree = fenwick_build(vals)
    taken = np.zeros(n, dtype=np.bool_)
    rows = np.empty(n_s, dtype=np.int64)
    sample_weighted(tree, vals, n_s, rng, taken, rows)
    eta = np.empty(n_s)
    start_rows(fam, y, rows, eta)
    w = np.empty(n_s)
    z = np.empty(n_s)

    path = np.zeros((T, m))
    dev_trace = np.empty(T)
    tau_trace = np.empty(T)
    exploded = np.zeros(T, dtype=np.bool_)
    tau_scale = 1.0
    beta = np.zeros(m)
    status = OK
    it = 0
    failures = 0
    while it < T:
        fill_working(X, y, fam, rows, eta, sqrt_weights, w, z)
        for k in range(n_s):
            r = rows[k]
            nv = w[k] + eps_w
            fenwick_add(tree, r, nv - vals[r])
            vals[r] = nv
        beta_star, ok = wls_solve(X, rows, w, z)
        if not ok:
            failures += 1
            if failures >= 2:
                status = RANK_DEFICIENT
                break
            sample_weighted(tree, vals, n_s, rng, taken, rows)
            if it == 0:
                start_rows(fam, y, rows, eta)
            else:
                subsample_deviance(X, y, fam, beta, rows, eta)
            continue
        failures = 0
        tau = tau_scale * tau0 * tau_d ** max(it + 1 - t_const, 0)
        if it == 0:
            beta = beta_star
        else:
            beta = tau * beta_star + (1.0 - tau) * path[it - 1]
        sample_weighted(tree, vals, n_s, rng, taken, rows)
        dev = subsample_deviance(X, y, fam, beta, rows, eta)
        if it >= 1:
            prev = dev_trace[it - 1]
            if (dev - prev) / abs(prev) > delta_expl:
                back = path[it - 2] if it >= 2 else path[0]
                beta = back.copy()
                tau_scale *= 0.5
                exploded[it] = True
                dev = subsample_deviance(X, y, fam, beta, rows, eta)
        path[it] = beta
        dev_trace[it] = dev
        tau_trace[it] = tau
        it += 1
    return beta, path[:it], dev_trace[:it], tau_trace[:it], exploded[:it], it, status


@njit(cache=True)
def ascent_kernel(X, y, fam, beta0, alpha0, decay, iters, batch, tol, rng, keep_trace):
    """Stochastic gradient ascent on the mean log-likelihood.

    Each step samples ``batch`` rows without replacement, scales the batch
    score by n/batch (unbiased for the full score) and moves by
    alpha_t * ghat / n.  ``tol < 0`` disables the stopping rule.  Without
    ``keep_trace`` the batch deviance is not computed and the trace is empty.
    Returns (beta, path, dev_trace, iterations, status).
    """
    n, m = X.shape
    beta = beta0.copy()
    path = np.zeros((iters, m))
    trace = np.empty(iters if keep_trace else 0)
    rows = np.empty(batch, dtype=np.int64)
    taken = np.zeros(n, dtype=np.bool_)
    scale = n / batch
    g = np.empty(m)
    new_beta = np.empty(m)
    status = OK
    it = 0
    while it < iters:
        sample_uniform(n, batch, rng, taken, rows)
        g[:] = 0.0
        dev = 0.0
        for k in range(batch):
            r = rows[k]
            mu = inv_link(fam, row_eta(X, r, beta))
            if keep_trace:
                dev += deviance_row(fam, y[r], mu)
            resid = y[r] - mu
            for j in range(m):
                g[j] += X[r, j] * resid
        alpha = alpha0 * decay ** it
        finite = math.isfinite(dev)
        for j in range(m):
            new_beta[j] = beta[j] + alpha * (g[j] * scale) / n
            if not math.isfinite(new_beta[j]):
                finite = False
        if not finite:
            status = DIVERGED
            break
        if keep_trace:
            trace[it] = dev * scale
        path[it] = new_beta
        step = 0.0
        for j in range(m):
            d = abs(new_beta[j] - beta[j])
            if d > step:
                step = d
            beta[j] = new_beta[j]
        it += 1
        if tol >= 0.0 and step <= tol:
            break
    return beta, path[:it], trace[:it], it, status

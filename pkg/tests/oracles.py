"""Independent reference computations used by the test-suite.

Nothing here calls into the recursive filter code; everything is built from
the dense joint Gaussian of all states and observations.
"""

import numpy as np


def joint_gaussian(A, B, Q, R, m0, P0, T):
    """Mean/covariance of the stacked states h_0..h_{T-1} and observations.

    The prior (m0, P0) describes h_{-1}; h_k = A h_{k-1} + w_k.
    Returns (mean_h, cov_hh, obs_matrix, obs_noise) where the stacked
    observations are obs_matrix @ h + noise(obs_noise).
    """
    n = A.shape[0]
    m = B.shape[0]
    powers = [np.eye(n)]
    for _ in range(T + 1):
        powers.append(A @ powers[-1])
    mean = np.concatenate([powers[k + 1] @ m0 for k in range(T)])
    cov = np.zeros((T * n, T * n))
    for k in range(T):
        for l in range(T):
            block = powers[k + 1] @ P0 @ powers[l + 1].T
            for j in range(min(k, l) + 1):
                block = block + powers[k - j] @ Q @ powers[l - j].T
            cov[k * n:(k + 1) * n, l * n:(l + 1) * n] = block
    H = np.kron(np.eye(T), B)
    Rbig = np.kron(np.eye(T), R)
    return mean, cov, H, Rbig, n, m


def condition_marginals(A, B, Q, R, m0, P0, values, observed, upto=None):
    """Posterior marginals of each h_k given observed entries.

    ``values``/``observed`` are (T, m).  With ``upto=None`` condition on
    everything (smoothing); otherwise use only observations at times <= upto.
    """
    T = values.shape[0]
    mean, cov, H, Rbig, n, m = joint_gaussian(A, B, Q, R, m0, P0, T)
    rows = []
    for t in range(T):
        for i in range(m):
            if observed[t, i] and (upto is None or t <= upto):
                rows.append(t * m + i)
    rows = np.array(rows, dtype=int)
    if rows.size:
        Hs = H[rows]
        S = Hs @ cov @ Hs.T + Rbig[np.ix_(rows, rows)]
        C = cov @ Hs.T
        y = values.reshape(-1)[rows]
        post_mean = mean + C @ np.linalg.solve(S, y - Hs @ mean)
        post_cov = cov - C @ np.linalg.solve(S, C.T)
    else:
        post_mean, post_cov = mean, cov
    return [
        (post_mean[k * n:(k + 1) * n], post_cov[k * n:(k + 1) * n, k * n:(k + 1) * n])
        for k in range(T)
    ]


def filtered_oracle(A, B, Q, R, m0, P0, values, observed):
    T = values.shape[0]
    return [
        condition_marginals(A, B, Q, R, m0, P0, values, observed, upto=k)[k]
        for k in range(T)
    ]


def smoothed_oracle(A, B, Q, R, m0, P0, values, observed):
    return condition_marginals(A, B, Q, R, m0, P0, values, observed)


def random_spd(rng, n, scale=1.0):
    X = rng.normal(size=(n, n))
    return scale * (X @ X.T / n + 0.1 * np.eye(n))


def random_instance(rng, n=None, m=None, T=None):
    n = n or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 3))
    T = T or int(rng.integers(1, 7))
    A = rng.normal(size=(n, n)) * 0.7
    B = rng.normal(size=(m, n))
    Q = random_spd(rng, n, 0.5)
    R = random_spd(rng, m, 0.5)
    m0 = rng.normal(size=n)
    P0 = random_spd(rng, n, 2.0)
    values = rng.normal(size=(T, m)) * 2
    observed = rng.random((T, m)) > 0.25
    return A, B, Q, R, m0, P0, values, observed


def expm_harmonic(omega, dt):
    """Closed-form exp([[0,1],[-w^2,0]] dt)."""
    c, s = np.cos(omega * dt), np.sin(omega * dt)
    return np.array([[c, s / omega], [-omega * s, c]])

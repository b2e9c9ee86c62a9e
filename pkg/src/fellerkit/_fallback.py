"""Pure-numpy implementations of the hot kernels.

Semantics are identical to ``_kernels.pyx``; the keyed uniforms are
bit-identical across both backends because they are pure integer hashing.
"""

import numpy as np

BACKEND = "python"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_K_TRAJ = np.uint64(0x9E3779B97F4A7C15)
_K_STEP = np.uint64(0xD1B54A32D192ED03)
_K_SLOT = np.uint64(0x8CB92BA72F3D8DD7)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 1.0 / 9007199254740992.0


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def keyed_uniforms(seed, traj, step, slot):
    """Uniforms in (0, 1) keyed by (seed, trajectory, step, slot)."""
    traj = np.asarray(traj, dtype=np.uint64)
    h = _mix(np.full(traj.shape, seed, dtype=np.uint64) ^ _GOLDEN)
    with np.errstate(over="ignore"):
        h = _mix(h + traj * _K_TRAJ)
        h = _mix(h + np.uint64(step) * _K_STEP)
        h = _mix(h + np.uint64(slot) * _K_SLOT)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO53


def particle_step(X, traj, step, seed, A, b, prob_kind, cumw, theta, offs, lam, gamma, has_flow):
    """Advance every row of ``X`` by one transition; returns (new_X, bad_row or -1)."""
    n, d = X.shape
    N = A.shape[0]
    if has_flow:
        u0 = keyed_uniforms(seed, traj, step, 0)
        dt = -np.log(u0) / gamma
        with np.errstate(over="ignore", invalid="ignore"):
            xi = X * np.exp(dt[:, None] * lam[None, :])
    else:
        xi = X
    u1 = keyed_uniforms(seed, traj, step, 1)
    if prob_kind == 0:
        cum = np.broadcast_to(cumw, (n, N))
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            logits = xi @ theta.T + offs[None, :]
            logits = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            cum = np.cumsum(e, axis=1) / e.sum(axis=1, keepdims=True)
    idx = np.sum(u1[:, None] >= cum, axis=1)
    np.minimum(idx, N - 1, out=idx)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.einsum("nij,nj->ni", A[idx], xi) + b[idx]
    finite = np.all(np.isfinite(out), axis=1)
    bad = -1 if finite.all() else int(np.argmin(finite))
    return out, bad


def greedy_merge(points, order, radius, window, metric_kind, cap):
    """Cluster labels from greedy seed-absorption in the given seed ``order``.

    metric_kind: 0 euclidean, 1 chebyshev, 2 truncated (with ``cap``).
    ``window`` bounds |dx_0| for candidate neighbours.
    """
    n = points.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    by_x = np.argsort(points[:, 0], kind="stable")
    xs = points[by_x, 0]
    k = 0
    for a in order:
        if labels[a] != -1:
            continue
        labels[a] = k
        lo = np.searchsorted(xs, points[a, 0] - window, side="right") if np.isfinite(window) else 0
        hi = np.searchsorted(xs, points[a, 0] + window, side="left") if np.isfinite(window) else n
        cand = by_x[lo:hi]
        cand = cand[labels[cand] == -1]
        if cand.size:
            diff = points[cand] - points[a]
            if metric_kind == 1:
                dist = np.max(np.abs(diff), axis=1)
            else:
                dist = np.sqrt(np.sum(diff * diff, axis=1))
                if metric_kind == 2:
                    dist = np.minimum(dist, cap)
            labels[cand[dist < radius]] = k
        k += 1
    return labels

import numpy as np

from .. import numerics as N


def smoothed_targets(target, epsilon, V):
    q = np.full(V, epsilon / V)
    q[target] += 1.0 - epsilon
    return q


def label_smoothed_loss(log_dist, target, epsilon, V=None):
    """``-sum_y q(y) log_dist[y]`` with ``q = (1 - eps) onehot + eps / V``."""
    log_dist = np.asarray(log_dist, dtype=np.float64)
    V = len(log_dist) if V is None else V
    if len(log_dist) != V:
        raise ValueError(f"distribution has {len(log_dist)} entries, expected {V}")
    if not 0 <= target < V:
        raise IndexError(f"target {target} outside vocabulary of size {V}")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must be in [0, 1)")
    return float(-(smoothed_targets(target, epsilon, V) * log_dist).sum())


def label_smoothed_nll(logp, targets, mask, epsilon):
    """Per-token mean label-smoothed loss over a padded ``(B, T, V)`` batch.

    Returns ``(loss tensor, token count)``.
    """
    logp = N.as_tensor(logp)
    V = logp.shape[-1]
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    ntok = float(mask.sum())
    if ntok == 0:
        raise ValueError("batch has no target tokens")
    weights = np.zeros(logp.shape)
    np.put_along_axis(weights, targets[..., None], 1.0 - epsilon, axis=-1)
    weights += epsilon / V
    weights *= (mask / ntok)[..., None]
    return -N.tsum(logp * weights), int(ntok)

import numpy as np


def fd_grad(f, arr, eps=1e-6, index=None):
    """Central differences of scalar ``f()`` with respect to ``arr`` (modified in place).

    ``index`` restricts the estimate to a list of flat positions.
    """
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    positions = range(flat.size) if index is None else index
    for i in positions:
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        g.reshape(-1)[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(num, ana, index=None):
    num = np.asarray(num, dtype=np.float64).reshape(-1)
    ana = np.asarray(ana, dtype=np.float64).reshape(-1)
    if index is not None:
        num, ana = num[index], ana[index]
    scale = max(np.max(np.abs(num)), np.max(np.abs(ana)), 1e-8)
    return float(np.max(np.abs(num - ana)) / scale)


def entropy_bits(counts) -> float:
    """Total bits of coding ``counts`` with its own empirical distribution."""
    c = np.asarray(counts, dtype=np.float64)
    c = c[c > 0]
    return float(-(c * np.log2(c / c.sum())).sum())

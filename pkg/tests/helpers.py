import numpy as np

# filled by the acceptance suite, printed in the terminal summary
ACCEPTANCE_LINES = []


def numeric_grad(f, arr, eps=1e-4):
    """Central finite differences of the scalar ``f()`` w.r.t. ``arr`` (mutated in place)."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        out[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(analytic, numeric):
    """Max-norm relative error of a gradient block."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-300)
    return float(np.abs(analytic - numeric).max() / scale)

import numpy as np

from foreclassnet import autodiff as ad

FD_STEP = 1e-4
FD_TOL = 1e-5


def numeric_grad(fn, x: np.ndarray, step: float = FD_STEP, probes=None) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of scalar ``fn(x)`` at flat indices ``probes``."""
    flat = x.reshape(-1)
    probes = np.arange(flat.size) if probes is None else np.asarray(probes)
    out = np.empty(len(probes))
    for n, i in enumerate(probes):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn()
        flat[i] = orig - step
        lo = fn()
        flat[i] = orig
        out[n] = (hi - lo) / (2 * step)
    return probes, out


def check_gradient(build, leaves, n_probes: int = 100, rng=None, tol: float = FD_TOL, step: float = FD_STEP) -> float:
    """Compare analytic and central-difference gradients of ``build()``.

    ``build`` returns a scalar Tensor computed from the ``leaves`` tensors. At
    least ``n_probes`` coordinates are probed in total (with replacement when
    the leaves are smaller). Returns the worst relative error.
    """
    rng = rng or np.random.default_rng(0)
    for leaf in leaves:
        leaf.grad = None
    loss = build()
    ad.backward(loss)
    analytic = [leaf.grad.copy() for leaf in leaves]
    sizes = np.array([leaf.size for leaf in leaves])
    worst = 0.0
    per_leaf = max(1, int(np.ceil(n_probes / len(leaves))))
    for leaf, grad in zip(leaves, analytic):
        probes = rng.integers(0, leaf.size, size=per_leaf)
        _, num = numeric_grad(lambda: build().item(), leaf.data, step=step, probes=probes)
        a = grad.reshape(-1)[probes]
        err = np.abs(a - num) / np.maximum(1.0, np.abs(a))
        worst = max(worst, float(err.max()))
    assert sizes.sum() > 0
    assert worst < tol, f"relative gradient error {worst:.3e} exceeds {tol}"
    return worst

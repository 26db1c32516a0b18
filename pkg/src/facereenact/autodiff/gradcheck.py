"""Central finite-difference gradient checks."""
import numpy as np

from .ops import mul, record_kinks, sum_
from .tensor import Parameter, backward


def relative_error(a, b):
    """||a - b|| / max(||a||, ||b||), with a floor for vanishing gradients."""
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-10))


def numeric_grad(f, arrays, index, h=1e-5, entries=None):
    """Central differences of scalar ``f(arrays)`` w.r.t. ``arrays[index]``.

    ``entries`` limits the check to a subset of flat indices.
    """
    x = arrays[index]
    flat = x.reshape(-1)
    idx = range(flat.size) if entries is None else entries
    out = np.zeros(len(idx))
    for n, j in enumerate(idx):
        old = flat[j]
        flat[j] = old + h
        fp = f()
        flat[j] = old - h
        fm = f()
        flat[j] = old
        out[n] = (fp - fm) / (2 * h)
    return out


def check_op(fn, inputs, h=1e-5, seed=0):
    """Worst relative error between backprop and finite differences for ``fn``.

    ``fn`` maps Parameters to a Tensor of any shape; non-scalar outputs are
    contracted with a fixed random weighting so every output entry counts.
    """
    params = [Parameter(np.array(x, dtype=np.float64)) for x in inputs]
    out = fn(*params)
    weight = np.random.default_rng(seed).normal(size=out.shape) if out.data.ndim else 1.0
    backward(sum_(mul(out, weight)) if out.data.ndim else out)

    def scalar():
        return float(np.sum(fn(*params).data * weight))

    worst = 0.0
    for i, p in enumerate(params):
        num = numeric_grad(scalar, [q.data for q in params], i, h)
        worst = max(worst, relative_error(p.grad.reshape(-1), num))
    return worst


def _same_sides(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def sampled_grads(loss_fn, params, h=1e-5, per_param=6, seed=0, avoid_kinks=True):
    """Backprop and finite-difference gradients on a sample of entries.

    ``loss_fn()`` rebuilds the scalar loss from the current parameter values;
    ``params`` is a dict name -> Parameter. With ``avoid_kinks`` an entry is
    skipped when the stencil at +-h moves any relu, leaky_relu or abs input
    across zero: central differences are no reference there.

    Returns ({name: (analytic, numeric)}, number of skipped entries).
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.zero_grad()
    with record_kinks() as base:
        loss = loss_fn()
    backward(loss, list(params.values()))

    def probe():
        with record_kinks() as sides:
            value = float(loss_fn().data)
        return value, sides

    out, skipped = {}, 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        entries, num = [], []
        for j in rng.permutation(p.size):
            if len(entries) == per_param:
                break
            old = flat[j]
            flat[j] = old + h
            fp, sp = probe()
            flat[j] = old - h
            fm, sm = probe()
            flat[j] = old
            if avoid_kinks and not (_same_sides(sp, base) and _same_sides(sm, base)):
                skipped += 1
                continue
            entries.append(j)
            num.append((fp - fm) / (2 * h))
        out[name] = (p.grad.reshape(-1)[entries].copy(), np.array(num))
    return out, skipped


def check_params(loss_fn, params, h=1e-5, per_param=6, seed=0):
    """{name: relative error} of backprop vs finite differences per parameter."""
    samples, _ = sampled_grads(loss_fn, params, h, per_param, seed)
    return {name: relative_error(a, n) for name, (a, n) in samples.items()}


def overall_error(samples):
    """Relative error of the concatenated sampled gradient of one loss."""
    a = np.concatenate([v[0] for v in samples.values()])
    n = np.concatenate([v[1] for v in samples.values()])
    return relative_error(a, n)

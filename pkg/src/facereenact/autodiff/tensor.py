"""Dense float64 tensors with a recorded tape for reverse-mode differentiation."""
import numpy as np


class Tensor:
    """A float64 array plus the operation that produced it.

    ``parents`` are the input tensors; ``backward_fn(g)`` maps the gradient
    of the output to a tuple of gradients, one per parent (None when a parent
    needs none).
    """

    __slots__ = ("data", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, data, parents=(), backward_fn=None, op=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = any(p.requires_grad for p in self.parents)
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"


class Parameter(Tensor):
    """Trainable leaf. Gradients accumulate into ``grad`` until zeroed."""

    __slots__ = ("grad", "name")

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=np.float64))
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root):
    """Nodes reachable from ``root`` that need gradients, inputs before outputs."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, params=None):
    """Accumulate d loss / d theta into ``grad`` of every reachable Parameter.

    ``params`` restricts accumulation to the given parameters; others are
    left untouched. Returns the list of parameters that received a gradient.
    The graph is left intact, so the same loss graph can be differentiated
    again (for a second loss sharing sub-graphs).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    allowed = None if params is None else {id(p) for p in params}
    grads = {id(loss): np.ones_like(loss.data)}
    touched = []
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            if allowed is None or id(node) in allowed:
                node.grad += g
                touched.append(node)
            continue
        if node.backward_fn is None:
            continue
        for p, gp in zip(node.parents, node.backward_fn(g)):
            if gp is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp
    return touched

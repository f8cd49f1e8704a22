"""Dense tensors with reverse-mode differentiation.

Just enough machinery to express and train the confidence-map network:
4-D tensors (batch, channels, height, width), the ops the architecture
needs, SGD with momentum, and a finite-difference gradient checker.
float32 is the training precision; build the same graph from float64
arrays for gradient checks.
"""

import numpy as np

from plantmap import kernels


class Tensor:
    """A numpy array plus the bookkeeping reverse-mode needs.

    `grad` stays None until backward reaches the tensor. `_backward`
    is the node's backprop hook, called with the node's accumulated
    output gradient; `_parents` keeps the graph alive and feeds the
    topological sort.  Hooks close over parents only, never the node
    they belong to, so a finished graph is freed by reference counting
    instead of lingering until the cycle collector runs (at one graph
    per SGD step, that lingering adds up to gigabytes).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad=False):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if data.ndim > 4:
            raise ValueError(f"tensors are at most 4-D, got shape {data.shape}")
        if data.size == 0:
            raise ValueError("zero-extent tensors are not supported")
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() needs a scalar tensor, got shape {self.data.shape}")

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed=None):
        """Run reverse-mode from this tensor.

        Without a seed the tensor must be scalar (seeded with 1); a seed
        array of matching shape starts from an arbitrary cotangent.
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed requires a scalar tensor")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ValueError(f"seed shape {seed.shape} != tensor shape {self.data.shape}")
        # iterative post-order: a recursive inner function would hold a
        # self-referential closure cell pinning `topo` (the whole graph)
        # until the cycle collector gets around to it
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((parent, False) for parent in node._parents)
        self._accumulate(seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _result(data, parents):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
    return out


def conv2d(x, w, b):
    """Stride-1 same-padding convolution.

    x (N, Ci, H, W); w (Co, Ci, k, k) with k odd; b (Co,). Output keeps
    the spatial extent. Differentiable in all three operands.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d wants 4-D tensors, got {x.data.shape} and {w.data.shape}")
    co, ci, kh, kw = w.data.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernel must be square with odd extent, got {kh}x{kw}")
    if x.data.shape[1] != ci:
        raise ValueError(
            f"input channel mismatch: input has {x.data.shape[1]} channels, "
            f"weights expect {ci}"
        )
    if b.data.shape != (co,):
        raise ValueError(f"bias shape {b.data.shape} != ({co},)")

    x_nhwc = kernels.to_nhwc(x.data)
    w_k = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0))
    y_nhwc = kernels.conv2d_forward_nhwc(x_nhwc, w_k, b.data)
    out = _result(y_nhwc.transpose(0, 3, 1, 2), (x, w, b))

    if out.requires_grad:

        def backward(dy):
            dy_nhwc = kernels.to_nhwc(dy)
            if x.requires_grad:
                dx = kernels.conv2d_backward_input_nhwc(dy_nhwc, w_k)
                x._accumulate(dx.transpose(0, 3, 1, 2))
            if w.requires_grad or b.requires_grad:
                dw_k, db = kernels.conv2d_backward_weights_nhwc(x_nhwc, dy_nhwc, kh, kw)
                if w.requires_grad:
                    w._accumulate(dw_k.transpose(3, 2, 0, 1))
                if b.requires_grad:
                    b._accumulate(db)

        out._backward = backward
    return out


def relu(x):
    out = _result(np.maximum(x.data, 0), (x,))
    if out.requires_grad:

        def backward(dy):
            x._accumulate(dy * (x.data > 0))

        out._backward = backward
    return out


def sigmoid(x):
    """Numerically stable logistic; outputs clamped to the open unit
    interval at floating-point resolution so downstream code can rely
    on strict (0,1) membership."""
    d = x.data
    pos = d >= 0
    y = np.empty_like(d)
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    info = np.finfo(d.dtype)
    np.clip(y, info.tiny, 1.0 - info.epsneg, out=y)
    out = _result(y, (x,))
    if out.requires_grad:

        def backward(dy):
            x._accumulate(dy * y * (1.0 - y))

        out._backward = backward
    return out


def maxpool2(x):
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    # upstream ops may hand over transpose views; the kernels index NCHW
    y, idx = kernels.maxpool2_forward(np.ascontiguousarray(x.data))
    out = _result(y, (x,))
    if out.requires_grad:

        def backward(dy):
            x._accumulate(kernels.maxpool2_backward(np.ascontiguousarray(dy), idx, h, w))

        out._backward = backward
    return out


_PPM_LEVELS = (1, 2, 3, 6)


def adaptive_maxpool(x, out_n):
    n, c, h, w = x.data.shape
    if out_n not in _PPM_LEVELS:
        raise ValueError(f"out_n must be one of {_PPM_LEVELS}, got {out_n}")
    if out_n > min(h, w):
        raise ValueError(f"out_n={out_n} exceeds spatial extent {h}x{w}")
    y, idx = kernels.adaptive_maxpool_forward(np.ascontiguousarray(x.data), out_n)
    out = _result(y, (x,))
    if out.requires_grad:

        def backward(dy):
            x._accumulate(kernels.adaptive_maxpool_backward(np.ascontiguousarray(dy), idx, h, w))

        out._backward = backward
    return out


def bilinear_upsample(x, out_h, out_w):
    n, c, h, w = x.data.shape
    if out_h < h or out_w < w:
        raise ValueError(f"upsample only: {h}x{w} -> {out_h}x{out_w} shrinks")
    out = _result(kernels.bilinear_forward(x.data, out_h, out_w), (x,))
    if out.requires_grad:

        def backward(dy):
            x._accumulate(kernels.bilinear_backward(dy, h, w))

        out._backward = backward
    return out


def concat_channels(inputs):
    if not inputs:
        raise ValueError("concat_channels needs at least one input")
    first = inputs[0].data.shape
    for t in inputs[1:]:
        s = t.data.shape
        if len(s) != 4 or len(first) != 4 or s[0] != first[0] or s[2:] != first[2:]:
            raise ValueError(f"concat_channels spatial/batch mismatch: {first} vs {s}")
    out = _result(np.concatenate([t.data for t in inputs], axis=1), inputs)
    if out.requires_grad:
        splits = np.cumsum([t.data.shape[1] for t in inputs])[:-1]

        def backward(dy):
            for t, g in zip(inputs, np.split(dy, splits, axis=1)):
                if t.requires_grad:
                    t._accumulate(g)

        out._backward = backward
    return out


def add(a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = _result(a.data + b.data, (a, b))
    if out.requires_grad:

        def backward(dy):
            if a.requires_grad:
                a._accumulate(dy)
            if b.requires_grad:
                b._accumulate(dy)

        out._backward = backward
    return out


def mse_loss(pred, target):
    """Mean squared error over all elements; gradient 2(pred-target)/N."""
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"mse_loss shape mismatch: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    out = _result(np.asarray((diff**2).mean(), dtype=pred.data.dtype), (pred, target))
    if out.requires_grad:

        def backward(dy):
            g = dy * 2.0 / diff.size
            if pred.requires_grad:
                pred._accumulate(g * diff)
            if target.requires_grad:
                target._accumulate(-g * diff)

        out._backward = backward
    return out


class ParamState:
    """Trainable value plus its gradient and momentum buffer (one shape)."""

    __slots__ = ("value", "velocity")

    def __init__(self, value):
        self.value = Tensor(np.array(value), requires_grad=True)
        self.velocity = np.zeros_like(self.value.data)

    @property
    def gradient(self):
        if self.value.grad is None:
            self.value.grad = np.zeros_like(self.value.data)
        return self.value.grad


def sgd_step(params, lr, momentum):
    """velocity <- momentum*velocity + grad; value <- value - lr*velocity;
    gradients zeroed in place."""
    for p in params:
        g = p.gradient
        p.velocity *= momentum
        p.velocity += g
        p.value.data -= lr * p.velocity
        g[...] = 0.0


def grad_check(closure, inputs, epsilon=1e-6):
    """Worst relative error between reverse-mode and central differences.

    closure(*inputs) must return a scalar Tensor; inputs must be float64
    (checking float32 graphs against 1e-4 tolerances is meaningless).
    Every coordinate of every input is perturbed.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        t.grad = None
    out = closure(*inputs)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("grad_check closure must produce a scalar tensor")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    worst = 0.0
    for t, ad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = closure(*inputs).item()
            flat[i] = orig - epsilon
            down = closure(*inputs).item()
            flat[i] = orig
            fd = (up - down) / (2.0 * epsilon)
            a = ad.reshape(-1)[i]
            rel = abs(a - fd) / max(abs(a) + abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst

"""Small dense layer engine with explicit forward/backward passes.

Tensors are plain float64 numpy arrays. Image tensors use (N, C, H, W).
Every layer is stateless with respect to activations: ``backward`` takes
the same input that was given to ``forward`` so that a layer can be reused
by several callers without hidden caches.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when a tensor does not fit the layer it is fed to."""

    def __init__(self, layer, expected, got):
        super().__init__(f"{layer}: expected input shape {expected}, got {tuple(got)}")
        self.layer = layer
        self.expected = expected
        self.got = tuple(got)


class NonFiniteError(FloatingPointError):
    pass


def same_padding(size, kernel, stride):
    """Output size and (before, after) zero padding for 'same' convolution."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, (total // 2, total - total // 2)


def _windows(xp, kernel, stride):
    # (N, C, Hp, Wp) -> (N, C, Ho, Wo, K, K) view
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _scatter_windows(cols, padded_shape, stride):
    # adjoint of _windows: sum window entries back into the padded canvas
    n, c, ho, wo, kh, kw = cols.shape
    out = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j]
    return out


def _pad(x, ph, pw):
    return np.pad(x, ((0, 0), (0, 0), ph, pw))


def _crop(x, ph, pw):
    h, w = x.shape[2], x.shape[3]
    return x[:, :, ph[0]:h - ph[1], pw[0]:w - pw[1]]


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, x, grad_out):
        """Return (grad wrt input, dict of parameter gradients)."""
        raise NotImplementedError

    def output_shape(self, shape):
        return tuple(shape)

    def spec(self):
        return {"kind": self.kind}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Layer):
    """2-D convolution. ``padding='same'`` zero-pads so the output is ceil(size/stride);
    ``'valid'`` uses only full windows."""

    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel, stride=1, rng=None, padding="same"):
        super().__init__()
        if padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {padding!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = in_channels * kernel * kernel
        self.params["W"] = _uniform_init(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        self.params["b"] = np.zeros(out_channels)

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel, "stride": self.stride,
                "padding": self.padding}

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(repr(self), f"(N, {self.in_channels}, H, W)", x.shape)
        if self.padding == "valid" and min(x.shape[2:]) < self.kernel:
            raise ShapeError(repr(self), f"spatial size >= {self.kernel}", x.shape)

    def _geometry(self, h, w):
        if self.padding == "valid":
            k, s = self.kernel, self.stride
            return (h - k) // s + 1, (w - k) // s + 1, (0, 0), (0, 0)
        ho, ph = same_padding(h, self.kernel, self.stride)
        wo, pw = same_padding(w, self.kernel, self.stride)
        return ho, wo, ph, pw

    def output_shape(self, shape):
        n, _, h, w = shape
        ho, wo, _, _ = self._geometry(h, w)
        return (n, self.out_channels, ho, wo)

    def forward(self, x):
        self._check(x)
        _, _, ph, pw = self._geometry(x.shape[2], x.shape[3])
        cols = _windows(_pad(x, ph, pw), self.kernel, self.stride)
        out = np.einsum("nchwij,ocij->nohw", cols, self.params["W"], optimize=True)
        return out + self.params["b"][None, :, None, None]

    def backward(self, x, grad_out):
        self._check(x)
        if grad_out.shape != self.output_shape(x.shape):
            raise ShapeError(repr(self) + " (upstream)", self.output_shape(x.shape), grad_out.shape)
        _, _, ph, pw = self._geometry(x.shape[2], x.shape[3])
        xp = _pad(x, ph, pw)
        cols = _windows(xp, self.kernel, self.stride)
        gW = np.einsum("nohw,nchwij->ocij", grad_out, cols, optimize=True)
        gb = grad_out.sum(axis=(0, 2, 3))
        gcols = np.einsum("nohw,ocij->nchwij", grad_out, self.params["W"], optimize=True)
        gx = _crop(_scatter_windows(gcols, xp.shape, self.stride), ph, pw)
        return gx, {"W": gW, "b": gb}


class ConvTranspose2d(Layer):
    """Transposed convolution; the adjoint of a 'same' Conv2d, upsampling by ``stride``."""

    kind = "deconv"

    def __init__(self, in_channels, out_channels, kernel, stride=1, rng=None, output_size=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride = kernel, stride
        # (H, W) of the matching conv input; default is input size times stride
        self.output_size = tuple(output_size) if output_size is not None else None
        fan_in = in_channels * kernel * kernel
        self.params["W"] = _uniform_init(rng, (in_channels, out_channels, kernel, kernel), fan_in)
        self.params["b"] = np.zeros(out_channels)

    def spec(self):
        out = {"kind": self.kind, "in_channels": self.in_channels,
               "out_channels": self.out_channels, "kernel": self.kernel, "stride": self.stride}
        if self.output_size is not None:
            out["output_size"] = list(self.output_size)
        return out

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(repr(self), f"(N, {self.in_channels}, H, W)", x.shape)
        if self.output_size is not None:
            expect = tuple(-(-o // self.stride) for o in self.output_size)
            if x.shape[2:] != expect:
                raise ShapeError(repr(self), f"(N, {self.in_channels}, {expect[0]}, {expect[1]})", x.shape)

    def _geometry(self, h, w):
        ho, wo = self.output_size or (h * self.stride, w * self.stride)
        _, ph = same_padding(ho, self.kernel, self.stride)
        _, pw = same_padding(wo, self.kernel, self.stride)
        return ho, wo, ph, pw

    def output_shape(self, shape):
        n, _, h, w = shape
        ho, wo, _, _ = self._geometry(h, w)
        return (n, self.out_channels, ho, wo)

    def forward(self, x):
        self._check(x)
        n, _, h, w = x.shape
        ho, wo, ph, pw = self._geometry(h, w)
        cols = np.einsum("nihw,iojk->nohwjk", x, self.params["W"], optimize=True)
        canvas = (n, self.out_channels, ho + sum(ph), wo + sum(pw))
        out = _crop(_scatter_windows(cols, canvas, self.stride), ph, pw)
        return out + self.params["b"][None, :, None, None]

    def backward(self, x, grad_out):
        self._check(x)
        if grad_out.shape != self.output_shape(x.shape):
            raise ShapeError(repr(self) + " (upstream)", self.output_shape(x.shape), grad_out.shape)
        _, _, ph, pw = self._geometry(x.shape[2], x.shape[3])
        cols = _windows(_pad(grad_out, ph, pw), self.kernel, self.stride)
        gx = np.einsum("nohwjk,iojk->nihw", cols, self.params["W"], optimize=True)
        gW = np.einsum("nihw,nohwjk->iojk", x, cols, optimize=True)
        gb = grad_out.sum(axis=(0, 2, 3))
        return gx, {"W": gW, "b": gb}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, grad_out):
        if grad_out.shape != x.shape:
            raise ShapeError("ReLU (upstream)", x.shape, grad_out.shape)
        return grad_out * (x > 0), {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))

    def backward(self, x, grad_out):
        return grad_out.reshape(x.shape), {}


class Unflatten(Layer):
    kind = "unflatten"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def spec(self):
        return {"kind": self.kind, "shape": list(self.shape)}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != int(np.prod(self.shape)):
            raise ShapeError(repr(self), f"(N, {int(np.prod(self.shape))})", x.shape)
        return x.reshape((x.shape[0],) + self.shape)

    def output_shape(self, shape):
        return (shape[0],) + self.shape

    def backward(self, x, grad_out):
        return grad_out.reshape(x.shape), {}


class Dense(Layer):
    """Fully connected layer on row vectors: y = x W + b."""

    kind = "dense"

    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_features, self.out_features = in_features, out_features
        self.params["W"] = _uniform_init(rng, (in_features, out_features), in_features)
        self.params["b"] = np.zeros(out_features)

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features, "out_features": self.out_features}

    def output_shape(self, shape):
        return (shape[0], self.out_features)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(repr(self), f"(N, {self.in_features})", x.shape)
        return x @ self.params["W"] + self.params["b"]

    def backward(self, x, grad_out):
        if grad_out.shape != (x.shape[0], self.out_features):
            raise ShapeError(repr(self) + " (upstream)", (x.shape[0], self.out_features), grad_out.shape)
        return grad_out @ self.params["W"].T, {"W": x.T @ grad_out, "b": grad_out.sum(axis=0)}


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        return softmax(x)

    def backward(self, x, grad_out):
        p = softmax(x)
        return p * (grad_out - (grad_out * p).sum(axis=-1, keepdims=True)), {}


LAYER_KINDS = {cls.kind: cls for cls in (Conv2d, ConvTranspose2d, ReLU, Flatten, Unflatten, Dense, Softmax)}


def layer_from_spec(spec, rng=None):
    spec = dict(spec)
    cls = LAYER_KINDS[spec.pop("kind")]
    if cls in (Conv2d, ConvTranspose2d, Dense):
        return cls(rng=rng, **spec)
    return cls(**spec)


class Network:
    """Sequential stack of layers."""

    def __init__(self, layers=()):
        self.layers = list(layers)

    def __len__(self):
        return len(self.layers)

    def parameters(self):
        return {f"{i}.{name}": p for i, layer in enumerate(self.layers)
                for name, p in layer.params.items()}

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x, keep=False):
        acts = [x]
        for layer in self.layers:
            x = layer.forward(x)
            acts.append(x)
        return (x, acts) if keep else x

    def backward(self, acts, grad_out):
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            grad_out, g = self.layers[i].backward(acts[i], grad_out)
            for name, v in g.items():
                grads[f"{i}.{name}"] = v
        return grad_out, grads

    def specs(self):
        return [layer.spec() for layer in self.layers]

    @classmethod
    def from_specs(cls, specs, rng=None):
        return cls([layer_from_spec(s, rng) for s in specs])


def layer_forward(layer, x):
    return layer.forward(x)


def layer_backward(layer, x, upstream_grad):
    return layer.backward(x, upstream_grad)


# -- optimizers ---------------------------------------------------------------

def _check_finite(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter block {name!r}")


@dataclass
class SGD:
    lr: float = 1e-2

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        _check_finite(grads)
        for name, g in grads.items():
            params[name] -= lr * g


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        _check_finite(grads)
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / (1 - self.beta1 ** t)
            vhat = self.v[name] / (1 - self.beta2 ** t)
            params[name] -= lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name, lr):
    if name == "adam":
        return Adam(lr=lr)
    if name in ("sgd", "gd"):
        return SGD(lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")


def optimizer_step(params, grads, lr, rule="sgd", state=None):
    """Functional single step; ``state`` is an optimizer instance reused across calls."""
    opt = state if state is not None else make_optimizer(rule, lr)
    opt.step(params, grads, lr)
    return params


# -- gradient checking ----------------------------------------------------------

def grad_check(loss_fn, params, eps=1e-5, probes=10, seed=0):
    """Compare analytic gradients with central differences along random directions.

    ``loss_fn()`` must read the arrays in ``params`` (mutated in place here)
    and return ``(loss, grads)`` with ``grads`` keyed like ``params``.
    Returns ``{name: max relative error}``; an empty dict if there is nothing
    to check.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_fn()
    report = {}
    for name, p in params.items():
        g = grads[name]
        worst = 0.0
        for _ in range(probes):
            u = rng.standard_normal(p.shape)
            u /= np.linalg.norm(u) or 1.0
            saved = p.copy()
            p += eps * u
            fp, _ = loss_fn()
            p[...] = saved - eps * u
            fm, _ = loss_fn()
            p[...] = saved
            numeric = (fp - fm) / (2 * eps)
            analytic = float(np.sum(g * u))
            denom = max(abs(numeric), abs(analytic), 1e-10)
            worst = max(worst, abs(numeric - analytic) / denom)
        report[name] = worst
    return report

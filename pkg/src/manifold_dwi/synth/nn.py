"""A minimal channels-last 3D conv net toolkit with explicit backward passes.

Arrays are ``(batch, X, Y, Z, channels)``. Every layer's ``forward`` returns
``(out, cache)`` and ``backward(cache, dout)`` returns ``(dx, grads)``;
parameter gradients are dicts keyed like the layer's ``params``.
"""

import numpy as np


class Conv3d:
    """'Same'-padded, stride-1 cubic convolution.

    The weight is stored as a ``(cin * k**3, cout)`` matrix whose rows run
    over input channels first, then kernel offsets.
    """

    def __init__(self, cin, cout, k=3, rng=None, dtype=np.float32):
        if k % 2 != 1:
            raise ValueError("kernel size must be odd")
        rng = np.random.default_rng(rng)
        fan_in = cin * k**3
        self.k, self.cin, self.cout = k, cin, cout
        self.params = {
            "W": (rng.standard_normal((fan_in, cout)) * np.sqrt(2.0 / fan_in)).astype(dtype),
            "b": np.zeros(cout, dtype=dtype),
        }

    def _pad(self, x):
        p = self.k // 2
        return np.pad(x, ((0, 0), (p, p), (p, p), (p, p), (0, 0)))

    def _offsets(self):
        k = self.k
        return [(i, j, l) for i in range(k) for j in range(k) for l in range(k)]

    def forward(self, x, train=True):
        W, b = self.params["W"], self.params["b"]
        if self.k == 1:
            return x @ W + b, x
        xp = self._pad(x)
        B, X, Y, Z, C = x.shape
        k = self.k
        Wk = W.reshape(C, k, k, k, self.cout)
        out = np.zeros((B, X, Y, Z, self.cout), dtype=W.dtype)
        for i, j, l in self._offsets():
            out += xp[:, i : i + X, j : j + Y, l : l + Z] @ Wk[:, i, j, l]
        out += b
        return out, (xp, x.shape) if train else None

    def backward(self, cache, dout):
        W = self.params["W"]
        if self.k == 1:
            x = cache
            d2 = dout.reshape(-1, self.cout)
            grads = {"W": x.reshape(-1, self.cin).T @ d2, "b": d2.sum(axis=0)}
            return dout @ W.T, grads
        if cache is None:
            raise RuntimeError("backward needs a forward pass run with train=True")
        xp, shape = cache
        B, X, Y, Z, C = shape
        k, p = self.k, self.k // 2
        d2 = dout.reshape(-1, self.cout)
        Wk = W.reshape(C, k, k, k, self.cout)
        dW = np.empty_like(Wk)
        dxp = np.zeros((B, X + 2 * p, Y + 2 * p, Z + 2 * p, C), dtype=dout.dtype)
        for i, j, l in self._offsets():
            xs = xp[:, i : i + X, j : j + Y, l : l + Z].reshape(-1, C)
            dW[:, i, j, l] = xs.T @ d2
            dxp[:, i : i + X, j : j + Y, l : l + Z] += dout @ Wk[:, i, j, l].T
        grads = {"W": dW.reshape(W.shape), "b": d2.sum(axis=0)}
        return dxp[:, p : p + X, p : p + Y, p : p + Z], grads


def spread_input_kinks(conv, sample):
    """Set a conv layer's biases so its units switch at evenly spread input levels.

    With zero biases and one-signed inputs every unit of a network's first
    layer keeps one sign over the data, so the network starts out linear in
    its input. On a uniform region unit ``c`` sees ``sample @ w_c`` where
    ``w_c`` sums its kernel; its kink is placed at the fraction
    ``(c + 0.5) / C`` of that projection's range over ``sample``.

    Parameters
    ----------
    conv : Conv3d
    sample : array_like, shape (..., cin)
        Representative input values.
    """
    W = conv.params["W"]
    C = W.shape[1]
    wsum = W.reshape(conv.cin, -1, C).sum(axis=1)
    proj = np.asarray(sample, dtype=float).reshape(-1, conv.cin) @ wsum
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    tau = lo + (hi - lo) * (np.arange(C) + 0.5) / C
    conv.params["b"][:] = (-tau).astype(W.dtype)


def leaky_relu(x, slope=0.2):
    return np.where(x > 0, x, slope * x), x


def leaky_relu_backward(x, dout, slope=0.2):
    return np.where(x > 0, dout, slope * dout)


def pool2(x):
    B, X, Y, Z, C = x.shape
    return x.reshape(B, X // 2, 2, Y // 2, 2, Z // 2, 2, C).mean(axis=(2, 4, 6))


def pool2_backward(dout):
    d = dout / 8.0
    return d.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)


def up2(x):
    return x.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)


def up2_backward(dout):
    B, X, Y, Z, C = dout.shape
    return dout.reshape(B, X // 2, 2, Y // 2, 2, Z // 2, 2, C).sum(axis=(2, 4, 6))


class Hardtanh:
    """Clamp to ``[-bound, bound]``."""

    def __init__(self, bound=5.0):
        self.bound = bound

    def forward(self, z):
        return np.clip(z, -self.bound, self.bound), z

    def backward(self, z, dout):
        return dout * (np.abs(z) < self.bound)


class Sigmoid:
    def forward(self, z):
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        return s, s

    def backward(self, s, dout):
        return dout * s * (1.0 - s)


class TangentBall:
    """Map raw outputs to sphere tangent vectors at ``u`` of norm below ``bound``.

    The first component is zeroed (tangent space at the north pole) and the
    rest is shrunk radially by ``bound * tanh(n / bound) / n``.
    """

    def __init__(self, bound=np.pi / 2):
        self.bound = bound

    def _scale(self, n):
        B = self.bound
        small = n < 1e-4
        ns = np.where(small, 1.0, n)
        t = np.tanh(ns / B)
        s = np.where(small, 1.0 - n * n / (3 * B * B), B * t / ns)
        # s'(n) / n
        ds = np.where(small, -2.0 / (3 * B * B), ((1.0 - t * t) * ns - B * t) / ns**3)
        return s, ds

    def forward(self, z):
        r = z.copy()
        r[..., 0] = 0.0
        n = np.linalg.norm(r, axis=-1, keepdims=True)
        s, ds = self._scale(n)
        return r * s, (r, s, ds)

    def backward(self, cache, dout):
        r, s, ds = cache
        dr = dout * s + r * (r * dout).sum(axis=-1, keepdims=True) * ds
        dr[..., 0] = 0.0
        return dr


_HEADS = {"hardtanh": Hardtanh, "sigmoid": Sigmoid, "tangent_ball": TangentBall, "linear": None}


class UNet3:
    """Three-level encoder-decoder with skip connections and a bounded head.

    Parameters
    ----------
    cin, cout : int
        Input and output channels.
    widths : tuple of 3 ints
        Feature channels per level.
    head : {"hardtanh", "sigmoid", "tangent_ball", "linear"}
    head_bound : float, optional
        Bound for ``hardtanh`` or ``tangent_ball``.
    """

    def __init__(self, cin, cout, widths=(8, 16, 32), head="hardtanh", head_bound=None,
                 rng=None, dtype=np.float32):
        rng = np.random.default_rng(rng)
        c1, c2, c3 = widths
        self.layers = {
            "enc1": Conv3d(cin, c1, rng=rng, dtype=dtype),
            "enc2": Conv3d(c1, c2, rng=rng, dtype=dtype),
            "bott": Conv3d(c2, c3, rng=rng, dtype=dtype),
            "dec2": Conv3d(c3 + c2, c2, rng=rng, dtype=dtype),
            "dec1": Conv3d(c2 + c1, c1, rng=rng, dtype=dtype),
            "head": Conv3d(c1, cout, k=1, rng=rng, dtype=dtype),
        }
        self.layers["head"].params["W"] *= 0.1
        cls = _HEADS[head]
        if cls is None:
            self.act = None
        else:
            self.act = cls() if head_bound is None or head == "sigmoid" else cls(head_bound)
        self.dtype = dtype

    def parameters(self):
        return {f"{n}.{k}": v for n, layer in self.layers.items() for k, v in layer.params.items()}

    def n_parameters(self):
        return sum(v.size for v in self.parameters().values())

    def spread_input_kinks(self, sample):
        """Spread the first layer's kinks over ``sample``; see :func:`spread_input_kinks`."""
        spread_input_kinks(self.layers["enc1"], sample)

    def forward(self, x, train=True):
        L = self.layers
        x = np.asarray(x, dtype=self.dtype)
        if any(n % 4 for n in x.shape[1:4]):
            raise ValueError(f"spatial dims {x.shape[1:4]} must be divisible by 4")
        t = {}
        h, t["enc1"] = L["enc1"].forward(x, train)
        e1, t["a1"] = leaky_relu(h)
        h, t["enc2"] = L["enc2"].forward(pool2(e1), train)
        e2, t["a2"] = leaky_relu(h)
        h, t["bott"] = L["bott"].forward(pool2(e2), train)
        b, t["a3"] = leaky_relu(h)
        h, t["dec2"] = L["dec2"].forward(np.concatenate([up2(b), e2], axis=-1), train)
        d2, t["a4"] = leaky_relu(h)
        h, t["dec1"] = L["dec1"].forward(np.concatenate([up2(d2), e1], axis=-1), train)
        d1, t["a5"] = leaky_relu(h)
        z, t["head"] = L["head"].forward(d1, train)
        if self.act is None:
            return z, t
        out, t["act"] = self.act.forward(z)
        return out, t

    def backward(self, tape, dout):
        """Return ``(dx, grads)`` for one forward tape."""
        L = self.layers
        g = {}

        def conv_back(name, d):
            dx, gp = L[name].backward(tape[name], d)
            for k, v in gp.items():
                g[f"{name}.{k}"] = v
            return dx

        dz = dout if self.act is None else self.act.backward(tape["act"], dout)
        dd1 = conv_back("head", dz)
        dh = leaky_relu_backward(tape["a5"], dd1)
        dcat = conv_back("dec1", dh)
        c2 = L["dec2"].cout
        dd2 = up2_backward(dcat[..., :c2])
        de1 = dcat[..., c2:]
        dh = leaky_relu_backward(tape["a4"], dd2)
        dcat = conv_back("dec2", dh)
        c3 = L["bott"].cout
        db = up2_backward(dcat[..., :c3])
        de2 = dcat[..., c3:]
        dh = leaky_relu_backward(tape["a3"], db)
        de2 = de2 + pool2_backward(conv_back("bott", dh))
        dh = leaky_relu_backward(tape["a2"], de2)
        de1 = de1 + pool2_backward(conv_back("enc2", dh))
        dh = leaky_relu_backward(tape["a1"], de1)
        dx = conv_back("enc1", dh)
        return dx, g


class PatchDiscriminator:
    """Two conv levels and a 1x1 score map averaged to one score per sample."""

    def __init__(self, cin, widths=(8, 16), rng=None, dtype=np.float32):
        rng = np.random.default_rng(rng)
        c1, c2 = widths
        self.layers = {
            "c1": Conv3d(cin, c1, rng=rng, dtype=dtype),
            "c2": Conv3d(c1, c2, rng=rng, dtype=dtype),
            "out": Conv3d(c2, 1, k=1, rng=rng, dtype=dtype),
        }
        self.dtype = dtype

    def parameters(self):
        return {f"{n}.{k}": v for n, layer in self.layers.items() for k, v in layer.params.items()}

    def n_parameters(self):
        return sum(v.size for v in self.parameters().values())

    def spread_input_kinks(self, sample):
        """Spread the first layer's kinks over ``sample``; see :func:`spread_input_kinks`."""
        spread_input_kinks(self.layers["c1"], sample)

    def forward(self, x, train=True):
        L = self.layers
        x = np.asarray(x, dtype=self.dtype)
        t = {}
        h, t["c1"] = L["c1"].forward(x, train)
        a, t["a1"] = leaky_relu(h)
        h, t["c2"] = L["c2"].forward(pool2(a), train)
        a, t["a2"] = leaky_relu(h)
        s, t["out"] = L["out"].forward(a, train)
        t["shape"] = s.shape
        return s.mean(axis=(1, 2, 3, 4)), t

    def backward(self, tape, dscore):
        L = self.layers
        g = {}
        B, X, Y, Z, _ = tape["shape"]
        ds = np.broadcast_to(
            (np.asarray(dscore, dtype=self.dtype) / (X * Y * Z))[:, None, None, None, None],
            tape["shape"],
        )
        da, gp = L["out"].backward(tape["out"], ds)
        g.update({f"out.{k}": v for k, v in gp.items()})
        dh = leaky_relu_backward(tape["a2"], da)
        dp, gp = L["c2"].backward(tape["c2"], dh)
        g.update({f"c2.{k}": v for k, v in gp.items()})
        dh = leaky_relu_backward(tape["a1"], pool2_backward(dp))
        dx, gp = L["c1"].backward(tape["c1"], dh)
        g.update({f"c1.{k}": v for k, v in gp.items()})
        return dx, g


def add_grads(a, b):
    """Sum two gradient dicts (for networks used more than once per step)."""
    if a is None:
        return dict(b)
    return {k: a[k] + b[k] for k in a}


class Adam:
    """Adam with bias correction, updating parameter arrays in place."""

    def __init__(self, params, lr=1e-4, betas=(0.5, 0.999), eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = grads[k].astype(p.dtype, copy=False)
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p -= (self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(p.dtype)

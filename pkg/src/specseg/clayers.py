"""Complex-valued layer primitives with analytic backward passes.

Every complex parameter w = w_x + j*w_y is trained by treating w_x and w_y
as two independent real parameters; an upstream gradient array g carries
dL/d(out_x) in its real part and dL/d(out_y) in its imaginary part.  Under
that pairing the linear layers have compact complex forms:

    parameter gradient = sum g * conj(input)
    input gradient     = conj(W) acting on g

which the backward implementations below use directly.  For real-dtype
parameters conj is the identity and the same code paths produce ordinary
real backprop, so each layer serves both the complex model and its
real-valued counterpart.

Layers are single-owner objects: `forward(x, train=True)` caches what the
following `backward(g)` needs, `backward` fills `.grads` (keyed like
`.params`) and returns the gradient w.r.t. the layer input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmall, LengthNotDivisible, ShapeMismatch, SingularCovariance


@dataclass
class WirtingerGrad:
    """Paired real/imaginary loss partials for one complex parameter."""

    d_x: np.ndarray
    d_y: np.ndarray

    @classmethod
    def from_complex(cls, g: np.ndarray) -> "WirtingerGrad":
        if np.issubdtype(g.dtype, np.complexfloating):
            return cls(np.ascontiguousarray(g.real), np.ascontiguousarray(g.imag))
        return cls(np.asarray(g), np.zeros_like(g))

    def as_complex(self) -> np.ndarray:
        return self.d_x + 1j * self.d_y


def _real_dtype(dtype) -> np.dtype:
    if np.dtype(dtype) in (np.dtype(np.complex64), np.dtype(np.float32)):
        return np.dtype(np.float32)
    return np.dtype(np.float64)


def _is_complex(dtype) -> bool:
    return np.issubdtype(np.dtype(dtype), np.complexfloating)


class Layer:
    """Minimal interface shared by all layers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_items(self):
        """(name, array) pairs in a deterministic order."""
        return [(k, self.params[k]) for k in sorted(self.params)]

    def wirtinger_grads(self) -> dict[str, WirtingerGrad]:
        return {k: WirtingerGrad.from_complex(v) for k, v in self.grads.items()}


class CConv1d(Layer):
    """1-D complex convolution (cross-correlation) with zero padding.

    weight[o, i, k] = A + jB applies as (A*x - B*y) + j(B*x + A*y), which is
    a plain complex multiply-accumulate over taps; the im2col + GEMM below
    computes exactly that.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 padding: int = 0, dtype=np.complex64, rng: np.random.Generator | None = None):
        super().__init__()
        if kernel < 1 or stride < 1 or padding < 0:
            raise ValueError("kernel/stride must be >= 1, padding >= 0")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.dtype = np.dtype(dtype)
        rng = rng or np.random.default_rng()
        fan_in = in_ch * kernel
        if _is_complex(dtype):
            # variance split across parts so |w| variance is 1/fan_in
            std = np.sqrt(1.0 / (2.0 * fan_in))
            w = rng.normal(0.0, std, (out_ch, in_ch, kernel)) \
                + 1j * rng.normal(0.0, std, (out_ch, in_ch, kernel))
        else:
            w = rng.normal(0.0, np.sqrt(1.0 / fan_in), (out_ch, in_ch, kernel))
        self.params["weight"] = w.astype(self.dtype)
        self.params["bias"] = np.zeros(out_ch, dtype=self.dtype)
        self._cache = None

    def out_len(self, length: int) -> int:
        return (length + 2 * self.padding - self.kernel) // self.stride + 1

    def _im2col(self, xp: np.ndarray, lout: int) -> np.ndarray:
        # xp: [B, C, Lp] padded input -> [B, C, lout, K] strided view
        b, c, lp = xp.shape
        sb, sc, sl = xp.strides
        shape = (b, c, lout, self.kernel)
        strides = (sb, sc, sl * self.stride, sl)
        return np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides)

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if x.ndim != 3 or x.shape[1] != self.in_ch:
            raise ShapeMismatch(f"expected [batch, {self.in_ch}, L], got {x.shape}")
        b, _, length = x.shape
        if length + 2 * self.padding < self.kernel:
            raise ShapeMismatch("padded length shorter than kernel")
        lout = self.out_len(length)
        if self.padding:
            xp = np.zeros((b, self.in_ch, length + 2 * self.padding), dtype=x.dtype)
            xp[:, :, self.padding:self.padding + length] = x
        else:
            xp = x
        patches = self._im2col(xp, lout)
        # GEMM: [B*lout, C*K] @ [C*K, out_ch]
        cols = patches.transpose(0, 2, 1, 3).reshape(b * lout, self.in_ch * self.kernel)
        w2 = self.params["weight"].reshape(self.out_ch, -1)
        out = cols @ w2.T
        out += self.params["bias"]
        if train:
            self._cache = (cols, b, length, lout)
        return out.reshape(b, lout, self.out_ch).transpose(0, 2, 1)

    def backward(self, g: np.ndarray) -> np.ndarray:
        cols, b, length, lout = self._cache
        if g.shape != (b, self.out_ch, lout):
            raise ShapeMismatch(f"upstream shape {g.shape} != {(b, self.out_ch, lout)}")
        gm = g.transpose(0, 2, 1).reshape(b * lout, self.out_ch)
        # g.T @ conj(cols) == conj(conj(g).T @ cols); conjugating g is cheaper
        gw = np.conj(np.conj(gm).T @ cols) if np.iscomplexobj(gm) else gm.T @ cols
        self.grads["weight"] = gw.reshape(self.params["weight"].shape)
        self.grads["bias"] = gm.sum(axis=0)
        gcols = gm @ np.conj(self.params["weight"].reshape(self.out_ch, -1))
        gcols = gcols.reshape(b, lout, self.in_ch, self.kernel)
        lp = length + 2 * self.padding
        gxp = np.zeros((b, self.in_ch, lp), dtype=g.dtype)
        for k in range(self.kernel):
            gxp[:, :, k:k + self.stride * lout:self.stride] += gcols[:, :, :, k].transpose(0, 2, 1)
        if self.padding:
            return gxp[:, :, self.padding:self.padding + length]
        return gxp


class CLinear(Layer):
    """Dense complex map out = W z + b applied to flat feature vectors."""

    def __init__(self, in_features: int, out_features: int, dtype=np.complex64,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.dtype = np.dtype(dtype)
        rng = rng or np.random.default_rng()
        if _is_complex(dtype):
            std = np.sqrt(1.0 / (2.0 * in_features))
            w = rng.normal(0.0, std, (out_features, in_features)) \
                + 1j * rng.normal(0.0, std, (out_features, in_features))
        else:
            w = rng.normal(0.0, np.sqrt(1.0 / in_features), (out_features, in_features))
        self.params["weight"] = w.astype(self.dtype)
        self.params["bias"] = np.zeros(out_features, dtype=self.dtype)
        self._x = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"expected [batch, {self.in_features}], got {x.shape}")
        if train:
            self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, g: np.ndarray) -> np.ndarray:
        if g.shape != (self._x.shape[0], self.out_features):
            raise ShapeMismatch("upstream shape mismatch")
        self.grads["weight"] = g.T @ np.conj(self._x)
        self.grads["bias"] = g.sum(axis=0)
        return g @ np.conj(self.params["weight"])


def _component_view(x: np.ndarray) -> np.ndarray:
    """Interleaved float view of a complex array (x0, y0, x1, y1, ...).

    Elementwise split operations (apply the same real function to real and
    imaginary parts independently) are exactly elementwise operations on
    this view, which avoids part-by-part temporaries.
    """
    if _is_complex(x.dtype):
        return x.view(np.float32 if x.dtype == np.complex64 else np.float64)
    return x


class CReLU(Layer):
    """ReLU on real and imaginary parts independently."""

    def __init__(self):
        super().__init__()
        self._mask = None
        self._complex = False

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        x = np.ascontiguousarray(x)
        is_c = _is_complex(x.dtype)
        xf = _component_view(x)
        m = xf > 0
        if train:
            self._mask = m
            self._complex = is_c
        out = xf * m
        return out.view(x.dtype) if is_c else out

    def backward(self, g: np.ndarray) -> np.ndarray:
        g = np.ascontiguousarray(g)
        out = _component_view(g) * self._mask
        return out.view(g.dtype) if self._complex else out


class CSigmoid(Layer):
    """Logistic sigmoid on real and imaginary parts independently."""

    def __init__(self):
        super().__init__()
        self._out_f = None
        self._complex = False

    @staticmethod
    def _sigmoid(x: np.ndarray) -> np.ndarray:
        # stable: exp of a non-positive argument only
        e = np.exp(-np.abs(x))
        t = 1.0 / (1.0 + e)
        return np.where(x >= 0, t, 1.0 - t)

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        x = np.ascontiguousarray(x)
        is_c = _is_complex(x.dtype)
        out = self._sigmoid(_component_view(x))
        if train:
            self._out_f = out
            self._complex = is_c
        return out.view(x.dtype) if is_c else out

    def backward(self, g: np.ndarray) -> np.ndarray:
        g = np.ascontiguousarray(g)
        s = self._out_f
        out = _component_view(g) * s * (1.0 - s)
        return out.view(g.dtype) if self._complex else out


class CAvgPool1d(Layer):
    """Non-overlapping mean pooling applied to each part independently."""

    def __init__(self, window: int):
        super().__init__()
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._in_len = None

    @classmethod
    def to_length(cls, length: int, target: int) -> "CAvgPool1d":
        """Global variant: pool a known length down to `target` positions."""
        if target < 1 or length % target:
            raise LengthNotDivisible(f"cannot pool length {length} to {target} equal windows")
        return cls(length // target)

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        b, c, length = x.shape
        if length % self.window:
            raise LengthNotDivisible(f"length {length} not divisible by window {self.window}")
        if train:
            self._in_len = length
        return x.reshape(b, c, length // self.window, self.window).mean(axis=3)

    def backward(self, g: np.ndarray) -> np.ndarray:
        # each input position received weight 1/window
        return np.repeat(g / self.window, self.window, axis=2)


class Flatten(Layer):
    """[B, C, L] <-> [B, C*L] bridge between the conv body and the head."""

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g: np.ndarray) -> np.ndarray:
        return g.reshape(self._shape)


class CBatchNorm1d(Layer):
    """Batch normalization over complex channels.

    Train mode whitens each channel's (x, y) pairs with the inverse
    principal square root of the 2x2 covariance (plus eps on the diagonal),
    then applies the complex affine gamma * z_norm + beta.  For a real
    dtype this degenerates to ordinary 1-D batch norm.  Statistics pool
    over batch and length; running statistics use exponential momentum and
    are the only state touched outside train mode.
    """

    def __init__(self, channels: int, dtype=np.complex64, momentum: float = 0.1,
                 eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.dtype = np.dtype(dtype)
        self.momentum = momentum
        self.eps = eps
        self.complex = _is_complex(dtype)
        rd = _real_dtype(dtype)
        if self.complex:
            self.params["gamma"] = np.ones(channels, dtype=self.dtype)
            self.params["beta"] = np.zeros(channels, dtype=self.dtype)
            self.running_mean = np.zeros(channels, dtype=self.dtype)
            # raw covariance entries (eps added on use); identity start
            self.running_vxx = np.ones(channels, dtype=rd)
            self.running_vyy = np.ones(channels, dtype=rd)
            self.running_vxy = np.zeros(channels, dtype=rd)
        else:
            self.params["gamma"] = np.ones(channels, dtype=self.dtype)
            self.params["beta"] = np.zeros(channels, dtype=self.dtype)
            self.running_mean = np.zeros(channels, dtype=self.dtype)
            self.running_var = np.ones(channels, dtype=rd)
        self._cache = None

    # -- whitening coefficients from covariance entries ---------------------
    @staticmethod
    def _whiten_coeffs(a, b, c):
        det = a * c - b * b
        if np.any(det <= 0):
            raise SingularCovariance("covariance + eps*I is not positive definite")
        s = np.sqrt(det)
        t = np.sqrt(a + c + 2.0 * s)
        d = s * t
        return (c + s) / d, -b / d, (a + s) / d, s, t, d

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ShapeMismatch(f"expected [batch, {self.channels}, L], got {x.shape}")
        if not self.complex:
            return self._forward_real(x, train)
        bsz, _, length = x.shape
        n = bsz * length
        if train:
            if n < 2:
                raise BatchTooSmall("complex batch norm needs >= 2 values per channel")
            mu = x.mean(axis=(0, 2))
            xc = x - mu[None, :, None]
            xr, xi = xc.real, xc.imag
            vxx = np.einsum("bcl,bcl->c", xr, xr) / n
            vyy = np.einsum("bcl,bcl->c", xi, xi) / n
            vxy = np.einsum("bcl,bcl->c", xr, xi) / n
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(self.dtype)
            self.running_vxx = ((1 - m) * self.running_vxx + m * vxx).astype(self.running_vxx.dtype)
            self.running_vyy = ((1 - m) * self.running_vyy + m * vyy).astype(self.running_vyy.dtype)
            self.running_vxy = ((1 - m) * self.running_vxy + m * vxy).astype(self.running_vxy.dtype)
        else:
            mu = self.running_mean
            xc = x - mu[None, :, None]
            vxx, vyy, vxy = self.running_vxx, self.running_vyy, self.running_vxy
        a = vxx + self.eps
        c = vyy + self.eps
        b = vxy
        wxx, wxy, wyy, s, t, d = self._whiten_coeffs(a, b, c)
        ux = wxx[None, :, None] * xc.real + wxy[None, :, None] * xc.imag
        uy = wxy[None, :, None] * xc.real + wyy[None, :, None] * xc.imag
        u = (ux + 1j * uy).astype(x.dtype)
        gamma = self.params["gamma"]
        out = gamma[None, :, None] * u + self.params["beta"][None, :, None]
        self._cache = (xc, u, (wxx, wxy, wyy), (a, b, c, s, t, d), n, train)
        return out.astype(x.dtype)

    def _forward_real(self, x: np.ndarray, train: bool) -> np.ndarray:
        bsz, _, length = x.shape
        n = bsz * length
        if train:
            if n < 2:
                raise BatchTooSmall("batch norm needs >= 2 values per channel")
            mu = x.mean(axis=(0, 2))
            xc = x - mu[None, :, None]
            var = np.mean(xc ** 2, axis=(0, 2))
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(self.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var).astype(self.running_var.dtype)
        else:
            mu = self.running_mean
            xc = x - mu[None, :, None]
            var = self.running_var
        ivar = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * ivar[None, :, None]
        out = self.params["gamma"][None, :, None] * xhat + self.params["beta"][None, :, None]
        self._cache = (xhat, ivar, n, train)
        return out.astype(x.dtype)

    def backward(self, g: np.ndarray) -> np.ndarray:
        if not self.complex:
            return self._backward_real(g)
        xc, u, (wxx, wxy, wyy), (a, b, c, s, t, d), n, train = self._cache
        gamma = self.params["gamma"]
        gr, gi = g.real, g.imag
        ur, ui = u.real, u.imag
        dg_r = np.einsum("bcl,bcl->c", gr, ur) + np.einsum("bcl,bcl->c", gi, ui)
        dg_i = np.einsum("bcl,bcl->c", gi, ur) - np.einsum("bcl,bcl->c", gr, ui)
        self.grads["gamma"] = (dg_r + 1j * dg_i).astype(gamma.dtype)
        self.grads["beta"] = g.sum(axis=(0, 2))
        gu = np.conj(gamma)[None, :, None] * g
        gx, gy = gu.real, gu.imag
        if not train:
            dx = wxx[None, :, None] * gx + wxy[None, :, None] * gy
            dy = wxy[None, :, None] * gx + wyy[None, :, None] * gy
            return (dx + 1j * dy).astype(g.dtype)
        xr, xi = xc.real, xc.imag
        # adjoints of the whitening coefficients
        g_wxx = np.einsum("bcl,bcl->c", gx, xr)
        g_wyy = np.einsum("bcl,bcl->c", gy, xi)
        g_wxy = np.einsum("bcl,bcl->c", gx, xi) + np.einsum("bcl,bcl->c", gy, xr)
        g_d = -(g_wxx * (c + s) + g_wyy * (a + s) - g_wxy * b) / d ** 2
        g_t = g_d * s
        g_s = (g_wxx + g_wyy) / d + g_d * t + g_t / t
        g_a = g_wyy / d + g_t / (2.0 * t) + g_s * c / (2.0 * s)
        g_c = g_wxx / d + g_t / (2.0 * t) + g_s * a / (2.0 * s)
        g_b = -g_wxy / d - g_s * b / s
        gsum_x = gx.sum(axis=(0, 2))
        gsum_y = gy.sum(axis=(0, 2))
        dx = wxx[None, :, None] * gx
        dx += wxy[None, :, None] * gy
        dx += (2.0 / n) * g_a[None, :, None] * xr
        dx += (1.0 / n) * g_b[None, :, None] * xi
        dx -= ((wxx * gsum_x + wxy * gsum_y) / n)[None, :, None]
        dy = wxy[None, :, None] * gx
        dy += wyy[None, :, None] * gy
        dy += (2.0 / n) * g_c[None, :, None] * xi
        dy += (1.0 / n) * g_b[None, :, None] * xr
        dy -= ((wxy * gsum_x + wyy * gsum_y) / n)[None, :, None]
        return (dx + 1j * dy).astype(g.dtype)

    def _backward_real(self, g: np.ndarray) -> np.ndarray:
        xhat, ivar, n, train = self._cache
        self.grads["gamma"] = np.sum(g * xhat, axis=(0, 2))
        self.grads["beta"] = g.sum(axis=(0, 2))
        gxhat = self.params["gamma"][None, :, None] * g
        if not train:
            return gxhat * ivar[None, :, None]
        mean_g = gxhat.mean(axis=(0, 2))
        mean_gx = (gxhat * xhat).mean(axis=(0, 2))
        return ivar[None, :, None] * (gxhat - mean_g[None, :, None]
                                      - xhat * mean_gx[None, :, None])

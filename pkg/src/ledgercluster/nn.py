"""Minimal layer library with hand-written reverse-mode gradients.

All tensors are float64 numpy arrays in channels-last layout: dense layers
see (..., F), convolutional and recurrent layers (N, T, C). Each layer
caches what its backward pass needs during forward; one backward per
forward.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def buffers(self) -> list[np.ndarray]:
        return []

    def zero_grads(self) -> None:
        for g in self.grads():
            g[...] = 0.0

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        self.layers = list(layers)

    def params(self):
        return [p for l in self.layers for p in l.params()]

    def grads(self):
        return [g for l in self.layers for g in l.grads()]

    def buffers(self):
        return [b for l in self.layers for b in l.buffers()]

    def forward(self, x, train):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class Dense(Layer):
    """Affine map on the trailing axis; accepts (..., in_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = uniform_init(rng, (in_dim, out_dim), in_dim)
        self.b = uniform_init(rng, (out_dim,), in_dim)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]

    def forward(self, x, train):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.gw += x2.T @ dy2
        self.gb += dy2.sum(axis=0)
        return (dy @ self.w.T).reshape(self._x.shape)


class ReLU(Layer):
    def forward(self, x, train):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.1):
        self.slope = slope

    def forward(self, x, train):
        self._mask = x > 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, dy):
        return np.where(self._mask, dy, self.slope * dy)


class Conv1d(Layer):
    """Stride-1 cross-correlation with odd kernel and same-length padding.

    Operates on (N, T, C); the kernel tensor is (k, C_in, C_out) so every
    offset contributes one contiguous GEMM.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator):
        assert kernel % 2 == 1
        self.kernel = kernel
        self.pad = (kernel - 1) // 2
        fan_in = in_ch * kernel
        self.w = uniform_init(rng, (kernel, in_ch, out_ch), fan_in)
        self.b = uniform_init(rng, (out_ch,), fan_in)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]

    def forward(self, x, train):
        n, t, c = x.shape
        xpad = np.pad(x, ((0, 0), (self.pad, self.pad), (0, 0)))
        self._xpad = xpad
        self._t = t
        out = np.empty((n, t, self.w.shape[2]))
        out[:] = self.b
        flat = out.reshape(n * t, -1)
        for j in range(self.kernel):
            xs = np.ascontiguousarray(xpad[:, j:j + t, :]).reshape(n * t, c)
            flat += xs @ self.w[j]
        return out

    def backward(self, dy):
        n = dy.shape[0]
        t = self._t
        c = self.w.shape[1]
        flat_dy = dy.reshape(n * t, -1)
        self.gb += flat_dy.sum(axis=0)
        dxpad = np.zeros_like(self._xpad)
        for j in range(self.kernel):
            xs = np.ascontiguousarray(self._xpad[:, j:j + t, :]).reshape(n * t, c)
            self.gw[j] += xs.T @ flat_dy
            dxpad[:, j:j + t, :] += (flat_dy @ self.w[j].T).reshape(n, t, c)
        return dxpad[:, self.pad:self.pad + t, :]


class BatchNorm1d(Layer):
    """Per-channel normalization over batch and time axes of (N, T, C).

    Batch statistics are used while training; running statistics once frozen
    or in eval mode. Freezing happens after pretraining.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.ggamma = np.zeros(channels)
        self.gbeta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self.frozen = False

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.ggamma, self.gbeta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def forward(self, x, train):
        use_batch = train and not self.frozen
        self._use_batch = use_batch
        if use_batch:
            mu = x.mean(axis=(0, 1))
            var = x.var(axis=(0, 1))
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mu = self.running_mean
            var = self.running_var
        self._istd = 1.0 / np.sqrt(var + self.eps)
        self._xc = x - mu
        self._xhat = self._xc * self._istd
        return self.gamma * self._xhat + self.beta

    def backward(self, dy):
        self.ggamma += (dy * self._xhat).sum(axis=(0, 1))
        self.gbeta += dy.sum(axis=(0, 1))
        dxhat = dy * self.gamma
        if not self._use_batch:
            return dxhat * self._istd
        n, t, _ = dy.shape
        m = n * t
        dvar = (dxhat * self._xc).sum(axis=(0, 1)) * (-0.5) * self._istd ** 3
        dmu = -(dxhat.sum(axis=(0, 1))) * self._istd + dvar * (-2.0 / m) * self._xc.sum(axis=(0, 1))
        return dxhat * self._istd + dvar * 2.0 * self._xc / m + dmu / m


class MaxPool1d(Layer):
    """Non-overlapping max pooling along time; length must divide the kernel."""

    def __init__(self, kernel: int):
        self.kernel = kernel

    def forward(self, x, train):
        n, t, c = x.shape
        assert t % self.kernel == 0
        windows = x.reshape(n, t // self.kernel, self.kernel, c)
        self._argmax = windows.argmax(axis=2)
        self._in_shape = x.shape
        return windows.max(axis=2)

    def backward(self, dy):
        n, t, c = self._in_shape
        dwin = np.zeros((n, t // self.kernel, self.kernel, c))
        np.put_along_axis(dwin, self._argmax[:, :, None, :], dy[:, :, None, :], axis=2)
        return dwin.reshape(n, t, c)


class Upsample1d(Layer):
    """Nearest-neighbour upsampling by an integer factor along time."""

    def __init__(self, factor: int):
        self.factor = factor

    def forward(self, x, train):
        self._in_shape = x.shape
        return np.repeat(x, self.factor, axis=1)

    def backward(self, dy):
        n, t, c = self._in_shape
        return dy.reshape(n, t, self.factor, c).sum(axis=2)


class GlobalAvgPool1d(Layer):
    def forward(self, x, train):
        self._t = x.shape[1]
        return x.mean(axis=1)

    def backward(self, dy):
        return np.repeat(dy[:, None, :], self._t, axis=1) / self._t


# --- shape adapters ----------------------------------------------------------

class AddChannel(Layer):
    """(N, T) -> (N, T, 1)"""

    def forward(self, x, train):
        return x[:, :, None]

    def backward(self, dy):
        return dy[:, :, 0]


class DropChannel(Layer):
    """(N, T, 1) -> (N, T)"""

    def forward(self, x, train):
        return x[:, :, 0]

    def backward(self, dy):
        return dy[:, :, None]


class Reshape(Layer):
    def __init__(self, shape: tuple[int, ...]):
        self.shape = shape  # per-sample shape

    def forward(self, x, train):
        self._in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._in_shape)


class RepeatLatent(Layer):
    """(N, d) -> (N, T, d) by repetition along a new time axis."""

    def __init__(self, steps: int):
        self.steps = steps

    def forward(self, x, train):
        return np.repeat(x[:, None, :], self.steps, axis=1)

    def backward(self, dy):
        return dy.sum(axis=1)


# --- recurrent layers --------------------------------------------------------

class _LSTMDirection:
    """One direction of an LSTM over (N, T, F); gate order i, f, o, g."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.wx = uniform_init(rng, (in_dim, 4 * hidden), in_dim)
        self.wh = uniform_init(rng, (hidden, 4 * hidden), hidden)
        self.b = uniform_init(rng, (4 * hidden,), in_dim + hidden)
        self.gwx = np.zeros_like(self.wx)
        self.gwh = np.zeros_like(self.wh)
        self.gb = np.zeros_like(self.b)

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, t, f_in = x.shape
        h = self.hidden
        h_t = np.zeros((n, h))
        c_t = np.zeros((n, h))
        self._x = x
        self._cache = []
        # Input projections for every step in one GEMM; the loop only adds
        # the recurrent term.
        xw = (x.reshape(n * t, f_in) @ self.wx).reshape(n, t, 4 * h) + self.b
        out = np.empty((n, t, h))
        for step in range(t):
            gates = xw[:, step, :] + h_t @ self.wh
            sig = expit(gates[:, :3 * h])
            i = sig[:, :h]
            f = sig[:, h:2 * h]
            o = sig[:, 2 * h:]
            g = np.tanh(gates[:, 3 * h:])
            c_prev = c_t
            c_t = f * c_prev + i * g
            tc = np.tanh(c_t)
            h_prev = h_t
            h_t = o * tc
            out[:, step, :] = h_t
            self._cache.append((i, f, o, g, c_prev, tc, h_prev))
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, t, f_in = self._x.shape
        h = self.hidden
        dgates = np.empty((n, t, 4 * h))
        dh_next = np.zeros((n, h))
        dc_next = np.zeros((n, h))
        for step in range(t - 1, -1, -1):
            i, f, o, g, c_prev, tc, h_prev = self._cache[step]
            dh = dout[:, step, :] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dc_next = dc * f
            dg_t = dgates[:, step, :]
            dg_t[:, :h] = dc * g * i * (1.0 - i)
            dg_t[:, h:2 * h] = dc * c_prev * f * (1.0 - f)
            dg_t[:, 2 * h:3 * h] = do * o * (1.0 - o)
            dg_t[:, 3 * h:] = dc * i * (1.0 - g * g)
            self.gwh += h_prev.T @ dg_t
            dh_next = dg_t @ self.wh.T
        flat = dgates.reshape(n * t, 4 * h)
        self.gwx += self._x.reshape(n * t, f_in).T @ flat
        self.gb += flat.sum(axis=0)
        return (flat @ self.wx.T).reshape(n, t, f_in)


class BiLSTM(Layer):
    """Bidirectional LSTM layer: (N, T, F) -> (N, T, 2H), forward half first."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.fwd = _LSTMDirection(in_dim, hidden, rng)
        self.bwd = _LSTMDirection(in_dim, hidden, rng)

    def params(self):
        return [self.fwd.wx, self.fwd.wh, self.fwd.b, self.bwd.wx, self.bwd.wh, self.bwd.b]

    def grads(self):
        return [self.fwd.gwx, self.fwd.gwh, self.fwd.gb, self.bwd.gwx, self.bwd.gwh, self.bwd.gb]

    def forward(self, x, train):
        out_f = self.fwd.forward(x)
        out_b = self.bwd.forward(np.ascontiguousarray(x[:, ::-1, :]))[:, ::-1, :]
        return np.concatenate([out_f, out_b], axis=2)

    def backward(self, dy):
        h = self.hidden
        dx_f = self.fwd.backward(dy[:, :, :h])
        dx_b = self.bwd.backward(np.ascontiguousarray(dy[:, ::-1, h:]))[:, ::-1, :]
        return dx_f + dx_b


class FinalHiddenConcat(Layer):
    """Concatenate the final hidden states of a BiLSTM sequence output.

    Forward direction ends at the last step, backward at the first:
    (N, T, 2H) -> (N, 2H).
    """

    def __init__(self, hidden: int):
        self.hidden = hidden

    def forward(self, x, train):
        self._in_shape = x.shape
        h = self.hidden
        return np.concatenate([x[:, -1, :h], x[:, 0, h:]], axis=1)

    def backward(self, dy):
        h = self.hidden
        dx = np.zeros(self._in_shape)
        dx[:, -1, :h] = dy[:, :h]
        dx[:, 0, h:] = dy[:, h:]
        return dx


# --- composite blocks --------------------------------------------------------

class ResidualBlock1d(Layer):
    """Two same-length convolutions with normalization plus a skip connection.

    The skip is the identity when channel counts match, otherwise a 1x1
    projection. ``linear_out`` drops the output activation and the
    normalization after the second convolution (used by the last decoder
    block so reconstructions are unbounded).
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int,
                 rng: np.random.Generator, linear_out: bool = False):
        self.conv1 = Conv1d(in_ch, out_ch, kernel, rng)
        self.bn1 = BatchNorm1d(out_ch)
        self.act1 = ReLU()
        self.conv2 = Conv1d(out_ch, out_ch, kernel, rng)
        self.bn2 = None if linear_out else BatchNorm1d(out_ch)
        self.proj = None
        self.proj_bn = None
        if in_ch != out_ch:
            self.proj = Conv1d(in_ch, out_ch, 1, rng)
            self.proj_bn = None if linear_out else BatchNorm1d(out_ch)
        self.act_out = None if linear_out else ReLU()

    def _sublayers(self):
        layers = [self.conv1, self.bn1, self.conv2]
        if self.bn2 is not None:
            layers.append(self.bn2)
        if self.proj is not None:
            layers.append(self.proj)
        if self.proj_bn is not None:
            layers.append(self.proj_bn)
        return layers

    def params(self):
        return [p for l in self._sublayers() for p in l.params()]

    def grads(self):
        return [g for l in self._sublayers() for g in l.grads()]

    def buffers(self):
        return [b for l in self._sublayers() for b in l.buffers()]

    def forward(self, x, train):
        main = self.conv1.forward(x, train)
        main = self.bn1.forward(main, train)
        main = self.act1.forward(main, train)
        main = self.conv2.forward(main, train)
        if self.bn2 is not None:
            main = self.bn2.forward(main, train)
        if self.proj is not None:
            skip = self.proj.forward(x, train)
            if self.proj_bn is not None:
                skip = self.proj_bn.forward(skip, train)
        else:
            skip = x
        out = main + skip
        if self.act_out is not None:
            out = self.act_out.forward(out, train)
        return out

    def backward(self, dy):
        if self.act_out is not None:
            dy = self.act_out.backward(dy)
        dmain = dy
        dskip = dy
        if self.bn2 is not None:
            dmain = self.bn2.backward(dmain)
        dmain = self.conv2.backward(dmain)
        dmain = self.act1.backward(dmain)
        dmain = self.bn1.backward(dmain)
        dx = self.conv1.backward(dmain)
        if self.proj is not None:
            if self.proj_bn is not None:
                dskip = self.proj_bn.backward(dskip)
            dx = dx + self.proj.backward(dskip)
        else:
            dx = dx + dskip
        return dx


def collect_params(stages: list[Layer]) -> list[np.ndarray]:
    return [p for s in stages for p in s.params()]


def collect_grads(stages: list[Layer]) -> list[np.ndarray]:
    return [g for s in stages for g in s.grads()]


def collect_buffers(stages: list[Layer]) -> list[np.ndarray]:
    return [b for s in stages for b in s.buffers()]

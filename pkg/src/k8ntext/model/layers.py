"""Neural network layers implemented on numpy.

All layers operate on (batch, time, channels) tensors, cache what the
backward pass needs, and accumulate parameter gradients in .grads keyed by
parameter name. Shapes never depend on the window length, so a trained
model works for any window size.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    """Input tensor does not match the layer's expected shape."""


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grads(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state saved in checkpoints (e.g. running stats)."""
        return {}


class LSTM(Layer):
    """Unidirectional LSTM over (B, T, F) inputs, returning all hidden states.

    Gate layout is [input, forget, candidate, output] on the 4H axis. The
    input projection for all timesteps is one matmul; only the
    hidden-to-hidden product runs in the time loop.
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.n_in = n_in
        self.n_hidden = n_hidden
        lim_x = 1.0 / np.sqrt(n_in)
        lim_h = 1.0 / np.sqrt(n_hidden)
        self.params = {
            "Wx": rng.uniform(-lim_x, lim_x, (n_in, 4 * n_hidden)).astype(dtype),
            "Wh": rng.uniform(-lim_h, lim_h, (n_hidden, 4 * n_hidden)).astype(dtype),
            "b": np.zeros(4 * n_hidden, dtype=dtype),
        }
        # Forget-gate bias starts at 1 so memory persists early in training.
        self.params["b"][n_hidden : 2 * n_hidden] = 1.0
        self.zero_grads()

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeMismatch(f"LSTM expects (B, T, {self.n_in}), got {x.shape}")
        B, T, _ = x.shape
        H = self.n_hidden
        Wx, Wh, b = self.params["Wx"], self.params["Wh"], self.params["b"]

        xp = x.reshape(B * T, self.n_in) @ Wx
        xp = xp.reshape(B, T, 4 * H) + b

        gates = np.empty((B, T, 4 * H), dtype=xp.dtype)
        c = np.empty((B, T, H), dtype=xp.dtype)
        tanh_c = np.empty((B, T, H), dtype=xp.dtype)
        h = np.empty((B, T, H), dtype=xp.dtype)

        h_prev = np.zeros((B, H), dtype=xp.dtype)
        c_prev = np.zeros((B, H), dtype=xp.dtype)
        for t in range(T):
            z = xp[:, t] + h_prev @ Wh
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H : 2 * H])
            g = np.tanh(z[:, 2 * H : 3 * H])
            o = sigmoid(z[:, 3 * H :])
            c_t = f * c_prev + i * g
            tc = np.tanh(c_t)
            h_t = o * tc
            gates[:, t, :H] = i
            gates[:, t, H : 2 * H] = f
            gates[:, t, 2 * H : 3 * H] = g
            gates[:, t, 3 * H :] = o
            c[:, t] = c_t
            tanh_c[:, t] = tc
            h[:, t] = h_t
            h_prev, c_prev = h_t, c_t

        self._cache = (x, gates, c, tanh_c, h)
        return h

    def backward(self, dh_out: np.ndarray) -> np.ndarray:
        x, gates, c, tanh_c, h = self._cache
        B, T, _ = x.shape
        H = self.n_hidden
        Wh = self.params["Wh"]

        dz_all = np.empty((B, T, 4 * H), dtype=x.dtype)
        dWh = np.zeros_like(Wh)
        carry_dh = np.zeros((B, H), dtype=x.dtype)
        carry_dc = np.zeros((B, H), dtype=x.dtype)

        for t in range(T - 1, -1, -1):
            i = gates[:, t, :H]
            f = gates[:, t, H : 2 * H]
            g = gates[:, t, 2 * H : 3 * H]
            o = gates[:, t, 3 * H :]
            tc = tanh_c[:, t]
            c_prev = c[:, t - 1] if t > 0 else np.zeros((B, H), dtype=x.dtype)
            h_prev = h[:, t - 1] if t > 0 else None

            dh = dh_out[:, t] + carry_dh
            dc = dh * o * (1.0 - tc * tc) + carry_dc

            di = dc * g
            df = dc * c_prev
            dg = dc * i
            do = dh * tc

            dz = dz_all[:, t]
            dz[:, :H] = di * i * (1.0 - i)
            dz[:, H : 2 * H] = df * f * (1.0 - f)
            dz[:, 2 * H : 3 * H] = dg * (1.0 - g * g)
            dz[:, 3 * H :] = do * o * (1.0 - o)

            if h_prev is not None:
                dWh += h_prev.T @ dz
            carry_dh = dz @ Wh.T
            carry_dc = dc * f

        flat_dz = dz_all.reshape(B * T, 4 * H)
        self.grads["Wx"] += x.reshape(B * T, self.n_in).T @ flat_dz
        self.grads["Wh"] += dWh
        self.grads["b"] += flat_dz.sum(axis=0)
        dx = (flat_dz @ self.params["Wx"].T).reshape(B, T, self.n_in)
        return dx


class BiLSTM(Layer):
    """Two LSTMs over opposite time directions, outputs concatenated."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.fwd = LSTM(n_in, n_hidden, rng, dtype)
        self.bwd = LSTM(n_in, n_hidden, rng, dtype)
        self.n_hidden = n_hidden
        for name, p in self.fwd.params.items():
            self.params[f"fwd.{name}"] = p
        for name, p in self.bwd.params.items():
            self.params[f"bwd.{name}"] = p
        self.zero_grads()

    def zero_grads(self):
        super().zero_grads()
        # Child layers accumulate into their own dicts; rebind to ours.
        if hasattr(self, "fwd"):
            for name in self.fwd.params:
                self.fwd.grads[name] = self.grads[f"fwd.{name}"]
            for name in self.bwd.params:
                self.bwd.grads[name] = self.grads[f"bwd.{name}"]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        hf = self.fwd.forward(x, training)
        hb = self.bwd.forward(x[:, ::-1], training)[:, ::-1]
        return np.concatenate([hf, hb], axis=2)

    def backward(self, dh: np.ndarray) -> np.ndarray:
        H = self.n_hidden
        dxf = self.fwd.backward(np.ascontiguousarray(dh[:, :, :H]))
        dxb = self.bwd.backward(np.ascontiguousarray(dh[:, ::-1, H:]))[:, ::-1]
        return dxf + dxb


class BatchNorm(Layer):
    """Per-channel batch normalization over the (batch, time) axes."""

    def __init__(self, n_channels: int, dtype=np.float32, momentum: float = 0.99, eps: float = 1e-3):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params = {
            "gamma": np.ones(n_channels, dtype=dtype),
            "beta": np.zeros(n_channels, dtype=dtype),
        }
        self.running_mean = np.zeros(n_channels, dtype=dtype)
        self.running_var = np.ones(n_channels, dtype=dtype)
        self.zero_grads()

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if training:
            mean = x.mean(axis=(0, 1))
            var = x.var(axis=(0, 1))
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(x.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(x.dtype)
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xn = (x - mean) * inv
        self._cache = (xn, inv, training, x.shape[0] * x.shape[1])
        return self.params["gamma"] * xn + self.params["beta"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xn, inv, training, n = self._cache
        self.grads["gamma"] += (dout * xn).sum(axis=(0, 1))
        self.grads["beta"] += dout.sum(axis=(0, 1))
        dxn = dout * self.params["gamma"]
        if not training:
            return dxn * inv
        # Gradient through the batch statistics themselves.
        return (inv / n) * (
            n * dxn - dxn.sum(axis=(0, 1)) - xn * (dxn * xn).sum(axis=(0, 1))
        )


class Dropout(Layer):
    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if not training or self.rate <= 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dout
        return dout * self._mask


class TimeDistributedDense(Layer):
    """Affine map applied independently at every timestep."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        lim = 1.0 / np.sqrt(n_in)
        self.params = {
            "W": rng.uniform(-lim, lim, (n_in, n_out)).astype(dtype),
            "b": np.zeros(n_out, dtype=dtype),
        }
        self.zero_grads()

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"dense expects {self.n_in} channels, got {x.shape}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        B, T, _ = dout.shape
        flat_x = self._x.reshape(B * T, self.n_in)
        flat_d = dout.reshape(B * T, self.n_out)
        self.grads["W"] += flat_x.T @ flat_d
        self.grads["b"] += flat_d.sum(axis=0)
        return (flat_d @ self.params["W"].T).reshape(self._x.shape)

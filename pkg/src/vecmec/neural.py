"""Dense feed-forward nets with hand-written backprop, Adam and soft updates.

Every net keeps all parameters in one flat vector ``params`` (weights and
biases are views into it), so optimizer steps and target blending are single
vector operations.
"""

from __future__ import annotations

import json

import numpy as np

CKPT_HEADER = "vecmec-ckpt-v1"


def _sigmoid(z):
    # tanh form: overflow-free for any z, one ufunc pass
    out = np.tanh(0.5 * z)
    out *= 0.5
    out += 0.5
    return out


ACTIVATIONS = ("sigmoid", "relu", "linear")


def param_count(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


class DenseNet:
    """Affine layers ``x @ W + b`` each followed by an activation.

    ``sizes`` lists layer widths from input to output; ``activations`` has one
    entry per layer. Inputs are row vectors or (batch, fan_in) matrices.
    """

    def __init__(self, sizes, activations, rng=None, dtype=np.float64, buffer=None, grad_buffer=None):
        sizes = [int(s) for s in sizes]
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.sizes = sizes
        self.activations = list(activations)
        n = param_count(sizes)
        self.params = np.zeros(n, dtype=dtype) if buffer is None else buffer
        self.grads = np.zeros(n, dtype=dtype) if grad_buffer is None else grad_buffer
        if self.params.shape != (n,) or self.grads.shape != (n,):
            raise ValueError(f"buffers must have shape ({n},)")
        self.W, self.b, self.gW, self.gb = [], [], [], []
        k = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            for store, grad, shape in ((self.W, self.gW, (fan_in, fan_out)), (self.b, self.gb, (fan_out,))):
                m = int(np.prod(shape))
                store.append(self.params[k : k + m].reshape(shape))
                grad.append(self.grads[k : k + m].reshape(shape))
                k += m
        if rng is not None:
            self.init(rng)
        self._cache = None

    def init(self, rng) -> None:
        for W, b in zip(self.W, self.b):
            bound = 1.0 / np.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, W.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def forward(self, x):
        x = np.asarray(x, dtype=self.params.dtype)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.n_in:
            raise ValueError(f"expected input width {self.n_in}, got {h.shape[1]}")
        cache = [h]
        for W, b, act in zip(self.W, self.b, self.activations):
            z = h @ W + b
            if act == "sigmoid":
                h = _sigmoid(z)
            elif act == "relu":
                h = np.maximum(z, 0.0)
            else:
                h = z
            cache.append(h)
        self._cache = (cache, single)
        return h[0] if single else h

    __call__ = forward

    def backward(self, grad_out, accumulate=False):
        """Backpropagate dLoss/dOutput from the last forward pass.

        Fills ``self.grads`` (added to it when ``accumulate``) and returns
        dLoss/dInput with the same leading shape as the forward input.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        cache, single = self._cache
        g = np.asarray(grad_out, dtype=self.params.dtype)
        g = g[None, :] if single else g
        if not accumulate:
            self.grads[...] = 0.0
        for layer in range(len(self.W) - 1, -1, -1):
            out = cache[layer + 1]
            act = self.activations[layer]
            if act == "sigmoid":
                g = g * out * (1.0 - out)
            elif act == "relu":
                g = g * (out > 0)
            inp = cache[layer]
            self.gW[layer] += inp.T @ g
            self.gb[layer] += g.sum(axis=0)
            g = g @ self.W[layer].T
        return g[0] if single else g

    def copy(self) -> "DenseNet":
        twin = DenseNet(self.sizes, self.activations, dtype=self.params.dtype)
        twin.params[...] = self.params
        return twin

    def to_dict(self) -> dict:
        return {"sizes": self.sizes, "activations": self.activations, "params": self.params.tolist()}

    @classmethod
    def from_dict(cls, data: dict, dtype=np.float64) -> "DenseNet":
        net = cls(data["sizes"], data["activations"], dtype=dtype)
        net.params[...] = np.asarray(data["params"], dtype=dtype)
        return net


class CriticNet:
    """Q(s, a): two hidden layers on the state, one on the action, then a joint head.

    The three sub-nets share one flat parameter vector.
    """

    def __init__(self, state_dim, action_dim, hidden=256, rng=None, dtype=np.float64):
        self.state_dim, self.action_dim, self.hidden = int(state_dim), int(action_dim), int(hidden)
        h = self.hidden
        shapes = [
            ([state_dim, h, h], ["relu", "relu"]),
            ([action_dim, h], ["relu"]),
            ([2 * h, h, h, 1], ["relu", "relu", "linear"]),
        ]
        total = sum(param_count(s) for s, _ in shapes)
        self.params = np.zeros(total, dtype=dtype)
        self.grads = np.zeros(total, dtype=dtype)
        nets, k = [], 0
        for sizes, acts in shapes:
            n = param_count(sizes)
            nets.append(DenseNet(sizes, acts, rng, dtype, self.params[k : k + n], self.grads[k : k + n]))
            k += n
        self.state_net, self.action_net, self.head = nets

    def forward(self, s, a):
        hs = self.state_net.forward(s)
        ha = self.action_net.forward(a)
        return self.head.forward(np.concatenate([hs, ha], axis=-1))

    __call__ = forward

    def backward(self, grad_q):
        """Fill ``self.grads``; return (dQ/ds, dQ/da) scaled by ``grad_q``."""
        g = self.head.backward(grad_q)
        h = self.hidden
        gs = self.state_net.backward(g[..., :h])
        ga = self.action_net.backward(g[..., h:])
        return gs, ga

    def copy(self) -> "CriticNet":
        twin = CriticNet(self.state_dim, self.action_dim, self.hidden, dtype=self.params.dtype)
        twin.params[...] = self.params
        return twin

    def to_dict(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "hidden": self.hidden,
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, dtype=np.float64) -> "CriticNet":
        net = cls(data["state_dim"], data["action_dim"], data["hidden"], dtype=dtype)
        net.params[...] = np.asarray(data["params"], dtype=dtype)
        return net


class Adam:
    """Adaptive-moment optimizer over a flat parameter vector."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float64):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self._tmp = np.zeros(size, dtype=dtype)
        self.t = 0

    def step(self, params, grads) -> None:
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise ValueError("parameter/gradient shape does not match optimizer state")
        self.t += 1
        b1, b2, tmp = self.beta1, self.beta2, self._tmp
        self.m *= b1
        np.multiply(grads, 1 - b1, out=tmp)
        self.m += tmp
        self.v *= b2
        np.multiply(grads, grads, out=tmp)
        tmp *= 1 - b2
        self.v += tmp
        # bias correction folded into the step size; same update as lr * m_hat / (sqrt(v_hat) + eps)
        c2 = np.sqrt(1 - b2**self.t)
        np.sqrt(self.v, out=tmp)
        tmp += self.eps * c2
        np.divide(self.m, tmp, out=tmp)
        tmp *= self.lr * c2 / (1 - b1**self.t)
        params -= tmp


def optimize_step(net, opt: Adam, grads=None):
    """Apply one optimizer step to ``net`` using ``grads`` (defaults to the net's own)."""
    opt.step(net.params, net.grads if grads is None else grads)
    return net


def soft_update(target, main, tau: float):
    """Blend ``target <- tau * main + (1 - tau) * target`` in place."""
    t = target.params if hasattr(target, "params") else target
    m = main.params if hasattr(main, "params") else main
    if t.shape != m.shape:
        raise ValueError("target and main parameter shapes differ")
    t *= 1.0 - tau
    t += tau * m
    return target


def save_checkpoint(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump({"format": CKPT_HEADER, **payload}, fh)


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format") != CKPT_HEADER:
        raise ValueError(f"{path}: not a {CKPT_HEADER} checkpoint")
    return data


class DenseStack:
    """``k`` same-shaped nets evaluated together with batched matmuls.

    Row ``i`` of ``params`` is net ``i``'s flat parameter vector; ``nets[i]``
    is a :class:`DenseNet` viewing that row, so single-net and stacked code see
    the same numbers.
    """

    def __init__(self, k, sizes, activations, rng=None, dtype=np.float64, buffer=None, grad_buffer=None):
        self.k = int(k)
        self.sizes = [int(s) for s in sizes]
        self.activations = list(activations)
        n = param_count(self.sizes)
        self.params = np.zeros((k, n), dtype=dtype) if buffer is None else buffer
        self.grads = np.zeros((k, n), dtype=dtype) if grad_buffer is None else grad_buffer
        self.nets = [
            DenseNet(self.sizes, self.activations, rng, dtype, self.params[i], self.grads[i]) for i in range(self.k)
        ]
        self.W, self.b, self.gW, self.gb = [], [], [], []
        off = 0
        for fi, fo in zip(self.sizes[:-1], self.sizes[1:]):
            self.W.append(self.params[:, off : off + fi * fo].reshape(k, fi, fo))
            self.gW.append(self.grads[:, off : off + fi * fo].reshape(k, fi, fo))
            off += fi * fo
            self.b.append(self.params[:, off : off + fo].reshape(k, 1, fo))
            self.gb.append(self.grads[:, off : off + fo].reshape(k, 1, fo))
            off += fo
        self._cache = None

    def forward(self, x):
        """``x``: (k, B, in) or (B, in) shared by all nets; returns (k, B, out)."""
        h = np.asarray(x, dtype=self.params.dtype)
        if h.ndim == 2:
            h = h[None]
        cache = [h]
        for W, b, act in zip(self.W, self.b, self.activations):
            z = np.matmul(h, W) + b
            if act == "sigmoid":
                h = _sigmoid(z)
            elif act == "relu":
                h = np.maximum(z, 0.0)
            else:
                h = z
            cache.append(h)
        self._cache = cache
        return h

    __call__ = forward

    def backward(self, grad_out, param_grads=True):
        """Return dLoss/dInput (k, B, in); fill ``grads`` unless ``param_grads`` is False."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        cache = self._cache
        g = np.asarray(grad_out, dtype=self.params.dtype)
        for layer in range(len(self.W) - 1, -1, -1):
            out = cache[layer + 1]
            act = self.activations[layer]
            if act == "sigmoid":
                g = g * out * (1.0 - out)
            elif act == "relu":
                g = g * (out > 0)
            if param_grads:
                inp = cache[layer]
                self.gW[layer][...] = np.matmul(np.swapaxes(inp, 1, 2), g)
                self.gb[layer][...] = g.sum(axis=1, keepdims=True)
            g = np.matmul(g, np.swapaxes(self.W[layer], 1, 2))
        return g


class CriticStack:
    """``k`` critics sharing the :class:`CriticNet` layout, evaluated together."""

    def __init__(self, k, state_dim, action_dim, hidden=256, rng=None, dtype=np.float64):
        self.k, self.state_dim, self.action_dim, self.hidden = int(k), int(state_dim), int(action_dim), int(hidden)
        h = self.hidden
        layout = [
            ([state_dim, h, h], ["relu", "relu"]),
            ([action_dim, h], ["relu"]),
            ([2 * h, h, h, 1], ["relu", "relu", "linear"]),
        ]
        total = sum(param_count(s) for s, _ in layout)
        self.params = np.zeros((k, total), dtype=dtype)
        self.grads = np.zeros((k, total), dtype=dtype)
        stacks, off = [], 0
        for sizes, acts in layout:
            n = param_count(sizes)
            stacks.append(
                DenseStack(k, sizes, acts, rng, dtype, self.params[:, off : off + n], self.grads[:, off : off + n])
            )
            off += n
        self.state_net, self.action_net, self.head = stacks

    def forward(self, s, a):
        hs = self.state_net.forward(s)
        ha = self.action_net.forward(a)
        k = max(hs.shape[0], ha.shape[0])
        hs = np.broadcast_to(hs, (k,) + hs.shape[1:])
        ha = np.broadcast_to(ha, (k,) + ha.shape[1:])
        return self.head.forward(np.concatenate([hs, ha], axis=-1))

    __call__ = forward

    def backward(self, grad_q, param_grads=True):
        g = self.head.backward(grad_q, param_grads)
        h = self.hidden
        gs = self.state_net.backward(g[..., :h], param_grads)
        ga = self.action_net.backward(g[..., h:], param_grads)
        return gs, ga

    def critic(self, i) -> CriticNet:
        """Standalone copy of critic ``i``."""
        net = CriticNet(self.state_dim, self.action_dim, self.hidden, dtype=self.params.dtype)
        net.params[...] = self.params[i]
        return net

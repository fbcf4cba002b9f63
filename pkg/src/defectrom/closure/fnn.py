"""Small fully-connected network mapping ``(t, p)`` to reduced defect coefficients.

Written directly in NumPy: SiLU hidden layers, a Tanh output layer, full-batch
Adam on the mean squared error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["FnnHyper", "FnnModel", "DivergenceError", "fnn_train", "fnn_eval", "fnn_eval_all", "loss_and_grad",
           "forward"]


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class FnnHyper:
    hidden: tuple = (16, 64, 64)
    epochs: int = 2000
    learning_rate: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("epochs must be non-negative and learning_rate positive")
        if not all(int(h) > 0 for h in self.hidden):
            raise ValueError("hidden widths must be positive")


def _silu(z):
    return z / (1.0 + np.exp(-z))


def _silu_grad(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def _shapes(n_in: int, hidden, n_out: int) -> list:
    widths = [n_in, *[int(h) for h in hidden], n_out]
    return [(widths[i], widths[i + 1]) for i in range(len(widths) - 1)]


def _unpack(theta: np.ndarray, shapes) -> list:
    layers, pos = [], 0
    for a, b in shapes:
        W = theta[pos:pos + a * b].reshape(a, b)
        pos += a * b
        c = theta[pos:pos + b]
        pos += b
        layers.append((W, c))
    return layers


def forward(theta: np.ndarray, shapes, Z: np.ndarray) -> np.ndarray:
    """Network output for normalized inputs ``Z`` (rows are samples)."""
    h = Z
    layers = _unpack(theta, shapes)
    for W, c in layers[:-1]:
        h = _silu(h @ W + c)
    W, c = layers[-1]
    return np.tanh(h @ W + c)


def loss_and_grad(theta: np.ndarray, shapes, Z: np.ndarray, Y: np.ndarray) -> tuple:
    """Loss ``sum ||out - Y||^2 / (2 M)`` over ``M`` samples and its gradient."""
    layers = _unpack(theta, shapes)
    acts, pre = [Z], []
    h = Z
    for W, c in layers[:-1]:
        z = h @ W + c
        pre.append(z)
        h = _silu(z)
        acts.append(h)
    W, c = layers[-1]
    out = np.tanh(h @ W + c)
    m = Z.shape[0]
    diff = out - Y
    loss = 0.5 * np.sum(diff * diff) / m
    delta = diff * (1.0 - out * out) / m
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append((acts[i].T @ delta, delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ W.T) * _silu_grad(pre[i - 1])
    grads.reverse()
    g = np.concatenate([np.concatenate([gW.ravel(), gc]) for gW, gc in grads])
    return loss, g


@dataclass
class FnnModel:
    """Trained network plus its input and output normalizations."""

    theta: np.ndarray
    shapes: list
    in_lo: np.ndarray
    in_scale: np.ndarray
    out_mid: np.ndarray
    out_half: np.ndarray
    hyper: FnnHyper
    times: np.ndarray
    domain: object
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_out(self) -> int:
        return self.shapes[-1][1]

    @property
    def final_loss(self) -> float:
        return float(self.loss_history[-1]) if self.loss_history.size else float("nan")

    def inputs(self, t, p) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        q = np.broadcast_to(np.atleast_1d(np.asarray(p, dtype=float)), (t.size, self.in_lo.size - 1))
        raw = np.column_stack([t, q])
        return self.normalize_inputs(raw)

    def normalize_inputs(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.in_lo) / self.in_scale

    def predict_normalized(self, Z: np.ndarray) -> np.ndarray:
        return forward(self.theta, self.shapes, Z)

    def denormalize(self, out: np.ndarray) -> np.ndarray:
        return out * self.out_half + self.out_mid


def _glorot(rng: np.random.Generator, shapes) -> np.ndarray:
    parts = []
    for a, b in shapes:
        lim = np.sqrt(6.0 / (a + b))
        parts.append(rng.uniform(-lim, lim, size=a * b))
        parts.append(np.zeros(b))
    return np.concatenate(parts)


def _minmax(a: np.ndarray) -> tuple:
    lo, hi = a.min(axis=0), a.max(axis=0)
    span = hi - lo
    return lo, np.where(span > 0, span, 1.0)


def fnn_train(reduced: np.ndarray, params, times, hyper: FnnHyper = FnnHyper(), domain=None) -> FnnModel:
    """Train a network on the reduced defect tensor.

    Parameters
    ----------
    reduced : ndarray, shape (n_d, N_t, d_s)
    params : array_like, shape (d_s, p)
    times : array_like, shape (N_t,)
    hyper : FnnHyper
    domain : ParameterDomain, optional
        Log-tagged axes are mapped through ``log10`` before scaling.

    Raises
    ------
    DivergenceError
        If the loss becomes NaN or infinite.
    """
    reduced = np.asarray(reduced, dtype=float)
    params = np.atleast_2d(np.asarray(params, dtype=float))
    times = np.asarray(times, dtype=float)
    n_d, n_t, d_s = reduced.shape
    if params.shape[0] != d_s or times.shape != (n_t,):
        raise ValueError("inconsistent training data shapes")
    q = domain.normalize(params) if domain is not None else params
    raw = np.column_stack([np.tile(times, d_s), np.repeat(q, n_t, axis=0)])
    Y = reduced.transpose(2, 1, 0).reshape(d_s * n_t, n_d)

    in_lo, in_scale = _minmax(raw)
    Z = (raw - in_lo) / in_scale
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    half = np.where(half > 0, half, 1.0)
    Yn = (Y - mid) / half

    shapes = _shapes(raw.shape[1], hyper.hidden, n_d)
    rng = np.random.default_rng(hyper.seed)
    theta = _glorot(rng, shapes)
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    history = np.empty(hyper.epochs)
    for e in range(hyper.epochs):
        loss, g = loss_and_grad(theta, shapes, Z, Yn)
        if not np.isfinite(loss):
            raise DivergenceError(
                f"loss became {loss} at epoch {e}; try a smaller learning rate than {hyper.learning_rate}")
        history[e] = loss
        m1 = hyper.beta1 * m1 + (1 - hyper.beta1) * g
        m2 = hyper.beta2 * m2 + (1 - hyper.beta2) * g * g
        mhat = m1 / (1 - hyper.beta1 ** (e + 1))
        vhat = m2 / (1 - hyper.beta2 ** (e + 1))
        theta = theta - hyper.learning_rate * mhat / (np.sqrt(vhat) + hyper.eps)
    final, _ = loss_and_grad(theta, shapes, Z, Yn)
    if not np.isfinite(final):
        raise DivergenceError(f"final loss is {final}; try a smaller learning rate than {hyper.learning_rate}")
    history = np.append(history, final)

    # parameters are stored pre-normalized through the domain map
    model = FnnModel(theta, shapes, in_lo, in_scale, mid, half, hyper, times, domain, history)
    return model


def _prepare_p(model: FnnModel, p) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    return model.domain.normalize(p) if model.domain is not None else p


def fnn_eval(model: FnnModel, t, p) -> np.ndarray:
    """Reduced defect at time ``t`` (scalar) and parameter ``p``; shape ``(n_d,)``."""
    Z = model.inputs(np.atleast_1d(t), _prepare_p(model, p))
    return model.denormalize(model.predict_normalized(Z))[0]


def fnn_eval_all(model: FnnModel, p) -> np.ndarray:
    """Reduced defect at every training time, shape ``(n_d, N_t)``."""
    Z = model.inputs(model.times, _prepare_p(model, p))
    return model.denormalize(model.predict_normalized(Z)).T

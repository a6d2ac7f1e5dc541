"""Small ReLU multi-layer perceptrons with exact reverse-mode gradients.

Everything here operates on plain numpy arrays. An :class:`MlpParams` holds one
``(fan_in, fan_out)`` weight matrix and one bias vector per layer; hidden layers
use ReLU and the last layer is linear.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"BDMLP\x00\x00\x00"
CHECKPOINT_VERSION = 1


class TrainingDivergence(RuntimeError):
    """Raised when a loss or gradient becomes non-finite."""

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {i}: weight {W.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ValueError(f"layer {i}: input size {W.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in layer order: ``W0, b0, W1, b1, ...``."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """He-uniform weights for ReLU layers, LeCun-uniform for the linear output; zero biases."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {sizes}")
    weights, biases = [], []
    n_layers = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = 3.0 if i == n_layers - 1 else 6.0
        limit = np.sqrt(gain / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


@dataclass
class GradTape:
    """Activations cached by :func:`forward`; consumed by exactly one :func:`backward`."""

    inputs: list[np.ndarray]
    masks: list[np.ndarray]
    weights: list[np.ndarray]
    squeeze: bool
    used: bool = False


def forward(params: MlpParams, x) -> tuple[np.ndarray, GradTape]:
    """Evaluate the network on one feature vector ``(D,)`` or a batch ``(B, D)``."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.sizes[0]:
        raise ValueError(f"expected input dimension {params.sizes[0]}, got shape {x.shape}")
    inputs, masks = [], []
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ W + b
        if i < last:
            mask = a > 0.0
            masks.append(mask)
            h = a * mask
        else:
            h = a
    tape = GradTape(inputs, masks, list(params.weights), squeeze)
    return (h[0] if squeeze else h), tape


def backward(tape: GradTape, upstream) -> tuple[MlpParams, np.ndarray]:
    """Gradients of a scalar loss w.r.t. parameters and input, given ``dL/d(output)``.

    Raises:
        RuntimeError: if the tape was already consumed.
    """
    if tape.used:
        raise RuntimeError("GradTape already consumed; run forward() again")
    tape.used = True
    g = np.asarray(upstream, dtype=float)
    if tape.squeeze:
        g = g[None]
    if g.shape != (tape.inputs[-1].shape[0], tape.weights[-1].shape[1]):
        raise ValueError(f"upstream gradient shape {g.shape} does not match the network output")
    dW, db = [], []
    for i in range(len(tape.weights) - 1, -1, -1):
        dW.append(tape.inputs[i].T @ g)
        db.append(g.sum(axis=0))
        g = g @ tape.weights[i].T
        if i > 0:
            g = g * tape.masks[i - 1]
    grads = MlpParams(dW[::-1], db[::-1])
    return grads, (g[0] if tape.squeeze else g)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, target) -> tuple[float, np.ndarray]:
    """Cross-entropy of integer labels under ``softmax(logits)``.

    For a batch ``(B, K)`` the loss is the batch mean and the gradient is
    scaled by ``1/B`` accordingly.
    """
    logits = np.asarray(logits, dtype=float)
    target = np.asarray(target)
    if np.any(target < 0) or np.any(target >= logits.shape[-1]):
        raise ValueError("label out of range")
    logp = log_softmax(logits)
    if logits.ndim == 1:
        grad = np.exp(logp)
        grad[target] -= 1.0
        return float(-logp[target]), grad
    n = len(logits)
    rows = np.arange(n)
    grad = np.exp(logp)
    grad[rows, target] -= 1.0
    return float(-logp[rows, target].mean()), grad / n


def kl_divergence(p_star, logits) -> tuple[float, np.ndarray]:
    """``KL(p_star || softmax(logits))`` with ``0 log 0 = 0``; batch-mean like above."""
    p_star = np.asarray(p_star, dtype=float)
    logits = np.asarray(logits, dtype=float)
    if p_star.shape != logits.shape:
        raise ValueError(f"shape mismatch {p_star.shape} vs {logits.shape}")
    logp = log_softmax(logits)
    pos = p_star > 0.0
    plogp = np.where(pos, p_star * np.log(np.where(pos, p_star, 1.0)), 0.0)
    per_sample = (plogp - p_star * logp).sum(axis=-1)
    grad = np.exp(logp) - p_star
    if logits.ndim == 1:
        return float(per_sample), grad
    return float(per_sample.mean()), grad / len(logits)


@dataclass
class AdamState:
    """Moment accumulators and learning-rate schedule for :func:`adam_step`.

    The effective rate is ``lr * decay ** epoch``; by default 1e-4, cut
    tenfold every epoch.
    """

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    epoch: int = 0
    lr: float = 1e-4
    decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: Sequence[np.ndarray], **kwargs) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kwargs)

    @property
    def current_lr(self) -> float:
        return self.lr * self.decay ** self.epoch


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              names: Sequence[str] | None = None) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Raises:
        TrainingDivergence: if any gradient is non-finite; the offending
            parameter is named in the message.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = names[i] if names else f"param[{i}]"
            raise TrainingDivergence(f"non-finite gradient in {name}", layer=name)
    state.step += 1
    t = state.step
    lr = state.current_lr
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; return the norm before clipping."""
    total = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: tuple[int, int] | None = None
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(loss_fn: Callable[[], float], params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
               n_coords: int = 100, step: float = 1e-5, seed: int = 0, floor: float = 1e-8) -> GradCheckReport:
    """Compare analytic ``grads`` with central differences of ``loss_fn``.

    ``loss_fn`` re-evaluates the scalar loss from the current contents of
    ``params``, which are perturbed in place and restored. At least
    ``n_coords`` coordinates are probed (all of them if there are fewer).
    """
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    if total <= n_coords:
        flat = np.arange(total)
    else:
        flat = np.sort(rng.choice(total, size=n_coords, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    errors = np.empty(len(flat))
    coords = []
    for j, f in enumerate(flat):
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        k = int(f - offsets[i])
        p = params[i].reshape(-1)
        orig = p[k]
        p[k] = orig + step
        up = loss_fn()
        p[k] = orig - step
        down = loss_fn()
        p[k] = orig
        numeric = (up - down) / (2.0 * step)
        errors[j] = relative_error(grads[i].reshape(-1)[k], numeric, floor)
        coords.append((i, k))
    worst = int(np.argmax(errors)) if len(errors) else None
    return GradCheckReport(
        float(errors.max()) if len(errors) else 0.0,
        len(errors),
        coords[worst] if worst is not None else None,
        errors,
    )


def save_checkpoint(params: MlpParams, path) -> None:
    """Write ``params`` as header + little-endian float64 payload in layer order."""
    sizes = params.sizes
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(sizes))
    header += struct.pack(f"<{len(sizes)}I", *sizes)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    Path(path).write_bytes(header + payload)


def load_checkpoint(path) -> MlpParams:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an MLP checkpoint")
    version, n = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    sizes = struct.unpack_from(f"<{n}I", data, 16)
    offset = 16 + 4 * n
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=offset).reshape(fan_in, fan_out)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(W.astype(float))
        biases.append(b.astype(float))
    if offset != len(data):
        raise ValueError(f"{path}: trailing or missing payload bytes")
    return MlpParams(weights, biases)

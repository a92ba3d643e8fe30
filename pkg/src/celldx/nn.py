"""Multilayer perceptrons, Adam, and the shared training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import NumericalError, ShapeError, TrainingDiverged, ValidationError

ACTIVATIONS = ("tanh", "relu")
HEAD_KINDS = ("linear", "softplus", "cumulative-softplus")


@dataclass(frozen=True)
class Head:
    """One slice of the output layer and how to squash it.

    cumulative-softplus turns raw values into a strictly increasing
    sequence (cumsum of softplus), the structural trick behind monotone
    voltage and cycle-life outputs.
    """

    kind: str
    width: int

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValidationError(f"unknown head kind {self.kind!r}")
        if self.width < 1:
            raise ValidationError(f"head width must be >= 1, got {self.width}")


class Mlp:
    """Dense tanh network; parameters are graph leaves.

    ``widths`` runs input to output, e.g. ``[34, 128, 128, 128, 4]``.
    ``heads`` partition the output layer; their widths must sum to the
    output width. The forward pass returns the raw affine output —
    callers apply :func:`apply_heads` where squashing is wanted.
    """

    def __init__(self, widths, activation: str = "tanh", heads=None, seed: int = 0):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValidationError(f"need >= 2 positive layer widths, got {widths}")
        if activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {activation!r}")
        self.widths = widths
        self.activation = activation
        self.heads = tuple(heads) if heads else (Head("linear", widths[-1]),)
        if sum(h.width for h in self.heads) != widths[-1]:
            raise ValidationError(
                f"head widths {[h.width for h in self.heads]} must sum to output width {widths[-1]}"
            )
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for n_in, n_out in zip(widths, widths[1:]):
            limit = math.sqrt(6.0 / (n_in + n_out))
            self.weights.append(
                Tensor(rng.uniform(-limit, limit, size=(n_in, n_out)), requires_grad=True)
            )
            self.biases.append(Tensor(np.zeros(n_out), requires_grad=True))

    def parameters(self) -> list[Tensor]:
        return [*self.weights, *self.biases]

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ShapeError(f"expected input (batch, {self.widths[0]}), got {x.shape}")
        out = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out = out @ w + b
            if i != last:
                out = out.tanh() if self.activation == "tanh" else out.relu()
        return out

    __call__ = forward

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state_arrays(self, arrays) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"expected {len(params)} parameter arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.data.shape:
                raise ShapeError(f"parameter shape {a.shape} != {p.data.shape}")
            p.data = a.copy()


def apply_heads(mlp: Mlp, raw: Tensor) -> list[Tensor]:
    """Split the raw output by head and apply each head's squashing."""
    outs = []
    offset = 0
    for head in mlp.heads:
        piece = raw[:, offset : offset + head.width]
        if head.kind == "softplus":
            piece = piece.softplus()
        elif head.kind == "cumulative-softplus":
            piece = piece.softplus().cumsum(axis=1)
        outs.append(piece)
        offset += head.width
    return outs


class Adam:
    """Adam with bias correction (β1=0.9, β2=0.999, ε=1e−8)."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g**2
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings plus the loss weighting factors.

    ``alpha``/``beta``/``gamma`` weight the diagnosis loss (regression,
    physics consistency, and the three boundary terms); ``eta``/``zeta``
    weight the prognosis loss. ``lambda_q`` scales the capacity error
    inside the regression term.
    """

    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 20
    validation_fraction: float = 0.2
    seed: int = 0
    hidden: tuple[int, ...] = (128, 128, 128)
    alpha: float = 1.0
    beta: float = 0.5
    gamma: tuple[float, ...] = (10.0, 1.0, 1.0)
    lambda_q: float = 1.0
    eta: float = 1.0
    zeta: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("lr, batch_size, max_epochs must be positive")
        if self.patience < 0:
            raise ValidationError("patience must be >= 0")
        if not (0.0 < self.validation_fraction <= 0.5):
            raise ValidationError("validation fraction must be in (0, 0.5]")
        weights = (self.alpha, self.beta, self.lambda_q, self.eta, *self.gamma, *self.zeta)
        if any(w < 0 for w in weights):
            raise ValidationError("loss weights must be >= 0")


@dataclass
class TrainHistory:
    """Per-epoch (train, validation) losses and the restored optimum."""

    epochs: list[tuple[float, float]] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf


def split_validation(n_rows: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded row split -> (train_idx, val_idx); at least one row each."""
    if n_rows < 2:
        raise ValidationError(f"need >= 2 rows to split, got {n_rows}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_rows)
    n_val = min(max(1, int(round(fraction * n_rows))), n_rows - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_loop(model: Mlp, train_data, loss_fn, cfg: TrainConfig, val_data=None) -> TrainHistory:
    """Mini-batch Adam with early stopping on validation loss.

    ``train_data``/``val_data`` are tuples of row-aligned arrays;
    ``loss_fn(model, batch_arrays)`` returns a scalar Tensor. When
    ``val_data`` is omitted a seeded row split carves it from the
    training data. Stops once ``patience`` consecutive epochs fail to
    improve the validation loss (patience=0 → exactly one epoch) and
    restores the best-validation parameters.
    """
    train_data = tuple(np.asarray(a) for a in train_data)
    n = len(train_data[0])
    if n == 0:
        raise ValidationError("training data is empty")
    if any(len(a) != n for a in train_data):
        raise ShapeError("training arrays must be row-aligned")
    if val_data is None:
        train_idx, val_idx = split_validation(n, cfg.validation_fraction, cfg.seed)
        val_data = tuple(a[val_idx] for a in train_data)
        train_data = tuple(a[train_idx] for a in train_data)
        n = len(train_data[0])
    else:
        val_data = tuple(np.asarray(a) for a in val_data)

    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(model.parameters(), lr=cfg.lr)
    history = TrainHistory()
    best_params = model.state_arrays()
    bad_epochs = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            batch = tuple(a[rows] for a in train_data)
            opt.zero_grad()
            try:
                loss = loss_fn(model, batch)
                loss.backward()
            except NumericalError as exc:
                raise TrainingDiverged(epoch, f"non-finite training loss: {exc}") from exc
            opt.step()
            losses.append(loss.item())
        train_loss = float(np.mean(losses))
        val_loss = float(loss_fn(model, val_data).item())
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch, f"validation loss diverged: {val_loss}")
        history.epochs.append((train_loss, val_loss))
        if val_loss < history.best_val:
            history.best_val = val_loss
            history.best_epoch = epoch
            best_params = model.state_arrays()
            bad_epochs = 0
        else:
            bad_epochs += 1
        if bad_epochs >= cfg.patience:
            break

    model.load_state_arrays(best_params)
    return history

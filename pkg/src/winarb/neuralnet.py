"""Small dense networks trained with plain SGD on softmax cross-entropy.

Both stages of the pipeline use the same core: the first stage scores
windows from spectral features, the second stage arbitrates over a
recording's window scores.  Everything here is plain numpy, float64.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, FileFormatError

ACTIVATIONS = ("relu", "elu", "gelu")
MAX_HIDDEN_DEPTH = 4

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_K = 0.044715


@dataclass(frozen=True)
class MlpConfig:
    input_len: int
    hidden_depth: int = 0
    hidden_len: int = 10
    activation: str = "relu"
    output_len: int = 2

    def __post_init__(self):
        if int(self.input_len) < 1:
            raise ConfigurationError(f"input_len must be positive, got {self.input_len}")
        if not 0 <= int(self.hidden_depth) <= MAX_HIDDEN_DEPTH:
            raise ConfigurationError(
                f"hidden_depth must lie in [0, {MAX_HIDDEN_DEPTH}], got {self.hidden_depth}"
            )
        if self.hidden_depth >= 1 and not 5 <= int(self.hidden_len) <= 20:
            raise ConfigurationError(f"hidden_len must lie in [5, 20], got {self.hidden_len}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}"
            )
        if int(self.output_len) < 2:
            raise ConfigurationError(f"output_len must be >= 2, got {self.output_len}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_len] + [self.hidden_len] * self.hidden_depth + [self.output_len]

    def descriptor(self) -> str:
        """Short tag used in result tables, e.g. ``d0`` or ``d2-h10-gelu``."""
        if self.hidden_depth == 0:
            return "d0"
        return f"d{self.hidden_depth}-h{self.hidden_len}-{self.activation}"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 100
    batch_size: int = 32
    l2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if int(self.epochs) < 0:
            raise ConfigurationError(f"epochs must be non-negative, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if not self.l2 >= 0:
            raise ConfigurationError(f"l2 must be non-negative, got {self.l2}")


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Layer parameters; ``weights[i]`` has shape (out, in).

    Gradients are represented by the same type so that they can be
    added, compared and stepped with the same code.
    """

    config: MlpConfig
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = self.config.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise DimensionError("number of layers does not match the configuration")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise DimensionError(
                    f"layer {i}: expected W{(sizes[i + 1], sizes[i])} b({sizes[i + 1]},), "
                    f"got W{w.shape} b{b.shape}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def with_flat(self, theta: np.ndarray) -> "MlpModel":
        theta = np.asarray(theta, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[pos : pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(theta[pos : pos + b.size].copy())
            pos += b.size
        if pos != theta.size:
            raise DimensionError(f"expected {pos} parameters, got {theta.size}")
        return MlpModel(self.config, tuple(weights), tuple(biases))

    def equals(self, other: "MlpModel") -> bool:
        """Bit-exact parameter equality."""
        return self.config == other.config and all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.parameters(), other.parameters())
        )


def zeros_model(config: MlpConfig) -> MlpModel:
    sizes = config.layer_sizes
    weights = tuple(np.zeros((sizes[i + 1], sizes[i])) for i in range(len(sizes) - 1))
    biases = tuple(np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1))
    return MlpModel(config, weights, biases)


def init_model(config: MlpConfig, rng: np.random.Generator | int) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    sizes = config.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(config, tuple(weights), tuple(biases))


def activation(kind: str, x):
    """Return ``(f(x), f'(x))`` elementwise."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0), (x > 0).astype(np.float64)
    if kind == "elu":
        neg = np.expm1(np.minimum(x, 0.0))
        return np.where(x > 0, x, neg), np.where(x > 0, 1.0, neg + 1.0)
    if kind == "gelu":
        # tanh approximation of x * Phi(x)
        inner = _GELU_C * (x + _GELU_K * x**3)
        t = np.tanh(inner)
        value = 0.5 * x * (1.0 + t)
        deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * x * x)
        return value, deriv
    raise ConfigurationError(f"unknown activation {kind!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _as_batch(model: MlpModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.config.input_len:
        raise DimensionError(
            f"expected input of length {model.config.input_len}, got shape {np.shape(x)}"
        )
    return x, single


def _forward_batch(model: MlpModel, x: np.ndarray):
    cache = []
    a = x
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        if i < last:
            h, dh = activation(model.config.activation, z)
            cache.append((a, dh))
            a = h
        else:
            cache.append((a, None))
            logits = z
    return logits, cache


def forward(model: MlpModel, x):
    """Class probabilities for one input vector or a batch (rows).

    Returns ``(probs, cache)``; the cache holds each layer's input and
    activation derivative and is what :func:`backward` consumes.
    """
    xb, single = _as_batch(model, x)
    logits, cache = _forward_batch(model, xb)
    probs = softmax(logits)
    return (probs[0] if single else probs), cache


def predict_proba(model: MlpModel, x) -> np.ndarray:
    return forward(model, x)[0]


def backward(model: MlpModel, cache, dlogits: np.ndarray) -> MlpModel:
    """Parameter gradients given d(loss)/d(logits) for a batch."""
    grads_w = [None] * model.n_layers
    grads_b = [None] * model.n_layers
    delta = dlogits
    for i in range(model.n_layers - 1, -1, -1):
        a_prev, _ = cache[i]
        grads_w[i] = delta.T @ a_prev
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * cache[i - 1][1]
    return MlpModel(model.config, tuple(grads_w), tuple(grads_b))


def _check_xy(model: MlpModel, x, y):
    xb, _ = _as_batch(model, x)
    y = np.asarray(y).astype(np.int64).ravel()
    n = xb.shape[0]
    if n == 0:
        raise DimensionError("empty batch")
    if y.shape[0] != n:
        raise DimensionError(f"{n} inputs but {y.shape[0]} labels")
    if y.min() < 0 or y.max() >= model.config.output_len:
        raise DimensionError(f"labels must lie in [0, {model.config.output_len})")
    return xb, y


def _loss_grad_raw(weights, biases, act: str, x: np.ndarray, y: np.ndarray, l2: float):
    """Unchecked loss/gradient on parameter lists; shared by the public API and the SGD loop."""
    n = x.shape[0]
    last = len(weights) - 1
    inputs, derivs = [], []
    a = x
    for i in range(last):
        z = a @ weights[i].T + biases[i]
        inputs.append(a)
        a, dh = activation(act, z)
        derivs.append(dh)
    inputs.append(a)
    logits = a @ weights[last].T + biases[last]

    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, y].mean()
    delta = np.exp(logp)
    delta[rows, y] -= 1.0
    delta /= n

    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(last, -1, -1):
        gw[i] = delta.T @ inputs[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i]) * derivs[i - 1]
    if l2:
        loss += 0.5 * l2 * sum(float(np.sum(w * w)) for w in weights)
        gw = [g + l2 * w for g, w in zip(gw, weights)]
    return float(loss), gw, gb


def loss_and_grad(model: MlpModel, x, y, l2: float = 0.0) -> tuple[float, MlpModel]:
    """Mean softmax cross-entropy plus ``l2/2 * sum(W**2)`` and its exact gradient.

    ``x`` is (n, input_len), ``y`` integer class indices (1 = abnormal).
    Biases are not penalised.
    """
    xb, y = _check_xy(model, x, y)
    loss, gw, gb = _loss_grad_raw(model.weights, model.biases, model.config.activation, xb, y, l2)
    return loss, MlpModel(model.config, tuple(gw), tuple(gb))


def sgd_step(model: MlpModel, grads: MlpModel, lr: float) -> MlpModel:
    """theta <- theta - lr * g; returns a new model."""
    if grads.config.layer_sizes != model.config.layer_sizes:
        raise DimensionError("gradient shapes do not match the model")
    return MlpModel(
        model.config,
        tuple(w - lr * g for w, g in zip(model.weights, grads.weights)),
        tuple(b - lr * g for b, g in zip(model.biases, grads.biases)),
    )


def train(
    config: MlpConfig,
    tcfg: TrainConfig,
    x,
    y,
    on_epoch: Callable[[int, MlpModel], None] | None = None,
) -> MlpModel:
    """Mini-batch SGD; initialisation and per-epoch shuffles come from ``tcfg.seed``.

    Numerically identical to looping :func:`loss_and_grad` and
    :func:`sgd_step`, without rebuilding a model object every step.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError("training data must be a non-empty (n, d) array")
    if x.shape[1] != config.input_len:
        raise DimensionError(f"config.input_len={config.input_len} but data has {x.shape[1]} columns")

    rng = np.random.default_rng(tcfg.seed)
    model = init_model(config, rng)
    x, y = _check_xy(model, x, y)
    weights = list(model.weights)
    biases = list(model.biases)
    n = x.shape[0]
    bs = tcfg.batch_size
    lr = tcfg.learning_rate
    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            _, gw, gb = _loss_grad_raw(weights, biases, config.activation, x[idx], y[idx], tcfg.l2)
            weights = [w - lr * g for w, g in zip(weights, gw)]
            biases = [b - lr * g for b, g in zip(biases, gb)]
        if on_epoch is not None:
            on_epoch(epoch, MlpModel(config, tuple(weights), tuple(biases)))
    return MlpModel(config, tuple(weights), tuple(biases))


def numerical_gradient(model: MlpModel, x, y, l2: float = 0.0, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of the loss w.r.t. the flattened parameters."""
    theta = model.flat()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        up, _ = loss_and_grad(model.with_flat(theta), x, y, l2)
        theta[i] = orig - step
        down, _ = loss_and_grad(model.with_flat(theta), x, y, l2)
        theta[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max_i |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


# --- text persistence -------------------------------------------------------

_CONFIG_KEYS = ("input_len", "hidden_depth", "hidden_len", "activation", "output_len")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_model(model: MlpModel, meta: dict[str, str] | None = None) -> str:
    """Header ``mlp key=value ...``, then one line per layer: W row-major then b."""
    cfg = dataclasses.asdict(model.config)
    fields = [f"{k}={cfg[k]}" for k in _CONFIG_KEYS]
    for k, v in (meta or {}).items():
        v = str(v)
        if k in _CONFIG_KEYS or not k or any(c.isspace() or c == "=" for c in k) or any(
            c.isspace() for c in v
        ):
            raise ConfigurationError(f"invalid model metadata entry {k!r}={v!r}")
        fields.append(f"{k}={v}")
    lines = ["mlp " + " ".join(fields)]
    for w, b in zip(model.weights, model.biases):
        lines.append(" ".join(_fmt(v) for v in np.concatenate([w.ravel(), b])))
    return "\n".join(lines) + "\n"


def loads_model(text: str, source: str = "<string>") -> tuple[MlpModel, dict[str, str]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("mlp "):
        raise FileFormatError(source, "missing 'mlp' header line", row=1)
    header: dict[str, str] = {}
    for tok in lines[0].split()[1:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise FileFormatError(source, f"malformed header token {tok!r}", row=1)
        header[key] = value
    try:
        config = MlpConfig(
            input_len=int(header.pop("input_len")),
            hidden_depth=int(header.pop("hidden_depth")),
            hidden_len=int(header.pop("hidden_len")),
            activation=header.pop("activation"),
            output_len=int(header.pop("output_len")),
        )
    except (KeyError, ValueError) as exc:
        raise FileFormatError(source, f"bad model header: {exc}", row=1) from None
    sizes = config.layer_sizes
    if len(lines) - 1 != len(sizes) - 1:
        raise FileFormatError(source, f"expected {len(sizes) - 1} layer lines, got {len(lines) - 1}")
    weights, biases = [], []
    for i, line in enumerate(lines[1:]):
        try:
            values = np.array([float(t) for t in line.split()])
        except ValueError:
            raise FileFormatError(source, "non-numeric parameter", row=i + 2) from None
        n_in, n_out = sizes[i], sizes[i + 1]
        if values.size != n_out * n_in + n_out:
            raise FileFormatError(
                source, f"layer {i}: expected {n_out * n_in + n_out} values, got {values.size}", row=i + 2
            )
        if not np.all(np.isfinite(values)):
            raise FileFormatError(source, "non-finite parameter", row=i + 2)
        weights.append(values[: n_out * n_in].reshape(n_out, n_in))
        biases.append(values[n_out * n_in :])
    return MlpModel(config, tuple(weights), tuple(biases)), header


def save_model(model: MlpModel, path, meta: dict[str, str] | None = None) -> None:
    from .formats import atomic_write_text

    atomic_write_text(path, dumps_model(model, meta))


def load_model(path) -> tuple[MlpModel, dict[str, str]]:
    path = Path(path)
    return loads_model(path.read_text(encoding="utf-8"), source=str(path))


def accuracy(model: MlpModel, x, y: Sequence[int]) -> float:
    pred = predict_proba(model, x).argmax(axis=1)
    return float(np.mean(pred == np.asarray(y)))

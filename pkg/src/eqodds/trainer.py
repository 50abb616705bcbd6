"""Feed-forward predictors trained on loss + lambda * KMCD with hand-written gradients.

A stochastic predictor takes extra standard-Gaussian inputs that are redrawn
every time a row is seen, so its output given (a, x) is a distribution.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .probcore import DimensionError, Sample
from .statmod import KernelConfig, kmcd_and_grad, kmcd_excess_and_grad, local_permutation

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805
FORMAT_MAGIC = b"EQOM"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, message: str, last_finite_epoch: int):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...] = (30, 30)
    activation: str = "selu"
    noise_dim: int = 0
    task: str = "regression"
    seed: int = 0
    use_protected: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be at least 1")
        if self.noise_dim < 0:
            raise ValueError("noise_dim must be nonnegative")
        if self.task not in ("regression", "binary"):
            raise ValueError("task must be 'regression' or 'binary'")
        if self.activation not in ("selu", "tanh"):
            raise ValueError("activation must be 'selu' or 'tanh'")

    @property
    def stochastic(self) -> bool:
        return self.noise_dim > 0


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    lr: float = 1e-3
    batch: int = 128
    epochs: int = 500
    optimizer: str = "adam"
    ramp_epochs: int = 0
    kernel: KernelConfig = KernelConfig(bandwidth="variance")
    penalty: str = "kmcd"
    full_batch_penalty: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not self.lr > 0 or self.batch < 1 or self.epochs < 0:
            raise ValueError("learning rate and batch must be positive, epochs nonnegative")
        if self.ramp_epochs < 0:
            raise ValueError("ramp_epochs must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.penalty not in ("kmcd", "excess"):
            raise ValueError("penalty must be 'kmcd' or 'excess'")


@dataclass
class TraceRow:
    epoch: int
    loss: float
    penalty: float
    objective: float
    lam: float = 0.0


@dataclass
class FittedModel:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    in_mean: np.ndarray
    in_std: np.ndarray
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for wb in zip(self.weights, self.biases) for p in wb])

    def set_flat(self, flat: np.ndarray) -> None:
        k = 0
        for i in range(len(self.weights)):
            for name in ("weights", "biases"):
                arr = getattr(self, name)[i]
                arr[...] = flat[k:k + arr.size].reshape(arr.shape)
                k += arr.size

    def copy(self) -> "FittedModel":
        return FittedModel(self.spec, [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.in_mean.copy(),
                           self.in_std.copy(), list(self.trace))


def _act(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    return SELU_SCALE * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0)))


def _act_grad(z, kind):
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return SELU_SCALE * np.where(z > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(z, 0)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _features(spec: MlpSpec, a, x) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1, 1)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != a.shape[0]:
        raise DimensionError("a and x must have the same number of rows")
    return np.hstack([a, x]) if spec.use_protected else x


def init_model(spec: MlpSpec, a, x, y=None) -> FittedModel:
    """LeCun-normal weights; inputs standardized with statistics of ``(a, x)``."""
    feats = _features(spec, a, x)
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std[std == 0] = 1.0
    dims = [feats.shape[1] + spec.noise_dim, *spec.widths, 1]
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    weights = [rng.normal(0.0, 1.0 / math.sqrt(d_in), (d_in, d_out))
               for d_in, d_out in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(d) for d in dims[1:]]
    if y is not None and spec.task == "regression":
        biases[-1][0] = float(np.mean(y))
    return FittedModel(spec, weights, biases, mean, std)


def _inputs(model: FittedModel, a, x, noise: Optional[np.ndarray]) -> np.ndarray:
    feats = _features(model.spec, a, x)
    if feats.shape[1] != model.in_mean.size:
        raise DimensionError(f"model expects {model.in_mean.size} features, got {feats.shape[1]}")
    feats = (feats - model.in_mean) / model.in_std
    if model.spec.noise_dim:
        if noise is None or noise.shape != (feats.shape[0], model.spec.noise_dim):
            raise DimensionError("stochastic model needs a noise block of shape (n, noise_dim)")
        feats = np.hstack([feats, noise])
    if feats.shape[1] != model.in_dim:
        raise DimensionError(f"model expects {model.in_dim} inputs, got {feats.shape[1]}")
    return feats


def _forward(model: FittedModel, inp: np.ndarray):
    acts = [inp]
    pre = []
    h = inp
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        pre.append(z)
        h = z if i == last else _act(z, model.spec.activation)
        acts.append(h)
    return h[:, 0], acts, pre


def _backward(model: FittedModel, acts, pre, d_out: np.ndarray):
    gW, gb = [], []
    delta = d_out[:, None]
    for i in range(len(model.weights) - 1, -1, -1):
        gW.append(acts[i].T @ delta)
        gb.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i].T) * _act_grad(pre[i - 1], model.spec.activation)
    return gW[::-1], gb[::-1]


def head(model: FittedModel, a, x, noise=None) -> np.ndarray:
    """Raw network output: the prediction (regression) or the logit (binary)."""
    return _forward(model, _inputs(model, a, x, noise))[0]


def batch_objective(model: FittedModel, a, x, y, noise, lam: float,
                    kernel: KernelConfig = KernelConfig(), need_grad: bool = True,
                    a_null=None):
    """Return ``(loss, penalty, flat_gradient_or_None)`` on one batch.

    With ``a_null`` the penalty is the excess of kmcd over its value with
    ``a_null`` in place of ``a``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    out, acts, pre = _forward(model, _inputs(model, a, x, noise))
    n = y.size
    if model.spec.task == "regression":
        resid = out - y
        loss = float(np.mean(resid ** 2))
        d_out = 2.0 * resid / n
        pen_input = out
        pen_chain = np.ones(n)
    else:
        # binary cross-entropy on logits
        loss = float(np.mean(np.logaddexp(0.0, out) - y * out))
        prob = _sigmoid(out)
        d_out = (prob - y) / n
        pen_input = prob
        pen_chain = prob * (1.0 - prob)
    penalty = 0.0
    if n >= 8:
        a = np.asarray(a).reshape(-1)
        if a_null is None:
            penalty, g_pen = kmcd_and_grad(pen_input, a, y, kernel)
        else:
            penalty, g_pen = kmcd_excess_and_grad(pen_input, a, y, a_null, kernel)
        if lam > 0:
            d_out = d_out + lam * g_pen * pen_chain
    if not need_grad:
        return loss, penalty, None
    gW, gb = _backward(model, acts, pre, d_out)
    flat = np.concatenate([p.ravel() for wb in zip(gW, gb) for p in wb])
    return loss, penalty, flat


def _null_a(a, y, cfg: TrainConfig, rng: np.random.Generator):
    if cfg.penalty != "excess" or a.size < 8:
        return None
    return a[local_permutation(y, cfg.kernel.n_bins(a.size), rng)]


def _penalty_grad(model, a, x, y, noise, cfg: TrainConfig, rng, lam: float):
    """Penalty on the given rows and ``lam`` times its parameter gradient."""
    out, acts, pre = _forward(model, _inputs(model, a, x, noise))
    if model.spec.task == "regression":
        pen_input, chain = out, np.ones_like(out)
    else:
        pen_input = _sigmoid(out)
        chain = pen_input * (1.0 - pen_input)
    a_null = _null_a(a, y, cfg, rng)
    if a_null is None:
        pen, g = kmcd_and_grad(pen_input, a, y, cfg.kernel)
    else:
        pen, g = kmcd_excess_and_grad(pen_input, a, y, a_null, cfg.kernel)
    gW, gb = _backward(model, acts, pre, lam * g * chain)
    return pen, np.concatenate([p.ravel() for wb in zip(gW, gb) for p in wb])


def train(data: Sample, spec: MlpSpec, cfg: TrainConfig = TrainConfig(),
          init: Optional[FittedModel] = None) -> FittedModel:
    """Minibatch training of ``loss + lam * kmcd(prediction, a, y)``.

    The trace holds per-epoch means of the batch loss, penalty and objective;
    ``objective == loss + lam * penalty`` row by row, where ``lam`` is the
    weight in effect that epoch. With ``ramp_epochs`` the weight grows
    linearly to ``cfg.lam`` over that many epochs.

    ``cfg.penalty == "excess"`` subtracts the statistic recomputed with ``a``
    shuffled inside y-quantile bins of the batch (a fresh shuffle per step).
    ``cfg.full_batch_penalty`` evaluates the penalty term on all rows at every
    step while the loss still uses the minibatch; it costs O(n^3) per step.

    ``init`` warm-starts from a copy of an existing model with the same spec
    (typically the unpenalized fit); its input standardization is kept.
    """
    if data.n < 1:
        raise ValueError("training data is empty")
    if init is not None:
        if init.spec != spec:
            raise ValueError("warm-start model was built for a different spec")
        model = init.copy()
    else:
        model = init_model(spec, data.a, data.x, data.y)
    rng = np.random.Generator(np.random.PCG64([spec.seed, 1]))
    flat = model.get_flat()
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    batch = min(cfg.batch, data.n)
    trace: list[TraceRow] = []
    for epoch in range(cfg.epochs):
        lam = cfg.lam * min(1.0, (epoch + 1) / cfg.ramp_epochs) if cfg.ramp_epochs else cfg.lam
        order = rng.permutation(data.n)
        losses, pens = [], []
        for start in range(0, data.n, batch):
            idx = order[start:start + batch]
            if idx.size < 2:
                continue
            noise = rng.standard_normal((idx.size, spec.noise_dim)) if spec.noise_dim else None
            try:
                if cfg.full_batch_penalty:
                    loss, _, grad = batch_objective(model, data.a[idx], data.x[idx], data.y[idx],
                                                    noise, 0.0, cfg.kernel)
                    full_noise = (rng.standard_normal((data.n, spec.noise_dim))
                                  if spec.noise_dim else None)
                    pen, g_pen = _penalty_grad(model, data.a, data.x, data.y, full_noise,
                                               cfg, rng, lam)
                    grad = grad + g_pen
                else:
                    a_null = _null_a(data.a[idx], data.y[idx], cfg, rng)
                    loss, pen, grad = batch_objective(model, data.a[idx], data.x[idx], data.y[idx],
                                                      noise, lam, cfg.kernel, a_null=a_null)
            except (OverflowError, FloatingPointError) as exc:
                raise TrainingError(f"overflow at epoch {epoch}: {exc}", epoch - 1) from exc
            if not (math.isfinite(loss) and math.isfinite(pen) and np.all(np.isfinite(grad))):
                raise TrainingError(f"non-finite objective at epoch {epoch}", epoch - 1)
            step += 1
            if cfg.optimizer == "adam":
                m = b1 * m + (1 - b1) * grad
                v = b2 * v + (1 - b2) * grad ** 2
                flat -= cfg.lr * (m / (1 - b1 ** step)) / (np.sqrt(v / (1 - b2 ** step)) + eps)
            else:
                flat -= cfg.lr * grad
            model.set_flat(flat)
            losses.append(loss)
            pens.append(pen)
        if not np.all(np.isfinite(flat)):
            raise TrainingError(f"weights diverged at epoch {epoch}", epoch - 1)
        loss_m = float(np.mean(losses)) if losses else 0.0
        pen_m = float(np.mean(pens)) if pens else 0.0
        trace.append(TraceRow(epoch, loss_m, pen_m, loss_m + lam * pen_m, lam))
    model.trace = trace
    return model


def predict(model: FittedModel, a, x, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Predictions: values (regression) or labels (binary).

    Binary deterministic models threshold the logit at 0; binary stochastic
    models draw ``Bernoulli(sigmoid(logit))``.
    """
    n = np.asarray(a).reshape(-1).size
    noise = None
    if model.spec.noise_dim:
        if rng is None:
            raise ValueError("a stochastic model needs an rng")
        noise = rng.standard_normal((n, model.spec.noise_dim))
    out = head(model, a, x, noise)
    if model.spec.task == "regression":
        return out
    if model.spec.stochastic:
        return (rng.uniform(size=n) < _sigmoid(out)).astype(float)
    return (out > 0).astype(float)


def predict_proba(model: FittedModel, a, x, rng: Optional[np.random.Generator] = None,
                  draws: int = 1) -> np.ndarray:
    """``P(Yhat = 1 | a, x)`` for binary models, averaged over ``draws`` noise draws."""
    if model.spec.task != "binary":
        raise ValueError("predict_proba is for binary models")
    n = np.asarray(a).reshape(-1).size
    if not model.spec.noise_dim:
        return _sigmoid(head(model, a, x))
    if rng is None:
        raise ValueError("a stochastic model needs an rng")
    total = np.zeros(n)
    for _ in range(draws):
        total += _sigmoid(head(model, a, x, rng.standard_normal((n, model.spec.noise_dim))))
    return total / draws


def grad_check(model: FittedModel, a, x, y, lam: float, noise=None, coords: int = 100,
               h: float = 1e-5, seed: int = 0,
               kernel: KernelConfig = TrainConfig().kernel) -> float:
    """Largest relative gap between the analytic gradient and central differences.

    Checked on a random subset of ``coords`` parameters; the denominator is
    floored at ``1e-6 * max |gradient|`` so exactly-zero entries do not blow up.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size < 8:
        raise ValueError("grad_check needs a batch of at least 8 rows")
    if model.spec.noise_dim and noise is None:
        noise = np.random.Generator(np.random.PCG64(seed)).standard_normal(
            (y.size, model.spec.noise_dim))
    work = model.copy()
    base = work.get_flat()
    _, _, grad = batch_objective(work, a, x, y, noise, lam, kernel)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    idx = rng.choice(base.size, size=min(coords, base.size), replace=False)

    def objective(flat):
        work.set_flat(flat)
        loss, pen, _ = batch_objective(work, a, x, y, noise, lam, kernel, need_grad=False)
        return loss + lam * pen

    floor = 1e-6 * max(1e-12, float(np.max(np.abs(grad))))
    worst = 0.0
    for i in idx:
        e = np.zeros_like(base)
        e[i] = h
        fd = (objective(base + e) - objective(base - e)) / (2 * h)
        rel = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), floor)
        if math.isfinite(rel):
            worst = max(worst, rel)
        else:
            worst = math.inf
    work.set_flat(base)
    return worst


def to_bytes(model: FittedModel) -> bytes:
    """Little-endian flat binary: header, input scaling, then each layer's W and b."""
    buf = io.BytesIO()
    buf.write(FORMAT_MAGIC)
    dims = [model.weights[0].shape[0]] + [w.shape[1] for w in model.weights]
    buf.write(struct.pack("<III", FORMAT_VERSION, model.in_mean.size, len(dims)))
    buf.write(struct.pack(f"<{len(dims)}I", *dims))
    for arr in (model.in_mean, model.in_std, *[p for wb in zip(model.weights, model.biases)
                                               for p in wb]):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def spec_sidecar(model: FittedModel, cfg: Optional[TrainConfig] = None) -> str:
    doc = {"format": "eqodds-model/1", "spec": asdict(model.spec)}
    if cfg is not None:
        doc["train"] = {k: v for k, v in asdict(cfg).items() if k != "kernel"}
        doc["train"]["kernel"] = cfg.kernel.as_dict()
    doc["trace"] = [asdict(r) for r in model.trace]
    return json.dumps(doc, indent=1, sort_keys=True)


def from_bytes(blob: bytes, sidecar: str) -> FittedModel:
    if blob[:4] != FORMAT_MAGIC:
        raise ValueError("not an eqodds model file")
    version, n_feat, n_dims = struct.unpack_from("<III", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    off = 16
    dims = struct.unpack_from(f"<{n_dims}I", blob, off)
    off += 4 * n_dims

    def take(count):
        nonlocal off
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(float)
        off += 8 * count
        return arr

    in_mean = take(n_feat)
    in_std = take(n_feat)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(take(d_in * d_out).reshape(d_in, d_out))
        biases.append(take(d_out))
    doc = json.loads(sidecar)
    spec_doc = doc["spec"]
    spec_doc["widths"] = tuple(spec_doc["widths"])
    trace = [TraceRow(**r) for r in doc.get("trace", [])]
    return FittedModel(MlpSpec(**spec_doc), weights, biases, in_mean, in_std, trace)

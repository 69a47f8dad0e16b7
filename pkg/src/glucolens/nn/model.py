"""Regression networks: specs, the four reference architectures, training."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..phantom import derive_seed
from .adam import AdamState, adam_update
from .layers import Activation, BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool2D

MODEL_IDS = ("M1", "M2", "M3", "M4")
FEATURE_INPUT = 19


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    filters: int = 0
    kernel: int = 3
    pool: int = 2
    rate: float = 0.0
    activation: str = "linear"
    l2: float = 0.0

    def build(self):
        if self.kind == "dense":
            return Dense(self.units, self.l2)
        if self.kind == "conv2d":
            return Conv2D(self.filters, self.kernel, self.l2)
        if self.kind == "maxpool2d":
            return MaxPool2D(self.pool)
        if self.kind == "dropout":
            return Dropout(self.rate)
        if self.kind == "batchnorm":
            return BatchNorm()
        if self.kind == "flatten":
            return Flatten()
        if self.kind == "activation":
            return Activation(self.activation)
        raise ValueError(f"unknown layer kind {self.kind!r}")


def dense(units, l2=0.0):
    return LayerSpec("dense", units=units, l2=l2)


def act(name):
    return LayerSpec("activation", activation=name)


def dropout(rate):
    return LayerSpec("dropout", rate=rate)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 32
    seed: int = 42


@dataclass(frozen=True)
class ModelSpec:
    id: str
    input_shape: tuple
    layers: tuple
    training: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        return cls(
            id=d["id"],
            input_shape=tuple(d["input_shape"]),
            layers=tuple(LayerSpec(**ls) for ls in d["layers"]),
            training=TrainConfig(**d["training"]),
        )


def _image_shape(input_shape) -> tuple:
    shape = tuple(int(s) for s in input_shape)
    if len(shape) == 2:
        shape = (1,) + shape
    elif len(shape) == 3 and shape[0] != 1 and shape[2] == 1:
        shape = (1, shape[0], shape[1])
    if len(shape) != 3 or shape[0] != 1 or min(shape[1:]) < 10:
        raise ValueError(f"M4 expects a single-channel image of at least 10x10, got {input_shape}")
    return shape


def build_model(model_id: str, input_shape=None, training: TrainConfig | None = None) -> ModelSpec:
    """Layer stack for one of the reference architectures M1-M4."""
    training = training or TrainConfig()
    if model_id not in MODEL_IDS:
        raise ValueError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}")
    if model_id == "M4":
        shape = _image_shape(input_shape if input_shape is not None else (128, 128))
        layers = [
            LayerSpec("conv2d", filters=16, kernel=3),
            act("relu"),
            LayerSpec("maxpool2d", pool=2),
            dropout(0.25),
            LayerSpec("conv2d", filters=32, kernel=3),
            act("relu"),
            LayerSpec("maxpool2d", pool=2),
            dropout(0.25),
            LayerSpec("flatten"),
            dense(64),
            act("relu"),
            dense(1),
        ]
        return ModelSpec("M4", shape, tuple(layers), training)

    shape = tuple(int(s) for s in (input_shape if input_shape is not None else (FEATURE_INPUT,)))
    if shape != (FEATURE_INPUT,):
        raise ValueError(f"{model_id} expects the {FEATURE_INPUT}-value feature vector, got shape {shape}")
    layers = []
    if model_id == "M1":
        for units in (64, 32, 16):
            layers += [dense(units), act("tanh"), dropout(0.3)]
    elif model_id == "M2":
        for units in (128, 64, 32, 16):
            layers += [dense(units), LayerSpec("batchnorm"), act("swish")]
    else:
        for depth, units in enumerate((256, 128, 64, 32)):
            layers += [dense(units, l2=1e-5 * 2**depth), act("swish"), dropout(0.2)]
    layers.append(dense(1))
    return ModelSpec(model_id, shape, tuple(layers), training)


@dataclass(eq=False)
class TrainedModel:
    """Network parameters plus the input/target scaling learned at fit time."""

    spec: ModelSpec
    params: list
    state: list
    history: list = field(default_factory=list)
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: float = 0.0
    y_std: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layers = [ls.build() for ls in self.spec.layers]

    @property
    def n_params(self) -> int:
        return sum(p.size for layer in self.params for p in layer.values())

    def prepare_inputs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        x = x.reshape((x.shape[0],) + tuple(self.spec.input_shape))
        if self.x_mean is not None:
            x = (x - self.x_mean) / self.x_std
        return x

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        """Inference-mode predictions in target units."""
        x = self.prepare_inputs(x)
        outs = [forward(self, x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        out = np.concatenate(outs) if outs else np.zeros(0)
        return out * self.y_std + self.y_mean

    def to_model_file(self):
        from ..dataio import ModelFile

        arrays = {}
        for i, (p, s) in enumerate(zip(self.params, self.state)):
            for name, arr in p.items():
                arrays[f"param.{i}.{name}"] = arr
            for name, arr in s.items():
                arrays[f"state.{i}.{name}"] = arr
        if self.x_mean is not None:
            arrays["scale.x_mean"] = self.x_mean
            arrays["scale.x_std"] = self.x_std
        arrays["scale.y"] = np.array([self.y_mean, self.y_std])
        for key in ("mse", "mae", "mape"):
            arrays[f"history.{key}"] = np.array([h[key] for h in self.history], dtype=np.float64)
        return ModelFile("nn", {"model": self.spec.to_dict(), "meta": self.meta}, arrays)

    @classmethod
    def from_model_file(cls, mf) -> "TrainedModel":
        spec = ModelSpec.from_dict(mf.spec["model"])
        n = len(spec.layers)
        params = [{} for _ in range(n)]
        state = [{} for _ in range(n)]
        for key, arr in mf.arrays.items():
            group, _, rest = key.partition(".")
            if group in ("param", "state"):
                idx, _, name = rest.partition(".")
                (params if group == "param" else state)[int(idx)][name] = arr
        hist = [
            {"epoch": e + 1, "mse": float(a), "mae": float(b), "mape": float(c)}
            for e, (a, b, c) in enumerate(
                zip(mf.arrays["history.mse"], mf.arrays["history.mae"], mf.arrays["history.mape"])
            )
        ]
        y_mean, y_std = mf.arrays["scale.y"]
        return cls(
            spec,
            params,
            state,
            hist,
            mf.arrays.get("scale.x_mean"),
            mf.arrays.get("scale.x_std"),
            float(y_mean),
            float(y_std),
            dict(mf.spec.get("meta", {})),
        )


def init_model(spec: ModelSpec, seed: int) -> TrainedModel:
    """Fresh parameters: Glorot-uniform weights, zero biases, zero output weights.

    A zero output layer starts every prediction at the (standardized) target
    mean.  With random output weights the initial predictions share an offset,
    so the whole batch pushes each wide ReLU layer in one direction and Adam's
    fixed-size steps switch most of its units off for good.
    """
    rng = np.random.default_rng(derive_seed(seed, 0))
    params, state = [], []
    shape = tuple(spec.input_shape)
    for ls in spec.layers:
        p, s, shape = ls.build().init(shape, rng)
        params.append(p)
        state.append(s)
    if shape != (1,):
        raise ValueError(f"model output must be a single unit, got shape {shape}")
    last = next(i for i in range(len(spec.layers) - 1, -1, -1) if spec.layers[i].kind == "dense")
    params[last]["W"] = np.zeros_like(params[last]["W"])
    return TrainedModel(spec, params, state)


def _run(model: TrainedModel, x, train: bool, seed: int, params=None):
    params = model.params if params is None else params
    rng = np.random.default_rng(seed)
    caches, new_states = [], []
    for layer, p, s in zip(model.layers, params, model.state):
        x, cache, ns = layer.forward(p, s, x, train, rng)
        caches.append(cache)
        new_states.append(ns)
    return x[:, 0], caches, new_states


def forward(model: TrainedModel, x, mode: str = "infer", seed: int = 0):
    """Raw network output for already-scaled inputs.

    In ``infer`` mode dropout is the identity and batchnorm uses running
    statistics; the result is independent of ``seed``.  In ``train`` mode
    returns ``(outputs, caches, new_states)``.
    """
    if mode not in ("infer", "train"):
        raise ValueError(f"mode must be 'infer' or 'train', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    expected = tuple(model.spec.input_shape)
    if x.shape[1:] != expected:
        raise ValueError(f"batch shape {x.shape[1:]} does not match model input {expected}")
    out, caches, states = _run(model, x, mode == "train", seed)
    return (out, caches, states) if mode == "train" else out


def l2_penalty(model: TrainedModel, params=None) -> float:
    params = model.params if params is None else params
    return sum(layer.l2 * float(np.sum(p["W"] ** 2)) for layer, p in zip(model.layers, params) if layer.l2 > 0)


def loss_and_grads(model: TrainedModel, x, y, seed: int):
    """MSE + L2 loss in train mode with exact gradients for every parameter.

    Gradients are None when the loss is not finite.
    """
    out, caches, states = _run(model, x, True, seed)
    err = out - y
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean(err**2)) + l2_penalty(model)
    if not np.isfinite(loss):
        return loss, None, out, states
    dy = (2.0 / len(y)) * err[:, None]
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        dy, g = layer.backward(model.params[i], caches[i], dy)
        if layer.l2 > 0:
            g = dict(g, W=g["W"] + 2.0 * layer.l2 * model.params[i]["W"])
        grads[i] = g
    return loss, grads, out, states


class Optimizer:
    """Adam moments for every parameter tensor of a model."""

    def __init__(self, model: TrainedModel, config: TrainConfig):
        self.config = config
        self.t = 0
        self.moments = [{k: AdamState.zeros_like(v) for k, v in p.items()} for p in model.params]


def train_step(model: TrainedModel, x, y, opt: Optimizer, seed: int = 0):
    """One minibatch update; returns the pre-update loss and train-mode outputs."""
    loss, grads, out, states = loss_and_grads(model, x, y, seed)
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite loss {loss} at Adam step {opt.t + 1} "
            f"(output range [{np.nanmin(out):.3g}, {np.nanmax(out):.3g}])"
        )
    opt.t += 1
    c = opt.config
    for i, g in enumerate(grads):
        for name, grad in g.items():
            new_p, new_m = adam_update(
                model.params[i][name], grad, opt.moments[i][name], opt.t, c.lr, c.beta1, c.beta2, c.eps
            )
            model.params[i][name] = new_p
            opt.moments[i][name] = new_m
    for i, ns in enumerate(states):
        if ns is not None:
            model.state[i] = ns
    return loss, out


def _safe_std(a, axis=None):
    sd = np.std(a, axis=axis)
    return np.where(sd > 0, sd, 1.0)


def fit(spec: ModelSpec, train_x, train_y, log=None) -> TrainedModel:
    """Train for exactly ``spec.training.epochs`` epochs (no early stopping).

    Inputs are standardized with training-set statistics (per feature for
    flat inputs; per-pixel mean and one global scale for images) and targets
    are always standardized.  ``predict`` applies the same input scaling and
    undoes the target one.
    """
    cfg = spec.training
    x = np.asarray(train_x, dtype=np.float64)
    y = np.asarray(train_y, dtype=np.float64).reshape(-1)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("cannot fit on an empty training set")
    if len(x) != len(y):
        raise ValueError(f"{len(x)} inputs but {len(y)} targets")
    model = init_model(spec, cfg.seed)
    x = x.reshape((len(x),) + tuple(spec.input_shape))
    if len(spec.input_shape) == 1:
        model.x_mean = x.mean(axis=0)
        model.x_std = _safe_std(x, axis=0)
    else:
        # images: subtract the per-pixel training mean (removes the static
        # beam pattern), then divide by one global std.  Per-pixel std lets a
        # single Adam step push every ReLU dead on these highly correlated
        # inputs; a scalar mean leaves the beam in and dropout then biases
        # inference-mode outputs.
        model.x_mean = x.mean(axis=0)
        model.x_std = np.array([_safe_std((x - model.x_mean).reshape(-1))])
    x = (x - model.x_mean) / model.x_std
    model.y_mean = float(y.mean())
    model.y_std = float(_safe_std(y))
    ys = (y - model.y_mean) / model.y_std
    opt = Optimizer(model, cfg)
    n = len(x)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, 1, epoch)).permutation(n)
        sq = ab = pct = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            _, out = train_step(model, x[idx], ys[idx], opt, derive_seed(cfg.seed, 2, epoch, b))
            pred = out * model.y_std + model.y_mean
            err = pred - y[idx]
            sq += float(np.sum(err**2))
            ab += float(np.sum(np.abs(err)))
            pct += float(np.sum(np.abs(err) / np.where(y[idx] != 0, np.abs(y[idx]), 1.0)))
        entry = {"epoch": epoch + 1, "mse": sq / n, "mae": ab / n, "mape": 100.0 * pct / n}
        model.history.append(entry)
        if log is not None:
            log(entry)
    return model


def gradient_check(spec: ModelSpec, sample, seed: int = 0, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    Dropout masks are frozen by reusing one RNG seed for every evaluation;
    batchnorm runs on batch statistics (train mode).  The error denominator
    is floored at ``1e-6 * (1 + |loss|)``: gradients smaller than that are
    below what a float64 central difference can resolve (e.g. a dense bias
    feeding batchnorm, whose true gradient is exactly zero).
    """
    x, y = sample
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    model = init_model(spec, seed)
    if model.n_params > 10_000:
        raise ValueError(f"gradient check limited to 1e4 parameters, model has {model.n_params}")
    # random nonzero biases/scales/output weights so every parameter influences the loss
    rng = np.random.default_rng(derive_seed(seed, 99))
    for p in model.params:
        for name in p:
            if name == "W" and not p[name].any():
                p[name] = rng.uniform(-0.5, 0.5, size=p[name].shape)
            elif name in ("b", "beta"):
                p[name] = rng.normal(0, 0.1, size=p[name].shape)
            elif name == "gamma":
                p[name] = rng.uniform(0.5, 1.5, size=p[name].shape)
    drop_seed = derive_seed(seed, 7)
    loss, grads, _, _ = loss_and_grads(model, x, y, drop_seed)
    floor = 1e-6 * (1.0 + abs(loss))

    def loss_at() -> float:
        out, _, _ = _run(model, x, True, drop_seed)
        return float(np.mean((out - y) ** 2)) + l2_penalty(model)

    worst = 0.0
    for i, p in enumerate(model.params):
        for name, arr in p.items():
            flat = arr.reshape(-1)
            g = grads[i][name].reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = loss_at()
                flat[k] = orig - h
                down = loss_at()
                flat[k] = orig
                num = (up - down) / (2.0 * h)
                denom = max(abs(num) + abs(g[k]), floor)
                worst = max(worst, abs(num - g[k]) / denom)
    return worst


def with_training(spec: ModelSpec, **overrides) -> ModelSpec:
    cfg = replace(spec.training, **{k: v for k, v in overrides.items() if v is not None})
    return replace(spec, training=cfg)

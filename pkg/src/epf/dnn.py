"""Two-hidden-layer feed-forward forecaster with a 24-hour output head.

One network predicts the 24 hourly prices of a day from that day's feature
row (the pooled hour one-hot block is not used). Training is full-batch Adam
on the mean squared error in normalised space, with early stopping on the
last 10% of calibration days. Dropout acts on the second hidden layer only,
in the inverted convention, so evaluation mode equals the expectation of
training mode exactly.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .features import DesignMatrix, ScalerMismatchError, ScalerState, norm_inverse
from .tpe import CatDim, FloatDim, IntDim, Space, tpe_search

SCHEMA_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "sigmoid")
INITS = ("variance-scaled-uniform", "variance-scaled-normal")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class HyperConfig:
    n1: int = 64
    n2: int = 32
    activation: str = "relu"
    init: str = "variance-scaled-uniform"
    learning_rate: float = 1e-3
    dropout: float = 0.0
    transform: str = "Norm"
    include_variable: dict = field(default_factory=dict)  # missing keys count as included
    epochs_max: int = 2000
    patience: int = 50

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("hidden widths must be >= 1")
        if not 0.0 <= self.dropout <= 0.5:
            raise ValueError(f"dropout {self.dropout} outside [0, 0.5]")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown initialisation {self.init!r}")
        if self.transform not in ("Norm", "Norm1"):
            raise ValueError(f"unknown transform {self.transform!r}")

    def includes(self, variable: str) -> bool:
        return bool(self.include_variable.get(variable, True))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# network


def _act(name, a):
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    return 0.5 * (1.0 + np.tanh(0.5 * a))  # sigmoid without overflow


def _act_grad(name, a, h):
    if name == "relu":
        return (a > 0).astype(a.dtype)
    if name == "tanh":
        return 1.0 - h * h
    return h * (1.0 - h)


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    config: HyperConfig
    x_scaler: ScalerState | None = None
    y_scaler: ScalerState | None = None
    columns: tuple = ()  # feature columns consumed, in order
    all_columns: tuple = ()  # full design columns the scaler refers to

    NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    def __post_init__(self):
        n_in, n1 = self.W1.shape
        if self.b1.shape != (n1,) or self.W2.shape[0] != n1 or self.b2.shape != (self.W2.shape[1],):
            raise ValueError("layer shapes do not chain")
        n2 = self.W2.shape[1]
        if self.W3.shape != (n2, 24) or self.b3.shape != (24,):
            raise ValueError("output layer must map n2 -> 24")

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in self.NAMES}

    def copy(self) -> "MlpParams":
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "mlp",
            "config": self.config.to_dict(),
            "shapes": {k: list(v.shape) for k, v in self.arrays().items()},
            "weights": {k: v.reshape(-1).tolist() for k, v in self.arrays().items()},
            "x_scaler": self.x_scaler.to_dict() if self.x_scaler else None,
            "y_scaler": self.y_scaler.to_dict() if self.y_scaler else None,
            "columns": list(self.columns),
            "all_columns": list(self.all_columns),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "mlp":
            raise ValueError("not an MLP parameter document")
        arrs = {k: np.array(d["weights"][k], dtype=float).reshape(d["shapes"][k]) for k in cls.NAMES}
        return cls(**arrs, config=HyperConfig.from_dict(d["config"]),
                   x_scaler=ScalerState.from_dict(d["x_scaler"]) if d.get("x_scaler") else None,
                   y_scaler=ScalerState.from_dict(d["y_scaler"]) if d.get("y_scaler") else None,
                   columns=tuple(d.get("columns", ())), all_columns=tuple(d.get("all_columns", ())))

    def dumps(self) -> str:
        return json.dumps(self.to_dict()) + "\n"


def init_params(n_in: int, config: HyperConfig, rng: np.random.Generator) -> MlpParams:
    sizes = [(n_in, config.n1), (config.n1, config.n2), (config.n2, 24)]
    ws = []
    for fan_in, fan_out in sizes:
        if config.init == "variance-scaled-uniform":
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
        else:
            ws.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out)))
    return MlpParams(ws[0], np.zeros(config.n1), ws[1], np.zeros(config.n2), ws[2], np.zeros(24), config)


def _forward_cache(params: MlpParams, x, mode: str, dropout_mask=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.W1.shape[0]:
        raise ValueError(f"input has {x.shape[1]} features, network expects {params.W1.shape[0]}")
    act = params.config.activation
    a1 = x @ params.W1 + params.b1
    h1 = _act(act, a1)
    a2 = h1 @ params.W2 + params.b2
    h2 = _act(act, a2)
    keep = None
    if mode == "train" and params.config.dropout > 0:
        if dropout_mask is None:
            raise ValueError("train mode needs a dropout mask")
        mask = np.asarray(dropout_mask, dtype=float)
        if mask.shape != h2.shape:
            raise ValueError(f"dropout mask shape {mask.shape} != {h2.shape}")
        keep = mask / (1.0 - params.config.dropout)
        h2d = h2 * keep
    elif mode in ("train", "eval"):
        h2d = h2
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = h2d @ params.W3 + params.b3
    return out, (x, a1, h1, a2, h2, keep, h2d)


def forward(params: MlpParams, x, mode: str = "eval", dropout_mask=None) -> np.ndarray:
    """Normalised-space outputs, ``(batch, 24)``."""
    return _forward_cache(params, x, mode, dropout_mask)[0]


def sample_mask(params: MlpParams, batch: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.random((batch, params.W2.shape[1])) >= params.config.dropout).astype(float)


def loss_and_gradient(params: MlpParams, batch, dropout_mask=None) -> tuple[float, dict]:
    """Mean squared error over ``(rows, 24)`` targets and its exact gradient."""
    x, y = batch
    mode = "train" if dropout_mask is not None else "eval"
    out, (x, a1, h1, a2, h2, keep, h2d) = _forward_cache(params, x, mode, dropout_mask)
    y = np.asarray(y, dtype=float).reshape(out.shape)
    diff = out - y
    m = diff.size
    with np.errstate(over="ignore", invalid="ignore"):
        mse = float(np.sum(diff * diff) / m)
    act = params.config.activation
    d_out = 2.0 * diff / m
    g = {"W3": h2d.T @ d_out, "b3": d_out.sum(axis=0)}
    d_h2 = d_out @ params.W3.T
    if keep is not None:
        d_h2 = d_h2 * keep
    d_a2 = d_h2 * _act_grad(act, a2, h2)
    g["W2"] = h1.T @ d_a2
    g["b2"] = d_a2.sum(axis=0)
    d_a1 = (d_a2 @ params.W2.T) * _act_grad(act, a1, h1)
    g["W1"] = x.T @ d_a1
    g["b1"] = d_a1.sum(axis=0)
    return mse, g


# ---------------------------------------------------------------------------
# inputs


def variable_of_group(group: str) -> str | None:
    """Base variable behind an ANC group; ``None`` for calendar/hour groups."""
    if group in ("Calendar", "Holiday", "Hour"):
        return None
    parts = group.split(" ")
    if parts[0] == "price":
        return "price" if re.fullmatch(r"D(-\d+)?", parts[1]) else f"price {parts[1]}"
    return parts[0]


def input_variables(design: DesignMatrix) -> list[str]:
    seen = []
    for c in design.columns:
        v = variable_of_group(design.groups[c])
        if v is not None and v not in seen:
            seen.append(v)
    return seen


def select_columns(design: DesignMatrix, config: HyperConfig) -> np.ndarray:
    """Indices of per-day columns kept by the feature-selection bits."""
    if not any(config.includes(v) for v in input_variables(design)):
        raise ValueError("at least one input variable must be included")
    p_day = len(design.columns) - 24
    keep = []
    for i, c in enumerate(design.columns[:p_day]):
        v = variable_of_group(design.groups[c])
        if v is None or config.includes(v):
            keep.append(i)
    return np.array(keep, dtype=int)


def with_transform(design: DesignMatrix, kind: str) -> DesignMatrix:
    """Switch between Norm and Norm1; both share the same min/max, so this is affine."""
    if design.x_scaler.kind == kind:
        return design
    xs = ScalerState(kind, design.x_scaler.lo, design.x_scaler.hi)
    ys = ScalerState(kind, design.y_scaler.lo, design.y_scaler.hi)
    const_x = design.x_scaler.hi == design.x_scaler.lo
    const_y = design.y_scaler.hi == design.y_scaler.lo
    if kind == "Norm1":
        X, y = 2.0 * design.X - 1.0, 2.0 * design.y - 1.0
    else:
        X, y = (design.X + 1.0) / 2.0, (design.y + 1.0) / 2.0
    X = np.where(const_x, 0.0, X)
    y = np.where(const_y, 0.0, y)
    return DesignMatrix(design.days, design.columns, design.groups, X, y, xs, ys, design.config)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: MlpParams
    best_epoch: int
    epochs_run: int
    best_val_mse: float
    history: list


def validation_split(n_days: int, fraction: float = 0.1) -> int:
    """Number of trailing calibration days held out for early stopping."""
    return max(1, int(math.ceil(fraction * n_days))) if n_days > 1 else 0


def train(design: DesignMatrix, config: HyperConfig, split: float = 0.1, seed: int = 0,
          return_result: bool = False):
    """Fit on the calibration design with Adam and early stopping.

    The last ``split`` fraction of days (temporal) is the validation set.
    Returns the parameters of the best validation epoch.
    """
    design = with_transform(design, config.transform)
    cols = select_columns(design, config)
    Z, Y = design.day_view()
    Z = Z[:, cols]
    n_val = validation_split(len(design.days), split)
    if n_val >= len(design.days):
        raise ValueError("calibration window too short for a validation split")
    Ztr, Ytr = Z[: len(Z) - n_val], Y[: len(Y) - n_val]
    Zva, Yva = Z[len(Z) - n_val:], Y[len(Y) - n_val:]

    rng = np.random.Generator(np.random.Philox(seed))
    params = init_params(Z.shape[1], config, rng)
    params.x_scaler, params.y_scaler = design.x_scaler, design.y_scaler
    params.columns = tuple(design.columns[i] for i in cols)
    params.all_columns = tuple(design.columns)

    b1, b2 = ADAM_BETAS
    m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    best = params.copy()
    best_val, best_epoch, since_best = math.inf, 0, 0
    history = []
    epoch = 0
    for epoch in range(1, config.epochs_max + 1):
        mask = sample_mask(params, len(Ztr), rng) if config.dropout > 0 else None
        loss, grads = loss_and_gradient(params, (Ztr, Ytr), mask)
        if not math.isfinite(loss):
            raise DivergenceError(f"training loss became non-finite at epoch {epoch}")
        for k, g in grads.items():
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mhat = m[k] / (1 - b1 ** epoch)
            vhat = v[k] / (1 - b2 ** epoch)
            getattr(params, k)[...] -= config.learning_rate * mhat / (np.sqrt(vhat) + ADAM_EPS)
        val = float(np.mean((forward(params, Zva) - Yva) ** 2)) if n_val else loss
        if not math.isfinite(val):
            raise DivergenceError(f"validation loss became non-finite at epoch {epoch}")
        history.append((loss, val))
        if val < best_val:
            best_val, best_epoch, since_best = val, epoch, 0
            best = params.copy()
        else:
            since_best += 1
        if since_best >= config.patience:
            break
    result = TrainResult(best, best_epoch, epoch, best_val, history)
    return result if return_result else best


def _day_inputs(params: MlpParams, day_rows: DesignMatrix) -> np.ndarray:
    if params.all_columns and tuple(day_rows.columns) != params.all_columns:
        raise ScalerMismatchError("design columns differ from the network's training columns")
    rows = with_transform(day_rows, params.config.transform)
    if params.x_scaler is not None and (rows.x_scaler != params.x_scaler or rows.y_scaler != params.y_scaler):
        raise ScalerMismatchError("design was scaled with a different scaler than the network")
    pos = {c: i for i, c in enumerate(rows.columns)}
    idx = [pos[c] for c in params.columns]
    Z, _ = rows.day_view()
    return Z[:, idx]


def predict_dnn(params: MlpParams, day_rows: DesignMatrix) -> np.ndarray:
    """Prices (EUR/MWh); ``(24,)`` for one day, else ``(n_days, 24)``."""
    z = forward(params, _day_inputs(params, day_rows))
    out = norm_inverse(z, params.y_scaler) if params.y_scaler is not None else z
    return out[0] if out.shape[0] == 1 else out


# ---------------------------------------------------------------------------
# hyperparameter search


def default_space(variables, epochs_max: int = 1000, patience: int = 30) -> Space:
    dims = [
        IntDim("n1", 8, 256, log=True),
        IntDim("n2", 8, 256, log=True),
        CatDim("activation", ACTIVATIONS),
        CatDim("init", INITS),
        FloatDim("learning_rate", 1e-4, 1e-1, log=True),
        FloatDim("dropout", 0.0, 0.5),
        CatDim("transform", ("Norm", "Norm1")),
    ]
    dims += [CatDim(f"include:{v}", (True, False)) for v in variables]
    return Space(tuple(dims)), {"epochs_max": epochs_max, "patience": patience}


def config_from_params(params: dict, fixed: dict) -> HyperConfig:
    include = {k.split(":", 1)[1]: bool(v) for k, v in params.items() if k.startswith("include:")}
    if include and not any(include.values()):
        include[next(iter(include))] = True
    plain = {k: v for k, v in params.items() if not k.startswith("include:")}
    return HyperConfig(**plain, include_variable=include, **fixed)


def tpe_optimize(design: DesignMatrix, space=None, n_trials: int = 20, seed: int = 0,
                 epochs_max: int = 1000, patience: int = 30) -> HyperConfig:
    """Search hyperparameters on one calibration design by validation MSE."""
    if space is None:
        space, fixed = default_space(input_variables(design), epochs_max, patience)
    else:
        space, fixed = space
    n_val = validation_split(len(design.days))

    def objective(p):
        config = config_from_params(p, fixed)
        res = train(design, config, seed=seed, return_result=True)
        return res.best_val_mse if n_val else math.inf

    best, _ = tpe_search(objective, space, n_trials, seed)
    return config_from_params(best, fixed)

"""
Bounded-output neural ranging module g(x; theta) -> (d_hat, s_hat)
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from . import autodiff as ad
from .errors import ConfigurationError, DatasetError

logger = logging.getLogger(__name__)

INPUT_DIM = 3
DEFAULT_HIDDEN = (100, 100)
DEFAULT_D_BAR = 100.0
DEFAULT_S_BAR = 10.0
MODEL_FORMAT = 1
PASSTHROUGH_STD = 2.0
PASSTHROUGH_MAX_ITER = 500

ParamLeaves = dict[str, np.ndarray]


@dataclass(frozen=True)
class Normalization:
    """Fixed affine input scaling: (d/d_scale, s/s_scale, (p + p_offset)/p_scale)."""
    d_scale: float = DEFAULT_D_BAR
    s_scale: float = DEFAULT_S_BAR
    p_offset: float = 100.0
    p_scale: float = 80.0

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack(
            [x[..., 0] / self.d_scale, x[..., 1] / self.s_scale, (x[..., 2] + self.p_offset) / self.p_scale],
            axis=-1,
        )

    def invert(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return np.stack(
            [h[..., 0] * self.d_scale, h[..., 1] * self.s_scale, h[..., 2] * self.p_scale - self.p_offset],
            axis=-1,
        )

    def to_dict(self) -> dict:
        return {"d_scale": self.d_scale, "s_scale": self.s_scale, "p_offset": self.p_offset, "p_scale": self.p_scale}


def normalize(x: Sequence[float], constants: Normalization) -> np.ndarray:
    return constants.apply(np.asarray(x, dtype=float))


@dataclass
class RangingModule:
    """Fully connected sigmoid network with two bounded output heads.

    params holds W1..WL (D_l x D_{l-1}), b1..bL, the head rows w_d, w_s
    (D_L,) and the head biases b_d, b_s stored as shape (1,) arrays.
    """
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    params: dict[str, np.ndarray] = field(default_factory=dict)
    d_bar: float = DEFAULT_D_BAR
    s_bar: float = DEFAULT_S_BAR
    normalization: Normalization = field(default_factory=Normalization)

    def param_names(self) -> list[str]:
        names = []
        for l in range(1, len(self.hidden) + 1):
            names += [f"W{l}", f"b{l}"]
        return names + ["w_d", "b_d", "w_s", "b_s"]

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        prev = INPUT_DIM
        for l, width in enumerate(self.hidden, start=1):
            shapes[f"W{l}"] = (width, prev)
            shapes[f"b{l}"] = (width,)
            prev = width
        shapes.update({"w_d": (prev,), "b_d": (1,), "w_s": (prev,), "b_s": (1,)})
        return shapes

    def validate(self) -> None:
        if not self.hidden or any(w < 1 for w in self.hidden):
            raise ConfigurationError(f"Hidden layer widths must be positive, got {self.hidden}")
        if self.d_bar <= 0 or self.s_bar <= 0:
            raise ConfigurationError(f"Output bounds must be positive, got d_bar={self.d_bar}, s_bar={self.s_bar}")
        expected = self.expected_shapes()
        if set(self.params) != set(expected):
            raise ConfigurationError(f"Parameter names {sorted(self.params)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ConfigurationError(f"Parameter {name} has shape {self.params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ConfigurationError(f"Parameter {name} has non-finite entries")

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "RangingModule":
        return RangingModule(
            hidden=self.hidden,
            params={k: v.copy() for k, v in self.params.items()},
            d_bar=self.d_bar,
            s_bar=self.s_bar,
            normalization=self.normalization,
        )

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "shape": {"input": INPUT_DIM, "hidden": list(self.hidden)},
            "normalization": self.normalization.to_dict(),
            "bounds": {"d_bar": self.d_bar, "s_bar": self.s_bar},
            "parameters": {name: self.params[name].ravel().tolist() for name in self.param_names()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "RangingModule":
        try:
            shape = data["shape"]
            if int(shape.get("input", INPUT_DIM)) != INPUT_DIM:
                raise ConfigurationError(f"Model input dimension must be {INPUT_DIM}, got {shape['input']}")
            module = cls(
                hidden=tuple(int(w) for w in shape["hidden"]),
                d_bar=float(data["bounds"]["d_bar"]),
                s_bar=float(data["bounds"]["s_bar"]),
                normalization=Normalization(**{k: float(v) for k, v in data["normalization"].items()}),
            )
            expected = module.expected_shapes()
            for name, flat in data["parameters"].items():
                if name not in expected:
                    raise ConfigurationError(f"Unexpected parameter {name!r} in model")
                arr = np.asarray(flat, dtype=float)
                if arr.size != math.prod(expected[name]):
                    raise ConfigurationError(
                        f"Parameter {name} has {arr.size} values, expected {math.prod(expected[name])}"
                    )
                module.params[name] = arr.reshape(expected[name])
        except (KeyError, TypeError) as e:
            raise ConfigurationError(f"Invalid model file: {e!r}") from e
        module.validate()
        return module


def init_params(hidden: Sequence[int] = DEFAULT_HIDDEN, rng: np.random.Generator | None = None,
                d_bar: float = DEFAULT_D_BAR, s_bar: float = DEFAULT_S_BAR,
                normalization: Normalization | None = None) -> RangingModule:
    """Glorot-uniform weights, zero biases."""
    rng = rng if rng is not None else np.random.default_rng()
    module = RangingModule(
        hidden=tuple(int(w) for w in hidden),
        d_bar=d_bar,
        s_bar=s_bar,
        normalization=normalization or Normalization(d_scale=d_bar, s_scale=s_bar),
    )
    for name, shape in module.expected_shapes().items():
        if name.startswith("b"):
            module.params[name] = np.zeros(shape)
            continue
        fan_out, fan_in = shape if len(shape) == 2 else (1, shape[0])
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        module.params[name] = rng.uniform(-limit, limit, size=shape)
    module.validate()
    return module


def _forward_arrays(X: np.ndarray, module: RangingModule):
    """Batched numpy forward pass; returns outputs and the activation cache."""
    h = module.normalization.apply(X)
    acts = [h]
    for l in range(1, len(module.hidden) + 1):
        h = expit(h @ module.params[f"W{l}"].T + module.params[f"b{l}"])
        acts.append(h)
    sd = expit(h @ module.params["w_d"] + module.params["b_d"][0])
    ss = expit(h @ module.params["w_s"] + module.params["b_s"][0])
    return module.d_bar * sd, module.s_bar * ss, (acts, sd, ss)


def _backward_arrays(weights: dict[str, np.ndarray], module: RangingModule, cache,
                     grad_d: np.ndarray, grad_s: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(d_hat) and d(loss)/d(s_hat) per row."""
    acts, sd, ss = cache
    delta_d = grad_d * module.d_bar * sd * (1.0 - sd)
    delta_s = grad_s * module.s_bar * ss * (1.0 - ss)
    h_last = acts[-1]
    grads = {
        "w_d": h_last.T @ delta_d,
        "b_d": np.array([delta_d.sum()]),
        "w_s": h_last.T @ delta_s,
        "b_s": np.array([delta_s.sum()]),
    }
    dh = np.outer(delta_d, weights["w_d"]) + np.outer(delta_s, weights["w_s"])
    for l in range(len(module.hidden), 0, -1):
        h = acts[l]
        dz = dh * h * (1.0 - h)
        grads[f"W{l}"] = dz.T @ acts[l - 1]
        grads[f"b{l}"] = dz.sum(axis=0)
        dh = dz @ weights[f"W{l}"]
    return grads


def flatten_params(module: RangingModule) -> np.ndarray:
    return np.concatenate([module.params[name].ravel() for name in module.param_names()])


def unflatten_params(module: RangingModule, theta: np.ndarray) -> RangingModule:
    """Copy of module with parameters read back from a flat vector in model-file order."""
    shapes = module.expected_shapes()
    expected = sum(math.prod(shape) for shape in shapes.values())
    if len(theta) != expected:
        raise ConfigurationError(f"Expected {expected} parameters, got {len(theta)}")
    out = module.copy()
    offset = 0
    for name in module.param_names():
        size = math.prod(shapes[name])
        out.params[name] = np.asarray(theta[offset:offset + size], dtype=float).reshape(shapes[name])
        offset += size
    return out


def fit_passthrough(module: RangingModule, X: np.ndarray, s_target: float = PASSTHROUGH_STD,
                    max_iter: int = PASSTHROUGH_MAX_ITER) -> RangingModule:
    """Fit the module so d_hat tracks the raw FTM distance and s_hat sits at s_target.

    Uses only unlabeled inputs. The least-squares error is measured in the
    normalized output scale and minimized with L-BFGS-B from the current
    parameters.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) == 0:
        raise DatasetError("Warm start needs at least one ranging input")
    if not 0.0 < s_target < module.s_bar:
        raise ConfigurationError(f"s_target must be in (0, {module.s_bar}), got {s_target}")
    n = len(X)
    target_d = np.clip(X[:, 0], 0.0, module.d_bar)

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        candidate = unflatten_params(module, theta)
        d, s, cache = _forward_arrays(X, candidate)
        rd = (d - target_d) / module.d_bar
        rs = (s - s_target) / module.s_bar
        loss = float(np.sum(rd * rd + rs * rs) / n)
        grads = _backward_arrays(candidate.params, candidate, cache,
                                 2.0 * rd / (n * module.d_bar), 2.0 * rs / (n * module.s_bar))
        return loss, np.concatenate([grads[name].ravel() for name in module.param_names()])

    result = minimize(objective, flatten_params(module), jac=True, method="L-BFGS-B",
                      options={"maxiter": max_iter})
    fitted = unflatten_params(module, result.x)
    fitted.validate()
    d, _ = predict(fitted, X)
    logger.info(f"Warm start: {result.nit} iterations, d_hat MAE {np.mean(np.abs(d - target_d)):.3f} m "
                f"on {n} inputs")
    return fitted


def predict(module: RangingModule, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(d_hat, s_hat) arrays for an (n, 3) batch of raw inputs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d, s, _ = _forward_arrays(X, module)
    return d, s


def forward_batch(X: np.ndarray, module: RangingModule, tape: ad.Tape | None = None) -> list[tuple[ad.Scalar, ad.Scalar]]:
    """Outputs for every input row; taped runs register one fused block."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != INPUT_DIM:
        raise ConfigurationError(f"Ranging inputs must have {INPUT_DIM} columns, got {X.shape[1]}")
    d, s, (acts, sd, ss) = _forward_arrays(X, module)
    if tape is None:
        return [(float(a), float(b)) for a, b in zip(d, s)]

    weights = {name: module.params[name].copy() for name in module.param_names()}
    cache = (acts, sd, ss)

    def vjp(seeds: np.ndarray) -> dict[str, np.ndarray]:
        return _backward_arrays(weights, module, cache, seeds[0::2], seeds[1::2])

    outputs = tape.fused(np.column_stack([d, s]), vjp, kind="ranging")
    return [(outputs[2 * i], outputs[2 * i + 1]) for i in range(len(d))]


def module_leaves(module: RangingModule, tape: ad.Tape) -> ParamLeaves:
    """One scalar tape leaf per parameter entry, in model-file order."""
    leaves = {}
    for name in module.param_names():
        arr = module.params[name]
        flat = np.empty(arr.size, dtype=object)
        flat[:] = tape.leaves(arr.ravel())
        leaves[name] = flat.reshape(arr.shape)
    return leaves


def collect_gradients(grads: ad.Gradients, leaves: ParamLeaves) -> dict[str, np.ndarray]:
    out = {}
    for name, arr in leaves.items():
        out[name] = np.array([grads[v] for v in arr.ravel()], dtype=float).reshape(arr.shape)
    return out


def _forward_scalar(x: Sequence[float], module: RangingModule, leaves: ParamLeaves) -> tuple[ad.Scalar, ad.Scalar]:
    h: list[ad.Scalar] = [float(v) for v in normalize(x, module.normalization)]
    for l in range(1, len(module.hidden) + 1):
        W, b = leaves[f"W{l}"], leaves[f"b{l}"]
        h = [
            ad.sigmoid(ad.total([W[i, j] * h[j] for j in range(len(h))]) + b[i])
            for i in range(W.shape[0])
        ]
    zd = ad.total([leaves["w_d"][j] * h[j] for j in range(len(h))]) + leaves["b_d"][0]
    zs = ad.total([leaves["w_s"][j] * h[j] for j in range(len(h))]) + leaves["b_s"][0]
    return module.d_bar * ad.sigmoid(zd), module.s_bar * ad.sigmoid(zs)


def forward(x: Sequence[float], module: RangingModule, tape: ad.Tape | None = None,
            leaves: ParamLeaves | None = None) -> tuple[ad.Scalar, ad.Scalar]:
    """Enhanced (d_hat, s_hat) for one raw input [d_ftm, s_ftm, p_ftm].

    With leaves (from module_leaves) the network is built from scalar nodes;
    with only a tape it goes through the fused block; with neither it
    returns floats.
    """
    if len(x) != INPUT_DIM:
        raise ConfigurationError(f"Ranging input must have {INPUT_DIM} entries, got {len(x)}")
    if leaves is not None:
        return _forward_scalar(x, module, leaves)
    return forward_batch(np.asarray([x], dtype=float), module, tape)[0]


def save_model(module: RangingModule, path: Path) -> None:
    Path(path).write_text(module.to_json())


def load_model(path: Path) -> RangingModule:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Model file {path} is not valid JSON: {e}") from e
    return RangingModule.from_dict(data)

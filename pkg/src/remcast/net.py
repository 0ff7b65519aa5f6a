"""Compact feed-forward regressor mapping (x, y) to predicted power in dB.

Plain numpy implementation: batched forward with optional inverted dropout,
hand-derived reverse-mode backward over the layer stack, a five-point
stencil spatial Laplacian, and Monte-Carlo dropout summaries. Inputs are
normalized to [-1, 1] per axis and the output is an affine map of the raw
network output; both affine maps are recorded on the model so a saved
artifact is self-contained.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .seeding import rng_for

_ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class NetSpec:
    input_dim: int = 2
    hidden_layers: int = 3
    hidden_width: int = 304
    activation: str = "tanh"
    dropout_rate: float = 0.2
    output_dim: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        if self.hidden_width < 1:
            raise ValueError("hidden width must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")


class NetModel:
    """Network parameters plus the input/output normalization constants.

    ``tx_power_db`` / ``tx_xy`` / ``eta`` hold the transmitter estimates
    learned jointly with the network; they are None until training sets
    them and they travel with the saved artifact.
    """

    def __init__(self, spec: NetSpec, weights, biases):
        self.spec = spec
        self.weights = weights
        self.biases = biases
        self.in_center = np.zeros(spec.input_dim)
        self.in_halfwidth = np.ones(spec.input_dim)
        self.out_mean = 0.0
        self.out_std = 1.0
        self.tx_power_db = None
        self.tx_xy = None
        self.eta = None

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def set_input_bounds(self, bounds):
        x_min, x_max, y_min, y_max = bounds
        self.in_center = np.array([(x_min + x_max) / 2.0, (y_min + y_max) / 2.0])
        self.in_halfwidth = np.array(
            [max((x_max - x_min) / 2.0, 1e-9), max((y_max - y_min) / 2.0, 1e-9)]
        )

    def set_output_norm(self, mean: float, std: float):
        self.out_mean = float(mean)
        self.out_std = max(float(std), 1e-9)

    @property
    def input_bounds(self):
        cx, cy = self.in_center
        hx, hy = self.in_halfwidth
        return (cx - hx, cx + hx, cy - hy, cy + hy)

    def default_stencil_h(self) -> float:
        """Default stencil spacing: 1% of the input-domain diagonal."""
        hx, hy = self.in_halfwidth
        return 0.01 * 2.0 * float(np.hypot(hx, hy))


def net_new(spec: NetSpec) -> NetModel:
    """Fresh model with uniform fan-in initialization, deterministic per seed."""
    rng = rng_for(spec.seed, "net-init")
    sizes = (
        [spec.input_dim]
        + [spec.hidden_width] * spec.hidden_layers
        + [spec.output_dim]
    )
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NetModel(spec, weights, biases)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(name, z, h):
    if name == "tanh":
        return 1.0 - h * h
    return (z > 0.0).astype(float)


def _normalize_inputs(model: NetModel, pts: np.ndarray) -> np.ndarray:
    return (pts - model.in_center) / model.in_halfwidth


def forward_tape(model: NetModel, pts, dropout_on: bool = False, rng=None):
    """Run the network and keep the intermediates needed for backward.

    Returns (outputs, tape); outputs are denormalized dB values of shape
    (n,). With dropout on, inverted-dropout masks are drawn from ``rng``
    per hidden layer.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x = _normalize_inputs(model, pts)
    spec = model.spec
    rate = spec.dropout_rate
    use_dropout = dropout_on and rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("dropout requires an rng")
    acts = [x]
    pre = []
    masks = []
    h = x
    n_layers = len(model.weights)
    for li in range(n_layers - 1):
        z = h @ model.weights[li] + model.biases[li]
        h = _act(spec.activation, z)
        if use_dropout:
            mask = (rng.random(h.shape) >= rate) / (1.0 - rate)
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
        pre.append(z)
        acts.append(h)
    raw = (h @ model.weights[-1] + model.biases[-1])[:, 0]
    out = model.out_mean + model.out_std * raw
    tape = (acts, pre, masks)
    return out, tape


def forward(model: NetModel, pts, dropout_on: bool = False, rng=None):
    """Predicted power in dB at the given point(s)."""
    single = np.asarray(pts).ndim == 1
    out, _ = forward_tape(model, pts, dropout_on=dropout_on, rng=rng)
    return float(out[0]) if single else out


def backward(model: NetModel, tape, d_out):
    """Gradients of a scalar loss w.r.t. all weights and biases.

    ``d_out`` is the loss gradient w.r.t. the denormalized outputs, shape
    (n,). Returns (weight_grads, bias_grads) matching the model layout.
    """
    acts, pre, masks = tape
    spec = model.spec
    d_raw = np.asarray(d_out, dtype=float)[:, None] * model.out_std
    g_w = [None] * len(model.weights)
    g_b = [None] * len(model.biases)
    g_w[-1] = acts[-1].T @ d_raw
    g_b[-1] = d_raw.sum(axis=0)
    d_h = d_raw @ model.weights[-1].T
    for li in range(len(model.weights) - 2, -1, -1):
        if masks[li] is not None:
            d_h = d_h * masks[li]
        d_z = d_h * _act_grad(spec.activation, pre[li], _act(spec.activation, pre[li]))
        g_w[li] = acts[li].T @ d_z
        g_b[li] = d_z.sum(axis=0)
        if li > 0:
            d_h = d_z @ model.weights[li].T
    return g_w, g_b


def stencil_laplacian(func, pts, h: float):
    """Five-point central-difference Laplacian of an arbitrary field function."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if h <= 0:
        raise ValueError("stencil spacing must be positive")
    shifts = np.array([[0.0, 0.0], [h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]])
    stacked = (pts[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
    vals = np.asarray(func(stacked), dtype=float).reshape(5, -1)
    return (vals[1] + vals[2] + vals[3] + vals[4] - 4.0 * vals[0]) / h**2


def laplacian(model: NetModel, p, h: float | None = None):
    """Stencil Laplacian of the model output in dB per square meter.

    Evaluated with dropout off; ``h`` defaults to 1% of the input-domain
    diagonal recorded on the model.
    """
    if h is None:
        h = model.default_stencil_h()
    single = np.asarray(p).ndim == 1
    lap = stencil_laplacian(lambda q: forward(model, q), p, h)
    return float(lap[0]) if single else lap


def mc_forward(model: NetModel, p, passes: int = 50, seed: int = 0):
    """Mean and population std over repeated dropout-on forward passes."""
    if passes < 2:
        raise ValueError("need at least two stochastic passes")
    single = np.asarray(p).ndim == 1
    if model.spec.dropout_rate == 0.0:
        # every pass is identical; std is exactly zero
        out, _ = forward_tape(model, p)
        mean = out
        std = np.zeros_like(out)
        if single:
            return float(mean[0]), 0.0
        return mean, std
    rng = rng_for(seed, "mc-dropout")
    outs = np.stack(
        [forward_tape(model, p, dropout_on=True, rng=rng)[0] for _ in range(passes)]
    )
    mean = outs.mean(axis=0)
    std = outs.std(axis=0)
    if single:
        return float(mean[0]), float(std[0])
    return mean, std


ARTIFACT_VERSION = 1


def save_model(model: NetModel, path):
    """Write the model artifact (npz: spec, normalization, parameters,
    learned transmitter estimates)."""
    payload = {
        "format_version": np.array(ARTIFACT_VERSION),
        "spec_input_dim": np.array(model.spec.input_dim),
        "spec_hidden_layers": np.array(model.spec.hidden_layers),
        "spec_hidden_width": np.array(model.spec.hidden_width),
        "spec_activation": np.array(model.spec.activation),
        "spec_dropout_rate": np.array(model.spec.dropout_rate),
        "spec_output_dim": np.array(model.spec.output_dim),
        "spec_seed": np.array(model.spec.seed),
        "in_center": model.in_center,
        "in_halfwidth": model.in_halfwidth,
        "out_mean": np.array(model.out_mean),
        "out_std": np.array(model.out_std),
    }
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    if model.tx_power_db is not None:
        payload["tx_power_db"] = np.asarray(model.tx_power_db)
        payload["tx_xy"] = np.asarray(model.tx_xy)
    if model.eta is not None:
        payload["eta"] = np.array(model.eta)
    np.savez(path, **payload)


def load_model(path) -> NetModel:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != ARTIFACT_VERSION:
            raise ValueError(f"unsupported model artifact version {version}")
        spec = NetSpec(
            input_dim=int(data["spec_input_dim"]),
            hidden_layers=int(data["spec_hidden_layers"]),
            hidden_width=int(data["spec_hidden_width"]),
            activation=str(data["spec_activation"]),
            dropout_rate=float(data["spec_dropout_rate"]),
            output_dim=int(data["spec_output_dim"]),
            seed=int(data["spec_seed"]),
        )
        n_layers = spec.hidden_layers + 1
        weights = [data[f"w{i}"] for i in range(n_layers)]
        biases = [data[f"b{i}"] for i in range(n_layers)]
        model = NetModel(spec, weights, biases)
        model.in_center = data["in_center"]
        model.in_halfwidth = data["in_halfwidth"]
        model.out_mean = float(data["out_mean"])
        model.out_std = float(data["out_std"])
        if "tx_power_db" in data:
            model.tx_power_db = data["tx_power_db"]
            model.tx_xy = data["tx_xy"]
        if "eta" in data:
            model.eta = float(data["eta"])
    return model


def spec_with(spec: NetSpec, **overrides) -> NetSpec:
    return dataclasses.replace(spec, **overrides)

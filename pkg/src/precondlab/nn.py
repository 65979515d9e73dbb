"""Tiny fully-connected network with hand-written differentiation.

Reverse-mode gradients, forward-mode Jacobian-vector products, and the
curvature-vector products (Gauss-Newton and finite-difference Hessian)
needed by the matrix-free preconditioned optimizers.  Parameters live in
one flat vector with a fixed packing order: layer-major, each layer's
weight matrix in row-major order followed by its bias.

The regression benchmark is the Franke surface: 256 uniform points on the
unit square with Gaussian observation noise, resampled every epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream

__all__ = [
    "Mlp",
    "FrankeDataset",
    "FrankeTask",
    "franke",
    "make_franke_dataset",
    "predict",
    "mlp_loss_grad",
    "vjp",
    "jvp",
    "ggn_vector_product",
    "hessian_vector_product",
    "fd_hvp",
]

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class Mlp:
    """Feed-forward architecture: sizes per layer plus the hidden activation.

    The output layer is linear.  ``layer_dims`` includes input and output,
    e.g. (2, 50, 50, 1).
    """

    layer_dims: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self) -> None:
        if len(self.layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"all layer dims must be >= 1, got {self.layer_dims}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")

    @property
    def n_params(self) -> int:
        return sum(
            fan_out * fan_in + fan_out
            for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:])
        )

    def unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Flat vector -> [(W_1, b_1), ...], W_l shaped (fan_out, fan_in)."""
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected theta of shape ({self.n_params},), got {theta.shape}")
        layers = []
        pos = 0
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w = theta[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in)
            pos += fan_out * fan_in
            b = theta[pos : pos + fan_out]
            pos += fan_out
            layers.append((w, b))
        return layers

    def pack(self, layers) -> np.ndarray:
        """[(W_1, b_1), ...] -> flat vector; exact inverse of unpack."""
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Scaled-normal weights (He for relu, 1/sqrt(fan_in) for tanh), zero biases."""
        gain = np.sqrt(2.0) if self.activation == "relu" else 1.0
        layers = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w = rng.standard_normal((fan_out, fan_in)) * (gain / np.sqrt(fan_in))
            layers.append((w, np.zeros(fan_out)))
        return self.pack(layers)

    def _act(self, z: np.ndarray) -> np.ndarray:
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _act_deriv(self, z: np.ndarray) -> np.ndarray:
        # relu subgradient at 0 is taken as 0
        if self.activation == "relu":
            return (z > 0.0).astype(float)
        t = np.tanh(z)
        return 1.0 - t * t


def _forward(net: Mlp, theta: np.ndarray, x: np.ndarray):
    """Forward pass returning per-layer inputs and pre-activations."""
    layers = net.unpack(theta)
    a = x
    inputs = []  # a_{l-1} for each layer
    preacts = []  # z_l for each layer
    for i, (w, b) in enumerate(layers):
        inputs.append(a)
        z = a @ w.T + b
        preacts.append(z)
        a = net._act(z) if i < len(layers) - 1 else z
    return layers, inputs, preacts, a


def predict(net: Mlp, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Network outputs as an (n,) vector (scalar output assumed)."""
    *_, out = _forward(net, theta, np.atleast_2d(x))
    return out[:, 0] if out.ndim == 2 and out.shape[1] == 1 else out


def vjp(net: Mlp, theta: np.ndarray, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """J^T u for the (n, p) Jacobian of predictions w.r.t. parameters."""
    layers, inputs, preacts, _ = _forward(net, theta, np.atleast_2d(x))
    delta = np.atleast_1d(u)[:, None].astype(float)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = (delta.T @ inputs[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w) * net._act_deriv(preacts[i - 1])
    return net.pack(grads)


def jvp(net: Mlp, theta: np.ndarray, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """J v: directional derivative of each prediction along parameter direction v."""
    layers = net.unpack(theta)
    tangents = net.unpack(np.asarray(v, dtype=float))
    a = np.atleast_2d(x)
    da = np.zeros_like(a)
    for i, ((w, b), (dw, db)) in enumerate(zip(layers, tangents)):
        z = a @ w.T + b
        dz = da @ w.T + a @ dw.T + db
        if i < len(layers) - 1:
            da = net._act_deriv(z) * dz
            a = net._act(z)
        else:
            a, da = z, dz
    return da[:, 0] if da.ndim == 2 and da.shape[1] == 1 else da


def mlp_loss_grad(net: Mlp, theta: np.ndarray, batch) -> tuple[float, np.ndarray]:
    """Mean-squared-error training loss and its reverse-mode gradient.

    loss = mean((net(x_i) - y_i)^2); the gradient is J^T (2 r / n).
    """
    x, y = batch.inputs, batch.targets
    if len(y) == 0:
        raise ValueError("batch must be nonempty")
    residual = predict(net, theta, x) - y
    loss = float(np.mean(residual**2))
    grad_theta = vjp(net, theta, x, (2.0 / len(y)) * residual)
    return loss, grad_theta


def ggn_vector_product(net: Mlp, theta: np.ndarray, batch, v: np.ndarray) -> np.ndarray:
    """Gauss-Newton curvature action (2/n) J^T (J v) for the MSE loss.

    Drops the second-order network terms, so the result is PSD for any
    parameter point.
    """
    x, y = batch.inputs, batch.targets
    jv = jvp(net, theta, x, v)
    return (2.0 / len(y)) * vjp(net, theta, x, jv)


def fd_hvp(grad_fn, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Central finite difference of an analytic gradient along v.

    Step h = sqrt(machine eps) * (1 + ||theta||) / max(||v||, tiny);
    a zero direction returns zeros.
    """
    v = np.asarray(v, dtype=float)
    v_norm = float(np.linalg.norm(v))
    if v_norm == 0.0:
        return np.zeros_like(v)
    h = np.sqrt(np.finfo(float).eps) * (1.0 + float(np.linalg.norm(theta))) / v_norm
    g_plus = grad_fn(theta + h * v)
    g_minus = grad_fn(theta - h * v)
    return (g_plus - g_minus) / (2.0 * h)


def hessian_vector_product(net: Mlp, theta: np.ndarray, batch, v: np.ndarray) -> np.ndarray:
    """Hessian action on v via central differences of the MSE gradient."""
    return fd_hvp(lambda t: mlp_loss_grad(net, t, batch)[1], theta, v)


def franke(x, y):
    """Franke's multiscale test surface on (broadcastable) inputs.

    Four Gaussian-type terms; note the second term's exponent carries a
    linear -(9y+1)/10 contribution, not a squared one.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    term1 = 0.75 * np.exp(-((9 * x - 2) ** 2 + (9 * y - 2) ** 2) / 4.0)
    term2 = 0.75 * np.exp(-((9 * x + 1) ** 2) / 49.0 - (9 * y + 1) / 10.0)
    term3 = 0.5 * np.exp(-((9 * x - 7) ** 2 + (9 * y - 3) ** 2) / 4.0)
    term4 = -0.2 * np.exp(-((9 * x - 4) ** 2) - (9 * y - 7) ** 2)
    out = term1 + term2 + term3 + term4
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FrankeDataset:
    """Sampled inputs in [0,1]^2 with noise-corrupted surface values."""

    inputs: np.ndarray  # (n, 2)
    targets: np.ndarray  # (n,)


def _sample_franke(n: int, noise_var: float, rng: np.random.Generator) -> FrankeDataset:
    xy = rng.random((n, 2))
    targets = franke(xy[:, 0], xy[:, 1])
    if noise_var > 0:
        targets = targets + np.sqrt(noise_var) * rng.standard_normal(n)
    return FrankeDataset(inputs=xy, targets=targets)


def make_franke_dataset(n: int, noise_var: float, seed: int) -> FrankeDataset:
    """n uniform points with N(0, noise_var) observation noise (variance units)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if noise_var < 0:
        raise ValueError(f"noise_var must be >= 0, got {noise_var}")
    return _sample_franke(n, noise_var, stream(seed, "franke-data"))


@dataclass(frozen=True)
class FrankeTask:
    """Full-batch Franke regression: the optimizer-facing task object.

    One "epoch" is a single full-batch step on a freshly resampled set of
    ``n_points`` noisy observations.
    """

    net: Mlp
    n_points: int = 256
    noise_var: float = 1e-4
    f_star: float = 0.0

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return self.net.init_params(rng)

    def epoch_data(self, rng: np.random.Generator) -> FrankeDataset:
        return _sample_franke(self.n_points, self.noise_var, rng)

    def loss(self, theta: np.ndarray, batch: FrankeDataset) -> float:
        residual = predict(self.net, theta, batch.inputs) - batch.targets
        return float(np.mean(residual**2))

    def loss_grad(self, theta: np.ndarray, batch: FrankeDataset) -> tuple[float, np.ndarray]:
        return mlp_loss_grad(self.net, theta, batch)

    def hvp(self, theta: np.ndarray, batch: FrankeDataset, v: np.ndarray) -> np.ndarray:
        return hessian_vector_product(self.net, theta, batch, v)

    def ggn_vp(self, theta: np.ndarray, batch: FrankeDataset, v: np.ndarray) -> np.ndarray:
        return ggn_vector_product(self.net, theta, batch, v)

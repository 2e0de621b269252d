"""Invertible coupling flow with exact log-det-Jacobian and hand-derived
gradients.

Each layer passes the masked coordinates through unchanged and applies an
elementwise affine map to the rest, with scale and shift produced by small
tanh feed-forward nets of the masked coordinates. The scale is bounded,
s = scale_cap * tanh(raw), so every layer is invertible for all finite
parameters, and the Jacobian is triangular: the inverse-direction log-det is
simply -sum(s) accumulated over layers.

Everything is plain numpy so that gradient accumulation order, parameter
flattening, and serialization are fully deterministic.

Parameter flattening order (used by ``get_params``/``with_params``/
``backprop``): layer-major; within a layer scale_net then shift_net; within
a net the linear sublayers in input-to-output order; within a sublayer the
weight matrix in row-major order (rows = output units) followed by the bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_SCALE_CAP = 2.0
DEFAULT_HIDDEN = 64


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Mlp:
    """Feed-forward net: tanh hidden layers, linear output."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_readonly(W) for W in self.weights))
        object.__setattr__(self, "biases", tuple(_readonly(b) for b in self.biases))

    def forward(self, X: np.ndarray):
        """Returns (output, activations); activations cache the input and
        every hidden layer output for the backward pass."""
        acts = [X]
        H = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            H = np.tanh(H @ W.T + b)
            acts.append(H)
        out = H @ self.weights[-1].T + self.biases[-1]
        return out, acts

    def backward(self, acts, d_out):
        """Gradients of sum(upstream * output) wrt input and parameters."""
        dW = [None] * len(self.weights)
        db = [None] * len(self.biases)
        dW[-1] = d_out.T @ acts[-1]
        db[-1] = d_out.sum(axis=0)
        dH = d_out @ self.weights[-1]
        for k in range(len(self.weights) - 2, -1, -1):
            d_pre = dH * (1.0 - acts[k + 1] ** 2)
            dW[k] = d_pre.T @ acts[k]
            db[k] = d_pre.sum(axis=0)
            dH = d_pre @ self.weights[k]
        return dH, dW, db

    @property
    def param_count(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class CouplingLayer:
    mask: np.ndarray
    scale_net: Mlp
    shift_net: Mlp
    scale_cap: float = DEFAULT_SCALE_CAP

    def __post_init__(self):
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)
        if not (mask.any() and (~mask).any()):
            raise ValueError("coupling mask needs at least one passed-through "
                             "and one transformed coordinate")
        if not self.scale_cap > 0:
            raise ValueError("scale_cap must be positive")

    def _nets(self, A: np.ndarray):
        raw_s, acts_s = self.scale_net.forward(A)
        tanh_s = np.tanh(raw_s)
        s = self.scale_cap * tanh_s
        t, acts_t = self.shift_net.forward(A)
        return s, tanh_s, acts_s, t, acts_t


@dataclass(frozen=True)
class FlowModel:
    dim: int
    layers: tuple[CouplingLayer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for i, layer in enumerate(self.layers):
            if layer.mask.shape != (self.dim,):
                raise ValueError(f"layer {i} mask length {layer.mask.shape} "
                                 f"does not match dim {self.dim}")

    @property
    def param_count(self) -> int:
        return sum(l.scale_net.param_count + l.shift_net.param_count
                   for l in self.layers)

    def to_dict(self) -> dict:
        def net(m: Mlp):
            return {"W": [W.tolist() for W in m.weights],
                    "b": [b.tolist() for b in m.biases]}

        return {
            "format": "coupling-flow",
            "version": 1,
            "dim": self.dim,
            "layers": [{
                "mask": [bool(x) for x in l.mask],
                "scale_net": net(l.scale_net),
                "shift_net": net(l.shift_net),
                "scale_cap": l.scale_cap,
            } for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FlowModel":
        if d.get("format") != "coupling-flow" or d.get("version") != 1:
            raise ValueError("not a version-1 coupling-flow document")

        def net(nd):
            return Mlp(weights=tuple(np.asarray(W) for W in nd["W"]),
                       biases=tuple(np.asarray(b) for b in nd["b"]))

        layers = tuple(
            CouplingLayer(mask=np.asarray(ld["mask"], dtype=bool),
                          scale_net=net(ld["scale_net"]),
                          shift_net=net(ld["shift_net"]),
                          scale_cap=float(ld["scale_cap"]))
            for ld in d["layers"])
        return cls(dim=d["dim"], layers=layers)


def _net_shapes(n_in: int, n_out: int, hidden: int, n_hidden: int):
    sizes = [n_in] + [hidden] * n_hidden + [n_out]
    return list(zip(sizes[1:], sizes[:-1]))


def init_flow(dim: int, n_layers: int, hidden: int = DEFAULT_HIDDEN,
              seed: int = 0, scale_cap: float = DEFAULT_SCALE_CAP,
              n_hidden_layers: int | None = None) -> FlowModel:
    """Build an identity-initialized flow.

    Masks alternate between the first and second half of the coordinates,
    swapping each layer. Hidden weights are uniform +-1/sqrt(fan_in) from a
    seeded generator, hidden biases zero; the final linear layer of every
    net is zero, so a fresh flow is exactly the identity with log-det 0.
    ``n_hidden_layers`` defaults to 2 for dim <= 64 and 1 above.
    """
    if dim < 2:
        raise ValueError("coupling needs dim >= 2")
    if n_layers < 1 or hidden < 1:
        raise ValueError("n_layers and hidden must be >= 1")
    if n_hidden_layers is None:
        n_hidden_layers = 2 if dim <= 64 else 1
    rng = np.random.default_rng(seed)
    half = np.zeros(dim, dtype=bool)
    half[: dim // 2] = True

    def make_net(n_in, n_out):
        weights, biases = [], []
        shapes = _net_shapes(n_in, n_out, hidden, n_hidden_layers)
        for i, (o, fan_in) in enumerate(shapes):
            if i == len(shapes) - 1:
                weights.append(np.zeros((o, fan_in)))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                weights.append(rng.uniform(-bound, bound, size=(o, fan_in)))
            biases.append(np.zeros(o))
        return Mlp(weights=tuple(weights), biases=tuple(biases))

    layers = []
    for i in range(n_layers):
        mask = half if i % 2 == 0 else ~half
        n_in, n_out = int(mask.sum()), int((~mask).sum())
        layers.append(CouplingLayer(mask=mask.copy(),
                                    scale_net=make_net(n_in, n_out),
                                    shift_net=make_net(n_in, n_out),
                                    scale_cap=scale_cap))
    return FlowModel(dim=dim, layers=tuple(layers))


def _check_finite(H, layer_idx, direction):
    if not np.all(np.isfinite(H)):
        raise FloatingPointError(
            f"non-finite activation after layer {layer_idx} ({direction} pass)")


def inverse_with_logdet(flow: FlowModel, x: np.ndarray):
    """z = f^{-1}(x) and log|det d f^{-1} / d x|, exact.

    Accepts one vector (returns (z, float)) or a batch matrix
    (returns (Z, logdet array)).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != flow.dim:
        raise ValueError(f"input dim {X.shape[1]} != flow dim {flow.dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input to inverse_with_logdet")
    Z, logj, _ = _inverse_pass(flow, X)
    if single:
        return Z[0], float(logj[0])
    return Z, logj


def _inverse_pass(flow: FlowModel, X: np.ndarray):
    """Run x -> z caching per-layer intermediates for backprop."""
    H = X
    logj = np.zeros(X.shape[0])
    caches = [None] * len(flow.layers)
    for k in range(len(flow.layers) - 1, -1, -1):
        layer = flow.layers[k]
        m = layer.mask
        A = H[:, m]
        B = H[:, ~m]
        s, tanh_s, acts_s, t, acts_t = layer._nets(A)
        ZB = (B - t) * np.exp(-s)
        out = np.empty_like(H)
        out[:, m] = A
        out[:, ~m] = ZB
        _check_finite(out, k, "inverse")
        logj -= s.sum(axis=1)
        caches[k] = (tanh_s, acts_s, acts_t, ZB, s)
        H = out
    return H, logj, caches


def forward(flow: FlowModel, z: np.ndarray) -> np.ndarray:
    """x = f(z), the exact algebraic inverse of the inverse pass."""
    x, _ = forward_with_logdet(flow, z)
    return x


def forward_with_logdet(flow: FlowModel, z: np.ndarray):
    """x = f(z) and log|det d f / d z| (the negation of the inverse-direction
    log-det at corresponding points)."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    H = z[None, :] if single else z
    if H.shape[1] != flow.dim:
        raise ValueError(f"input dim {H.shape[1]} != flow dim {flow.dim}")
    if not np.all(np.isfinite(H)):
        raise ValueError("non-finite input to forward")
    logj = np.zeros(H.shape[0])
    for k, layer in enumerate(flow.layers):
        m = layer.mask
        A = H[:, m]
        s, _, _, t, _ = layer._nets(A)
        out = np.empty_like(H)
        out[:, m] = A
        out[:, ~m] = H[:, ~m] * np.exp(s) + t
        _check_finite(out, k, "forward")
        logj += s.sum(axis=1)
        H = out
    if single:
        return H[0], float(logj[0])
    return H, logj


def backprop(flow: FlowModel, x: np.ndarray, grad_z: np.ndarray,
             grad_logj: np.ndarray):
    """Exact gradients of L = sum_batch(grad_z . z(x) + grad_logj * logj(x)).

    Returns (param_grads, grad_x): a flat vector in the documented parameter
    order, and the gradient wrt the inputs. Accumulation is batch-major
    inside each layer and layer-major across layers, so results are
    bit-reproducible for a given (model, inputs).
    """
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    G = np.asarray(grad_z, dtype=np.float64)
    if G.ndim == 1:
        G = G[None, :]
    gj = np.atleast_1d(np.asarray(grad_logj, dtype=np.float64))
    if G.shape != X.shape or gj.shape != (X.shape[0],):
        raise ValueError(f"shape mismatch: x {X.shape}, grad_z {G.shape}, "
                         f"grad_logj {gj.shape}")
    _, _, caches = _inverse_pass(flow, X)
    return _backward_from_caches(flow, caches, G, gj)


def _backward_from_caches(flow: FlowModel, caches, G: np.ndarray,
                          gj: np.ndarray):
    grads_per_layer = [None] * len(flow.layers)
    dH = G
    # Walk from the z side back toward x; layer k's inverse consumed the
    # activation produced by layer k+1's inverse.
    for k, layer in enumerate(flow.layers):
        tanh_s, acts_s, acts_t, ZB, s = caches[k]
        m = layer.mask
        dZA = dH[:, m]
        dZB = dH[:, ~m]
        e = np.exp(-s)
        dB = dZB * e
        dt = -dB
        ds = -dZB * ZB - gj[:, None]
        d_raw_s = ds * layer.scale_cap * (1.0 - tanh_s ** 2)
        dA_s, dWs, dbs = layer.scale_net.backward(acts_s, d_raw_s)
        dA_t, dWt, dbt = layer.shift_net.backward(acts_t, dt)
        dX = np.empty_like(dH)
        dX[:, m] = dZA + dA_s + dA_t
        dX[:, ~m] = dB
        grads_per_layer[k] = (dWs, dbs, dWt, dbt)
        dH = dX

    flat = []
    for dWs, dbs, dWt, dbt in grads_per_layer:
        for W, b in zip(dWs, dbs):
            flat.append(W.ravel())
            flat.append(b)
        for W, b in zip(dWt, dbt):
            flat.append(W.ravel())
            flat.append(b)
    return np.concatenate(flat), dH


def get_params(flow: FlowModel) -> np.ndarray:
    """Flatten all parameters in the documented order."""
    flat = []
    for layer in flow.layers:
        for net in (layer.scale_net, layer.shift_net):
            for W, b in zip(net.weights, net.biases):
                flat.append(W.ravel())
                flat.append(b)
    return np.concatenate(flat)


def with_params(flow: FlowModel, theta: np.ndarray) -> FlowModel:
    """Rebuild the flow from a flat parameter vector (inverse of get_params)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (flow.param_count,):
        raise ValueError(f"expected {flow.param_count} parameters, "
                         f"got {theta.shape}")
    pos = 0
    layers = []
    for layer in flow.layers:
        nets = []
        for net in (layer.scale_net, layer.shift_net):
            weights, biases = [], []
            for W, b in zip(net.weights, net.biases):
                weights.append(theta[pos:pos + W.size].reshape(W.shape))
                pos += W.size
                biases.append(theta[pos:pos + b.size])
                pos += b.size
            nets.append(Mlp(weights=tuple(weights), biases=tuple(biases)))
        layers.append(CouplingLayer(mask=layer.mask.copy(), scale_net=nets[0],
                                    shift_net=nets[1],
                                    scale_cap=layer.scale_cap))
    return FlowModel(dim=flow.dim, layers=tuple(layers))

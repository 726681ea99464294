"""Minimal neural-network engine: forward, analytic backprop, Adam, checkpoints.

Two architectures are supported, selected by ``use_prenorm_residual``:

* pre-norm residual net (session network): input affine to the hidden width,
  ``num_blocks`` pre-norm residual blocks, output affine. Each block is
  layernorm -> affine -> activation -> dropout -> affine -> skip add.
* plain MLP (stacking classifier): input affine, ``num_blocks`` hidden
  affines, output affine, with activation + dropout after every non-output
  layer.

Inputs are single 1-D vectors; batching is done by the callers' loops.
All arithmetic is float64. Dropout is inverted (scaled at train time), so
eval mode is the expectation of train mode.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from ._binio import Reader, pack_str
from .errors import BadMagicError, FormatError, FormatVersionError, TruncatedFileError

NETWORK_MAGIC = b"SESSNET1"
NETWORK_VERSION = 1

# Small enough that normalized vectors have variance 1 to ~1e-12 at unit scale.
LAYERNORM_EPS = 1e-12

ACTIVATIONS = ("gelu", "leaky_relu")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of one network; shapes of all parameters derive from it."""

    input_dim: int
    output_dim: int
    hidden_dim: int
    num_blocks: int
    activation: str = "gelu"
    leaky_slope: float = 0.01
    dropout_rate: float = 0.0
    use_prenorm_residual: bool = True

    def validate(self) -> None:
        for name in ("input_dim", "output_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_blocks < 0:
            raise ValueError("num_blocks must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class NetworkParams:
    """Named parameter tensors, ordered as declared by ``param_shapes``."""

    tensors: dict[str, np.ndarray]

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.tensors.items()})


def param_shapes(spec: NetworkSpec) -> dict[str, tuple]:
    """Declaration-ordered parameter names and shapes for ``spec``."""
    spec.validate()
    h = spec.hidden_dim
    shapes: dict[str, tuple] = {"in.w": (h, spec.input_dim), "in.b": (h,)}
    for k in range(spec.num_blocks):
        if spec.use_prenorm_residual:
            shapes[f"block{k}.norm.gain"] = (h,)
            shapes[f"block{k}.norm.bias"] = (h,)
            shapes[f"block{k}.fc1.w"] = (h, h)
            shapes[f"block{k}.fc1.b"] = (h,)
            shapes[f"block{k}.fc2.w"] = (h, h)
            shapes[f"block{k}.fc2.b"] = (h,)
        else:
            shapes[f"block{k}.fc.w"] = (h, h)
            shapes[f"block{k}.fc.b"] = (h,)
    shapes["out.w"] = (spec.output_dim, h)
    shapes["out.b"] = (spec.output_dim,)
    return shapes


def init_params(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases, unit layernorm gains."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".w"):
            fan_out, fan_in = shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".norm.gain"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return NetworkParams(tensors)


def gelu(x):
    """Exact GELU, x * Phi(x) with the Gaussian CDF via erf."""
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def leaky_relu(x, slope: float = 0.01):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, x, slope * x)


def leaky_relu_grad(x, slope: float = 0.01):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, 1.0, slope)


def _activation_pair(spec: NetworkSpec):
    if spec.activation == "gelu":
        return gelu, gelu_grad
    return (
        lambda x: leaky_relu(x, spec.leaky_slope),
        lambda x: leaky_relu_grad(x, spec.leaky_slope),
    )


@dataclass
class ForwardCache:
    """Intermediates of one forward call, consumed by ``backward``."""

    spec: NetworkSpec
    params_id: int
    x: np.ndarray
    steps: list = field(default_factory=list)


def _dropout_mask(rng, size: int, rate: float) -> np.ndarray:
    # Inverted dropout: mask already carries the 1/(1-p) scale.
    keep = rng.random(size) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def forward(
    spec: NetworkSpec,
    params: NetworkParams,
    x: np.ndarray,
    *,
    train: bool = False,
    seed: int | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on one input vector.

    Args:
      x: input of shape (input_dim,), finite.
      train: apply dropout when True; ``seed`` is then required if the
        spec has a nonzero dropout rate.

    Returns:
      (output vector, cache for backward).
    """
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.input_dim,):
        raise ValueError(f"input shape {x.shape}, expected ({spec.input_dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    use_dropout = train and spec.dropout_rate > 0.0
    if use_dropout and seed is None:
        raise ValueError("train-mode forward with dropout requires a seed")
    rng = np.random.default_rng(seed) if use_dropout else None
    act, _ = _activation_pair(spec)
    t = params.tensors
    cache = ForwardCache(spec=spec, params_id=id(params), x=x)

    def dropout(v: np.ndarray):
        if not use_dropout:
            return v, None
        mask = _dropout_mask(rng, v.shape[0], spec.dropout_rate)
        return v * mask, mask

    h = t["in.w"] @ x + t["in.b"]
    if spec.use_prenorm_residual:
        cache.steps.append({"kind": "in", "x": x})
        for k in range(spec.num_blocks):
            mu = h.mean()
            var = h.var()
            s = math.sqrt(var + LAYERNORM_EPS)
            u = (h - mu) / s
            z1 = t[f"block{k}.fc1.w"] @ (t[f"block{k}.norm.gain"] * u + t[f"block{k}.norm.bias"]) + t[f"block{k}.fc1.b"]
            a1 = act(z1)
            d1, mask = dropout(a1)
            z2 = t[f"block{k}.fc2.w"] @ d1 + t[f"block{k}.fc2.b"]
            cache.steps.append(
                {"kind": "prenorm_block", "k": k, "h_in": h, "u": u, "s": s,
                 "z1": z1, "a1": a1, "d1": d1, "mask": mask}
            )
            h = h + z2
    else:
        a0 = act(h)
        d0, mask0 = dropout(a0)
        cache.steps.append({"kind": "in_act", "x": x, "z": h, "a": a0, "mask": mask0})
        h = d0
        for k in range(spec.num_blocks):
            z = t[f"block{k}.fc.w"] @ h + t[f"block{k}.fc.b"]
            a = act(z)
            d, mask = dropout(a)
            cache.steps.append(
                {"kind": "plain_block", "k": k, "h_in": h, "z": z, "a": a, "mask": mask}
            )
            h = d
    y = t["out.w"] @ h + t["out.b"]
    cache.steps.append({"kind": "out", "h": h})
    return y, cache


def apply(spec: NetworkSpec, params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Deterministic eval-mode forward, output only."""
    y, _ = forward(spec, params, x, train=False)
    return y


def backward(
    spec: NetworkSpec,
    params: NetworkParams,
    cache: ForwardCache,
    grad_output: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Analytic gradients of the forward map.

    Args:
      cache: the cache returned by the matching ``forward`` call, taken
        before ``params`` changed.

    Returns:
      (gradients keyed like the parameter tensors, gradient w.r.t. the input).
    """
    if cache.spec != spec:
        raise ValueError("cache was produced under a different network spec")
    if cache.params_id != id(params):
        raise ValueError("cache is stale: produced with different parameters")
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != (spec.output_dim,):
        raise ValueError(
            f"grad_output shape {grad_output.shape}, expected ({spec.output_dim},)"
        )
    _, act_grad = _activation_pair(spec)
    t = params.tensors
    grads = {name: np.zeros_like(arr) for name, arr in t.items()}

    out_step = cache.steps[-1]
    grads["out.w"] += np.outer(grad_output, out_step["h"])
    grads["out.b"] += grad_output
    dh = t["out.w"].T @ grad_output

    for step in reversed(cache.steps[:-1]):
        if step["kind"] == "prenorm_block":
            k = step["k"]
            dz2 = dh  # residual branch output grad; skip path handled below
            grads[f"block{k}.fc2.w"] += np.outer(dz2, step["d1"])
            grads[f"block{k}.fc2.b"] += dz2
            dd1 = t[f"block{k}.fc2.w"].T @ dz2
            if step["mask"] is not None:
                da1 = dd1 * step["mask"]
            else:
                da1 = dd1
            dz1 = da1 * act_grad(step["z1"])
            gain = t[f"block{k}.norm.gain"]
            n_in = gain * step["u"] + t[f"block{k}.norm.bias"]
            grads[f"block{k}.fc1.w"] += np.outer(dz1, n_in)
            grads[f"block{k}.fc1.b"] += dz1
            dn = t[f"block{k}.fc1.w"].T @ dz1
            grads[f"block{k}.norm.gain"] += dn * step["u"]
            grads[f"block{k}.norm.bias"] += dn
            du = dn * gain
            u = step["u"]
            dh_norm = (du - du.mean() - u * np.mean(du * u)) / step["s"]
            dh = dh + dh_norm  # skip add: grad flows through both paths
        elif step["kind"] == "plain_block":
            k = step["k"]
            if step["mask"] is not None:
                da = dh * step["mask"]
            else:
                da = dh
            dz = da * act_grad(step["z"])
            grads[f"block{k}.fc.w"] += np.outer(dz, step["h_in"])
            grads[f"block{k}.fc.b"] += dz
            dh = t[f"block{k}.fc.w"].T @ dz
        elif step["kind"] == "in_act":
            if step["mask"] is not None:
                da = dh * step["mask"]
            else:
                da = dh
            dz = da * act_grad(step["z"])
            grads["in.w"] += np.outer(dz, step["x"])
            grads["in.b"] += dz
            dh = t["in.w"].T @ dz
        elif step["kind"] == "in":
            grads["in.w"] += np.outer(dh, step["x"])
            grads["in.b"] += dh
            dh = t["in.w"].T @ dh
        else:  # pragma: no cover
            raise ValueError(f"corrupt cache step {step['kind']!r}")
    return grads, dh


@dataclass
class OptimizerState:
    """Adam accumulators; shapes mirror the parameter tensors."""

    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def init_optimizer(
    params: NetworkParams,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> OptimizerState:
    return OptimizerState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        step=0,
        m={k: np.zeros_like(v) for k, v in params.tensors.items()},
        v={k: np.zeros_like(v) for k, v in params.tensors.items()},
    )


def optimizer_step(
    params: NetworkParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
) -> tuple[NetworkParams, OptimizerState]:
    """One Adam update, applied in place; returns the mutated objects."""
    if set(grads) != set(params.tensors):
        raise ValueError("gradient keys do not match parameter keys")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


def _spec_header(spec: NetworkSpec, kind: str) -> bytes:
    doc = {
        "kind": kind,
        "input_dim": spec.input_dim,
        "output_dim": spec.output_dim,
        "hidden_dim": spec.hidden_dim,
        "num_blocks": spec.num_blocks,
        "activation": spec.activation,
        "leaky_slope": spec.leaky_slope,
        "dropout_rate": spec.dropout_rate,
        "use_prenorm_residual": spec.use_prenorm_residual,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_network(path, spec: NetworkSpec, params: NetworkParams, kind: str) -> None:
    """Write a network checkpoint (SESSNET1 format).

    ``kind`` tags what the network is (e.g. "session_net", "qstack") so
    loaders can refuse a checkpoint trained for another role.
    """
    header = _spec_header(spec, kind)
    chunks = [
        NETWORK_MAGIC,
        struct.pack("<I", NETWORK_VERSION),
        struct.pack("<I", len(header)),
        header,
    ]
    for name, shape in param_shapes(spec).items():
        arr = params.tensors[name]
        if arr.shape != shape:
            raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_network(path, expect_kind: str | None = None) -> tuple[NetworkSpec, NetworkParams, str]:
    """Read a SESSNET1 checkpoint; optionally enforce its kind tag."""
    with open(path, "rb") as f:
        data = f.read()
    r = Reader(data, f"checkpoint file {path}")
    magic = r.take(8)
    if magic != NETWORK_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {NETWORK_MAGIC!r}")
    version = r.u32()
    if version != NETWORK_VERSION:
        raise FormatVersionError(f"unsupported checkpoint version {version}")
    header_len = r.u32()
    try:
        doc = json.loads(r.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}") from exc
    try:
        kind = doc["kind"]
        spec = NetworkSpec(
            input_dim=doc["input_dim"],
            output_dim=doc["output_dim"],
            hidden_dim=doc["hidden_dim"],
            num_blocks=doc["num_blocks"],
            activation=doc["activation"],
            leaky_slope=doc["leaky_slope"],
            dropout_rate=doc["dropout_rate"],
            use_prenorm_residual=doc["use_prenorm_residual"],
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint header missing field {exc}") from exc
    spec.validate()
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"checkpoint kind is {kind!r}, expected {expect_kind!r}")
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(spec).items():
        size = int(np.prod(shape))
        tensors[name] = r.f64_array(size).copy().reshape(shape)
    r.expect_end()
    return spec, NetworkParams(tensors), kind

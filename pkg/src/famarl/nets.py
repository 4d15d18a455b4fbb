"""Hand-rolled MLP actor/critic: forward, analytic backprop, Adam, checkpoints.

The actor is one parameter-shared trunk producing a d_a mean from
[observation, agent one-hot], with a state-independent learnable log-std
(diagonal Gaussian head).  The critic maps the flattened global state to a
scalar.  Everything is float64 numpy; forward passes cache activations so
backward passes are a single reverse sweep.

``call_counts`` instruments critic evaluations: group-phase updates of the
critic-free trainer must leave it untouched, which tests assert.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

call_counts = {"critic_forward": 0}

_MAGIC = b"FAMLCKPT"
_VERSION = 1


@dataclass
class MlpParams:
    """Weight matrices (fan_in, fan_out) and bias vectors, one pair per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )

    def arrays(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)


def init_mlp(rng: np.random.Generator, sizes: list[int], out_scale: float = 0.01) -> MlpParams:
    """He-initialized hidden layers; the output layer is drawn small so the
    initial policy mean stays near zero and the initial value estimate near 0."""
    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = layer == len(sizes) - 2
        std = out_scale / np.sqrt(fan_in) if last else np.sqrt(2.0 / fan_in)
        weights.append(rng.standard_normal((fan_in, fan_out)) * std)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases)


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Batch forward pass.  Returns (output, cache) where the cache holds the
    input of every layer, as needed by mlp_backward."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"expected input shape (batch, {params.weights[0].shape[0]}), got {x.shape}"
        )
    cache = []
    h = x
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.append(h)
        z = h @ w + b
        h = z if layer == last else np.maximum(z, 0.0)
    return h, cache


def mlp_backward(params: MlpParams, cache: list, grad_out: np.ndarray) -> MlpParams:
    """Reverse sweep producing parameter gradients shaped like ``params``.

    ReLU masks are recomputed from the cached layer inputs (post-activation
    values are positive exactly where the pre-activations were).
    """
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    grad = np.asarray(grad_out, dtype=float)
    for layer in range(len(params.weights) - 1, -1, -1):
        h_in = cache[layer]
        grad_w[layer] = h_in.T @ grad
        grad_b[layer] = grad.sum(axis=0)
        if layer > 0:
            grad = grad @ params.weights[layer].T
            grad *= cache[layer] > 0.0  # layer input was ReLU output for layer >= 1
    return MlpParams(weights=grad_w, biases=grad_b, activation=params.activation)


@dataclass
class GaussianPolicy:
    """Shared actor trunk plus state-independent log-std head."""

    trunk: MlpParams
    log_std: np.ndarray

    def __post_init__(self) -> None:
        self.log_std = np.asarray(self.log_std, dtype=float)
        self.clamp_log_std()

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(trunk=self.trunk.copy(), log_std=self.log_std.copy())

    def arrays(self) -> list[np.ndarray]:
        return self.trunk.arrays() + [self.log_std]

    @property
    def action_dim(self) -> int:
        return self.trunk.sizes[-1]


def init_policy(
    rng: np.random.Generator,
    obs_dim: int,
    num_agents: int,
    action_dim: int,
    hidden_width: int,
    hidden_layers: int,
    log_std_init: float = -1.5,
) -> GaussianPolicy:
    sizes = [obs_dim + num_agents] + [hidden_width] * hidden_layers + [action_dim]
    return GaussianPolicy(trunk=init_mlp(rng, sizes), log_std=np.full(action_dim, log_std_init))


def init_critic(
    rng: np.random.Generator, state_dim: int, hidden_width: int, hidden_layers: int
) -> MlpParams:
    return init_mlp(rng, [state_dim] + [hidden_width] * hidden_layers + [1])


def one_hot(num_agents: int, agent: int) -> np.ndarray:
    vec = np.zeros(num_agents)
    vec[agent] = 1.0
    return vec


def actor_forward(
    policy: GaussianPolicy, obs: np.ndarray, agent_one_hot: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and log-std for one flattened observation (or a batch of them)."""
    obs = np.asarray(obs, dtype=float)
    single = obs.ndim == 1
    obs = np.atleast_2d(obs)
    ids = np.atleast_2d(np.asarray(agent_one_hot, dtype=float))
    if ids.shape[0] == 1 and obs.shape[0] > 1:
        ids = np.repeat(ids, obs.shape[0], axis=0)
    if ids.shape[0] != obs.shape[0]:
        raise ValueError(f"batch mismatch: obs {obs.shape}, one-hot {ids.shape}")
    mean, _ = mlp_forward(policy.trunk, np.concatenate([obs, ids], axis=1))
    if single:
        mean = mean[0]
    return mean, policy.log_std.copy()


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density, summed over the action dimension."""
    z = (np.asarray(actions) - np.asarray(mean)) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - log_std.shape[-1] * HALF_LOG_2PI


def sample_action(
    rng: np.random.Generator, mean: np.ndarray, log_std: np.ndarray
) -> tuple[np.ndarray, float]:
    noise = rng.standard_normal(np.shape(mean))
    action = mean + np.exp(log_std) * noise
    return action, float(gaussian_log_prob(action, mean, log_std))


def policy_entropy(log_std: np.ndarray) -> float:
    """Differential entropy of the diagonal Gaussian: sum_d (s_d + 0.5*ln(2*pi*e))."""
    return float(np.sum(log_std + 0.5 * np.log(2.0 * np.pi * np.e)))


def log_prob_backward(
    actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray, grad_logp: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop through gaussian_log_prob.

    Given dL/dlogp per sample, returns (dL/dmean per sample, dL/dlog_std
    summed over the batch); d logp/d mean = (a - mu) * exp(-2s) and
    d logp/d s_d = (a_d - mu_d)^2 * exp(-2 s_d) - 1.
    """
    diff = np.asarray(actions) - np.asarray(mean)
    inv_var = np.exp(-2.0 * log_std)
    grad_logp = np.asarray(grad_logp)[..., None]
    grad_mean = grad_logp * diff * inv_var
    grad_log_std = np.sum(grad_logp * (diff * diff * inv_var - 1.0), axis=0)
    return grad_mean, grad_log_std


def critic_forward(params: MlpParams, state: np.ndarray, return_cache: bool = False):
    """Scalar value for one flattened state, or a vector for a batch.

    The only sanctioned entry point for critic evaluation; increments
    ``call_counts['critic_forward']`` so tests can assert the critic-free
    update path never touches the critic.
    """
    call_counts["critic_forward"] += 1
    state = np.asarray(state, dtype=float)
    single = state.ndim == 1
    out, cache = mlp_forward(params, np.atleast_2d(state))
    value = float(out[0, 0]) if single else out[:, 0]
    return (value, cache) if return_cache else value


@dataclass
class AdamState:
    """Moment buffers live in one flat vector each; ``slices`` maps them back
    onto the parameter list so the hot loop is a handful of full-width ops."""

    m: np.ndarray
    v: np.ndarray
    slices: list[slice]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 3e-5


def init_adam(params: list[np.ndarray], lr: float) -> AdamState:
    slices, offset = [], 0
    for p in params:
        slices.append(slice(offset, offset + p.size))
        offset += p.size
    return AdamState(m=np.zeros(offset), v=np.zeros(offset), slices=slices, lr=lr)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(state.slices):
        raise ValueError(f"adam state tracks {len(state.slices)} arrays, got {len(params)}")
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    g = np.concatenate([np.ravel(a) for a in grads])
    m, v = state.m, state.v
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * g * g
    delta = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    for p, sl in zip(params, state.slices):
        p -= delta[sl].reshape(p.shape)


def global_grad_norm(grads: list[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grads(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place to the given global norm; returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def mlp_named_arrays(params: MlpParams, prefix: str) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}.w{layer}"] = w
        out[f"{prefix}.b{layer}"] = b
    return out


def mlp_from_named_arrays(arrays: dict[str, np.ndarray], prefix: str) -> MlpParams:
    weights, biases = [], []
    layer = 0
    while f"{prefix}.w{layer}" in arrays:
        weights.append(arrays[f"{prefix}.w{layer}"])
        biases.append(arrays[f"{prefix}.b{layer}"])
        layer += 1
    if not weights:
        raise CheckpointError(f"checkpoint holds no arrays under {prefix!r}")
    return MlpParams(weights=weights, biases=biases)


def policy_named_arrays(policy: GaussianPolicy, prefix: str = "actor") -> dict[str, np.ndarray]:
    out = mlp_named_arrays(policy.trunk, prefix)
    out[f"{prefix}.log_std"] = policy.log_std
    return out


def policy_from_named_arrays(arrays: dict[str, np.ndarray], prefix: str = "actor") -> GaussianPolicy:
    if f"{prefix}.log_std" not in arrays:
        raise CheckpointError(f"checkpoint is missing {prefix}.log_std")
    return GaussianPolicy(
        trunk=mlp_from_named_arrays(arrays, prefix), log_std=arrays[f"{prefix}.log_std"]
    )


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Single-file format: magic, u32 version, u32 header length, JSON header
    (array names and shapes plus metadata), float64 little-endian payload in
    declared order.  Round trips are bit-exact."""
    entries = [{"name": name, "shape": list(arr.shape)} for name, arr in arrays.items()]
    header = json.dumps({"entries": entries, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint32(_VERSION).tobytes())
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    offset = len(_MAGIC)
    try:
        version = int(np.frombuffer(blob, "<u4", count=1, offset=offset)[0])
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        offset += 4
        header_len = int(np.frombuffer(blob, "<u4", count=1, offset=offset)[0])
        offset += 4
        header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
        offset += header_len
        arrays: dict[str, np.ndarray] = {}
        for entry in header["entries"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            flat = np.frombuffer(blob, "<f8", count=count, offset=offset)
            offset += 8 * count
            arrays[entry["name"]] = flat.reshape(shape).copy()
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after declared payload")
    return arrays, header["meta"]

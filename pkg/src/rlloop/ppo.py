"""PPO from scratch on numpy: Gaussian tanh-MLP policy, separate value net,
GAE, clipped surrogate loss with analytic gradients, and Adam.

Networks map the 2-d observation through tanh hidden layers to a scalar.
The policy's standard deviation is a single state-independent ``log_std``.
Parameter arrays are keyed ``pi.w0, pi.b0, ..., log_std, v.w0, v.b0, ...``;
weights are stored ``(fan_in, fan_out)`` and applied as ``x @ w + b``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .core import ContractViolation, FaultError, Observation

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
CHECKPOINT_MAGIC = "rlloop-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PpoHyperparams:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    rollout_len: int = 32
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs_per_update: int = 10
    minibatch_size: int = 32
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ContractViolation("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ContractViolation("gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ContractViolation("clip_eps must be positive")
        if self.rollout_len < 1 or self.minibatch_size < 1 or self.epochs_per_update < 1:
            raise ContractViolation("rollout_len, minibatch_size and epochs must be >= 1")
        if self.learning_rate < 0 or self.max_grad_norm <= 0:
            raise ContractViolation("learning_rate must be >= 0 and max_grad_norm > 0")


# ---------------------------------------------------------------- parameters


@dataclass
class PolicyParameters:
    arrays: dict[str, np.ndarray]
    hidden: tuple[int, ...] = (64, 64)
    obs_dim: int = 2
    # value = value_scale * (value net output)
    value_scale: float = 1.0

    def layers(self, prefix: str) -> tuple[list[np.ndarray], list[np.ndarray]]:
        n = len(self.hidden) + 1
        return (
            [self.arrays[f"{prefix}.w{k}"] for k in range(n)],
            [self.arrays[f"{prefix}.b{k}"] for k in range(n)],
        )

    @property
    def log_std(self) -> float:
        return float(self.arrays["log_std"][0])

    def copy(self) -> PolicyParameters:
        return PolicyParameters(
            {k: v.copy() for k, v in self.arrays.items()}, self.hidden, self.obs_dim, self.value_scale
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    def check_finite(self):
        # one reduction per array; any NaN/inf poisons the total
        if math.isfinite(sum(float(v.sum()) for v in self.arrays.values())):
            return
        for name, v in self.arrays.items():
            if not np.isfinite(v).all():
                raise FaultError(f"non-finite values in parameter {name}")

    def num_params(self) -> int:
        return sum(v.size for v in self.arrays.values())


def _layer_shapes(obs_dim: int, hidden: tuple[int, ...]):
    sizes = (obs_dim, *hidden, 1)
    return list(zip(sizes[:-1], sizes[1:]))


def _orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:fan_in, :fan_out])


def init_params(
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (64, 64),
    obs_dim: int = 2,
    log_std_init: float = -0.5,
    value_scale: float = 1.0,
) -> PolicyParameters:
    """Orthogonal init: gain sqrt(2) on hidden layers, 0.01 on the mean head,
    1.0 on the value head, zero biases."""
    arrays = {}
    shapes = _layer_shapes(obs_dim, tuple(hidden))
    for prefix, head_gain in (("pi", 0.01), ("v", 1.0)):
        for k, (fan_in, fan_out) in enumerate(shapes):
            gain = head_gain if k == len(shapes) - 1 else math.sqrt(2.0)
            arrays[f"{prefix}.w{k}"] = _orthogonal(rng, fan_in, fan_out, gain)
            arrays[f"{prefix}.b{k}"] = np.zeros(fan_out)
        if prefix == "pi":
            arrays["log_std"] = np.array([float(log_std_init)])
    return PolicyParameters(arrays, tuple(hidden), obs_dim, float(value_scale))


def zero_params(hidden: tuple[int, ...] = (64, 64), obs_dim: int = 2, log_std: float = 0.0):
    arrays = {}
    for prefix in ("pi", "v"):
        for k, (fan_in, fan_out) in enumerate(_layer_shapes(obs_dim, tuple(hidden))):
            arrays[f"{prefix}.w{k}"] = np.zeros((fan_in, fan_out))
            arrays[f"{prefix}.b{k}"] = np.zeros(fan_out)
        if prefix == "pi":
            arrays["log_std"] = np.array([float(log_std)])
    return PolicyParameters(arrays, tuple(hidden), obs_dim)


# ------------------------------------------------------------------ forward


def _as_input(obs) -> np.ndarray:
    return np.ascontiguousarray(obs, dtype=np.float64).reshape(-1)


def policy_forward(params: PolicyParameters, obs) -> tuple[float, float, float]:
    """Return ``(mean, log_std, value)`` for a single observation."""
    x = _as_input(obs)
    log_std = params.log_std
    try:
        mean = kernels.mlp_forward(x, *params.layers("pi"))
        value = params.value_scale * kernels.mlp_forward(x, *params.layers("v"))
    except ValueError:
        params.check_finite()
        raise
    if not math.isfinite(log_std):
        raise FaultError("non-finite values in parameter log_std")
    return mean, log_std, value


def gaussian_log_prob(raw, mean, log_std):
    z = (np.asarray(raw) - mean) * np.exp(-log_std)
    return -0.5 * z * z - log_std - HALF_LOG_2PI


def sample_action(params: PolicyParameters, obs, rng: np.random.Generator):
    """Draw ``raw ~ N(mean, exp(log_std))``; the action is ``raw`` clamped to [0, 1].

    ``log_prob`` is the density of the unclamped draw.
    """
    mean, log_std, _ = policy_forward(params, obs)
    raw = mean + math.exp(log_std) * rng.standard_normal()
    action = min(max(raw, 0.0), 1.0)
    return action, raw, _scalar_log_prob(raw, mean, log_std)


def _scalar_log_prob(raw: float, mean: float, log_std: float) -> float:
    z = (raw - mean) * math.exp(-log_std)
    return -0.5 * z * z - log_std - HALF_LOG_2PI


def _mlp_batch(x, weights, biases):
    """Batch forward keeping the activations needed for backprop."""
    acts = [x]
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ w + b)
        acts.append(h)
    return (h @ weights[-1] + biases[-1])[:, 0], acts


def _mlp_backward(acts, weights, dout):
    """Gradients of ``sum(dout * output)`` w.r.t. weights and biases."""
    n = len(weights)
    gw, gb = [None] * n, [None] * n
    dz = dout[:, None]
    for k in range(n - 1, -1, -1):
        gw[k] = acts[k].T @ dz
        gb[k] = dz.sum(axis=0)
        if k > 0:
            dh = dz @ weights[k].T
            dz = dh * (1.0 - acts[k] * acts[k])
    return gw, gb


def batch_forward(params: PolicyParameters, obs: np.ndarray):
    """Means and values for a ``(N, obs_dim)`` batch."""
    obs = np.asarray(obs, dtype=np.float64)
    mean, _ = _mlp_batch(obs, *params.layers("pi"))
    value, _ = _mlp_batch(obs, *params.layers("v"))
    return mean, params.value_scale * value


# ------------------------------------------------------------------- buffer


@dataclass
class Transition:
    state: Observation
    action: float
    raw_action: float
    log_prob: float
    value: float
    reward: float
    next_state: Observation
    done: bool = False


@dataclass
class TrajectoryBuffer:
    transitions: list[Transition] = field(default_factory=list)

    def add(self, t: Transition):
        if not math.isfinite(t.log_prob):
            raise FaultError(f"non-finite log_prob at buffer index {len(self.transitions)}")
        self.transitions.append(t)

    def clear(self):
        self.transitions.clear()

    def __len__(self):
        return len(self.transitions)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(t, name) for t in self.transitions], dtype=np.float64)

    def states(self) -> np.ndarray:
        return np.array([t.state for t in self.transitions], dtype=np.float64).reshape(len(self), -1)


def compute_gae(
    buffer: TrajectoryBuffer,
    hp: PpoHyperparams,
    bootstrap_value: float,
    normalize: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and value targets for the buffer.

    ``bootstrap_value`` is V of the last transition's next state. Returns are
    computed from the raw advantages; only the returned advantages are
    normalized (skipped when their std is below 1e-8).
    """
    if len(buffer) == 0:
        raise ContractViolation("compute_gae on an empty buffer")
    rewards = buffer.column("reward")
    values = buffer.column("value")
    dones = buffer.column("done")
    next_values = np.append(values[1:], bootstrap_value)
    adv = kernels.gae(rewards, values, next_values, dones, float(hp.gamma), float(hp.gae_lambda))
    returns = adv + values
    if normalize:
        std = adv.std()
        if std >= 1e-8:
            adv = (adv - adv.mean()) / std
    return adv, returns


# --------------------------------------------------------------------- loss


@dataclass
class Minibatch:
    obs: np.ndarray
    raw_actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.obs.shape[0]

    def subset(self, idx) -> Minibatch:
        return Minibatch(*(getattr(self, f.name)[idx] for f in dataclasses.fields(self)))


def ppo_loss(params: PolicyParameters, batch: Minibatch, hp: PpoHyperparams):
    """Clipped-surrogate PPO loss and its exact gradient for every parameter.

    Returns ``(loss, grads, info)`` where ``grads`` mirrors ``params.arrays``.
    """
    n = len(batch)
    if n == 0:
        raise ContractViolation("empty minibatch")
    pi_w, pi_b = params.layers("pi")
    v_w, v_b = params.layers("v")
    log_std = params.log_std
    mean, pi_acts = _mlp_batch(batch.obs, pi_w, pi_b)
    value, v_acts = _mlp_batch(batch.obs, v_w, v_b)
    value = params.value_scale * value

    inv_std = math.exp(-log_std)
    z = (batch.raw_actions - mean) * inv_std
    log_prob = -0.5 * z * z - log_std - HALF_LOG_2PI
    ratio = np.exp(log_prob - batch.old_log_probs)
    adv = batch.advantages
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps) * adv
    per_policy = -np.minimum(surr1, surr2)
    err = value - batch.returns
    per_value = hp.value_coef * err * err
    entropy = 0.5 + HALF_LOG_2PI + log_std

    bad = ~(np.isfinite(per_policy) & np.isfinite(per_value))
    if bad.any():
        raise FaultError(f"non-finite loss at sample index {int(np.argmax(bad))}")

    policy_loss = float(per_policy.mean())
    value_loss = float(per_value.mean())
    loss = policy_loss + value_loss - hp.entropy_coef * entropy

    # d(loss)/d(log_prob): zero where the clipped branch is the minimum
    unclipped = surr1 <= surr2
    d_logp = np.where(unclipped, -adv * ratio, 0.0) / n
    d_mean = d_logp * z * inv_std
    d_log_std = float(np.sum(d_logp * (z * z - 1.0))) - hp.entropy_coef
    d_value = 2.0 * hp.value_coef * err / n

    grads = {}
    gw, gb = _mlp_backward(pi_acts, pi_w, d_mean)
    for k, (w, b) in enumerate(zip(gw, gb)):
        grads[f"pi.w{k}"], grads[f"pi.b{k}"] = w, b
    grads["log_std"] = np.array([d_log_std])
    gw, gb = _mlp_backward(v_acts, v_w, params.value_scale * d_value)
    for k, (w, b) in enumerate(zip(gw, gb)):
        grads[f"v.w{k}"], grads[f"v.b{k}"] = w, b

    info = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_fraction": float(np.mean(~unclipped)),
    }
    return loss, grads, info


# ---------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Return updated copies of ``arrays``; moments advance in place."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = {}
        for name, p in arrays.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            out[name] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads, max_norm: float):
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def update(
    params: PolicyParameters,
    buffer: TrajectoryBuffer,
    hp: PpoHyperparams,
    *,
    rng: np.random.Generator,
    optimizer: Adam | None = None,
    bootstrap_value: float = 0.0,
) -> tuple[PolicyParameters, dict]:
    """Run ``epochs_per_update`` passes of shuffled minibatch Adam steps.

    The buffer is left untouched; clearing it is the caller's job. On a
    non-finite step a :class:`FaultError` is raised and ``params`` is unchanged.
    """
    if len(buffer) != hp.rollout_len:
        raise ContractViolation(f"buffer holds {len(buffer)} transitions, expected {hp.rollout_len}")
    optimizer = optimizer or Adam(hp.learning_rate)
    adv, returns = compute_gae(buffer, hp, bootstrap_value)
    data = Minibatch(
        buffer.states(),
        buffer.column("raw_action"),
        buffer.column("log_prob"),
        adv,
        returns,
    )
    current = params.copy()
    n = len(data)
    stats = []
    for _ in range(hp.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, hp.minibatch_size):
            mb = data.subset(order[start:start + hp.minibatch_size])
            _, grads, info = ppo_loss(current, mb, hp)
            grads, info["grad_norm"] = clip_by_global_norm(grads, hp.max_grad_norm)
            arrays = optimizer.step(current.arrays, grads)
            arrays["log_std"] = np.clip(arrays["log_std"], LOG_STD_MIN, LOG_STD_MAX)
            candidate = PolicyParameters(arrays, current.hidden, current.obs_dim, current.value_scale)
            if not candidate.is_finite():
                raise FaultError("update produced non-finite parameters; step rejected")
            current = candidate
            stats.append(info)
    summary = {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}
    return current, summary


class PpoAgent:
    """Parameters plus the optimizer state and RNG that persist across updates."""

    def __init__(self, params: PolicyParameters, hp: PpoHyperparams, rng: np.random.Generator):
        self.params = params
        self.hp = hp
        self.rng = rng
        self.optimizer = Adam(hp.learning_rate)
        self.buffer = TrajectoryBuffer()

    def act(self, obs):
        mean, log_std, value = policy_forward(self.params, obs)
        raw = mean + math.exp(log_std) * self.rng.standard_normal()
        action = min(max(raw, 0.0), 1.0)
        return action, raw, _scalar_log_prob(raw, mean, log_std), value

    def value(self, obs) -> float:
        return policy_forward(self.params, obs)[2]

    def update(self, bootstrap_value: float) -> dict:
        self.params, info = update(
            self.params,
            self.buffer,
            self.hp,
            rng=self.rng,
            optimizer=self.optimizer,
            bootstrap_value=bootstrap_value,
        )
        return info


# --------------------------------------------------------------- checkpoint


def save_checkpoint(path, params: PolicyParameters, hp: PpoHyperparams | None = None):
    """Plain-text dump; every float is written with ``float.hex`` so loading is exact.

    Layout::

        rlloop-checkpoint 1
        obs_dim 2
        hidden 64 64
        value_scale 0x1.9000000000000p+6
        hp learning_rate 0x1.3a92a30553261p-12
        ...
        array pi.w0 2 64
        <one hex float per line>
    """
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", f"obs_dim {params.obs_dim}"]
    lines.append("hidden " + " ".join(str(h) for h in params.hidden))
    lines.append(f"value_scale {float(params.value_scale).hex()}")
    for f in dataclasses.fields(PpoHyperparams):
        value = getattr(hp or PpoHyperparams(), f.name)
        text = float(value).hex() if isinstance(value, float) else str(value)
        lines.append(f"hp {f.name} {text}")
    for name, arr in params.arrays.items():
        lines.append(f"array {name} " + " ".join(str(s) for s in arr.shape))
        lines.extend(float(x).hex() for x in arr.ravel())
    Path(path).write_text("\n".join(lines) + "\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path, expect_hidden: tuple[int, ...] | None = None):
    """Return ``(params, hp)`` from :func:`save_checkpoint` output."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != [CHECKPOINT_MAGIC, str(CHECKPOINT_VERSION)]:
        raise CheckpointError(f"{path}: not a version {CHECKPOINT_VERSION} rlloop checkpoint")
    obs_dim, hidden, hp_values, arrays = None, None, {}, {}
    value_scale = 1.0
    i = 1
    try:
        while i < len(lines):
            parts = lines[i].split()
            i += 1
            if parts[0] == "obs_dim":
                obs_dim = int(parts[1])
            elif parts[0] == "hidden":
                hidden = tuple(int(h) for h in parts[1:])
            elif parts[0] == "value_scale":
                value_scale = float.fromhex(parts[1])
            elif parts[0] == "hp":
                hp_values[parts[1]] = parts[2]
            elif parts[0] == "array":
                shape = tuple(int(s) for s in parts[2:])
                size = int(np.prod(shape))
                values = [float.fromhex(x) for x in lines[i:i + size]]
                if len(values) != size:
                    raise CheckpointError(f"{path}: truncated array {parts[1]}")
                arrays[parts[1]] = np.array(values, dtype=np.float64).reshape(shape)
                i += size
            else:
                raise CheckpointError(f"{path}:{i}: unexpected line {lines[i - 1]!r}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}:{i}: malformed checkpoint ({exc})") from None

    if obs_dim is None or hidden is None:
        raise CheckpointError(f"{path}: missing obs_dim/hidden header")
    expected = zero_params(hidden, obs_dim)
    if set(arrays) != set(expected.arrays):
        raise CheckpointError(f"{path}: parameter names do not match hidden={hidden}")
    for name, arr in expected.arrays.items():
        if arrays[name].shape != arr.shape:
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, expected {arr.shape}")
    if expect_hidden is not None and tuple(expect_hidden) != hidden:
        raise CheckpointError(f"{path}: hidden layers {hidden} != expected {tuple(expect_hidden)}")

    kinds = {f.name: f.type for f in dataclasses.fields(PpoHyperparams)}
    hp_kwargs = {}
    for name, text in hp_values.items():
        if name in kinds:
            hp_kwargs[name] = int(text) if kinds[name] == "int" else float.fromhex(text)
    params = PolicyParameters({k: arrays[k] for k in expected.arrays}, hidden, obs_dim, value_scale)
    return params, PpoHyperparams(**hp_kwargs)

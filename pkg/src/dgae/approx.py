"""Small tanh MLPs with hand-written reverse-mode gradients.

Networks are ``in -> H -> ... -> out`` with tanh hidden units and a linear
output. Parameters are plain numpy arrays so they can be optimized in place
and checkpointed without any framework.

Checkpoint layout: a numpy ``.npz`` archive. Each entry is one parameter
array stored as ``.npy`` (which carries its own dtype and shape header),
named ``<group>/<index>`` where ``group`` is ``policy`` or ``value`` and
``index`` follows :meth:`MlpParams.arrays` order (``W0, b0, W1, b1, ...``),
with the policy's ``log_std`` appended last. A ``meta`` entry holds a JSON
string with the network sizes.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class MlpParams:
    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {k}: weight {W.shape} and bias {b.shape} disagree")
            if k and W.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k} input width does not match previous output")

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def arrays(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def from_arrays(cls, arrays) -> "MlpParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(W) for W in self.weights],
                         [np.zeros_like(b) for b in self.biases])


def _orthogonal(rng, n_in, n_out, gain):
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def init_mlp(sizes, rng, hidden_gain=np.sqrt(2.0), out_gain=1.0) -> MlpParams:
    """Orthogonal init with zero biases; the last layer uses ``out_gain``."""
    weights, biases = [], []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if k == len(sizes) - 2 else hidden_gain
        weights.append(_orthogonal(rng, n_in, n_out, gain))
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases)


def forward(params: MlpParams, x, return_cache=False):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ValueError(f"input width {x.shape[-1]} != network input {params.weights[0].shape[0]}")
    h = x
    acts = [h]
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        h = z if k == last else np.tanh(z)
        acts.append(h)
    return (h, acts) if return_cache else h


def backward(params: MlpParams, x, output_grad, cache=None, return_input_grad=False):
    """Gradients of ``sum(output_grad * forward(params, x))`` for every parameter.

    Batched inputs sum the per-row contributions.
    """
    if cache is None:
        out, cache = forward(params, x, return_cache=True)
    else:
        out = cache[-1]
    g = np.asarray(output_grad, dtype=float)
    if g.shape != out.shape:
        raise ValueError(f"output_grad shape {g.shape} != output shape {out.shape}")
    gW, gb = [None] * len(params.weights), [None] * len(params.biases)
    last = len(params.weights) - 1
    for k in range(last, -1, -1):
        if k != last:
            g = g * (1.0 - cache[k + 1] ** 2)
        h_in = cache[k]
        if g.ndim == 1:
            gW[k] = np.outer(h_in, g)
            gb[k] = g.copy()
        else:
            gW[k] = h_in.T @ g
            gb[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
    grads = MlpParams(gW, gb)
    return (grads, g) if return_input_grad else grads


def value_forward(params: MlpParams, x, return_cache=False):
    """Value-head output sorted ascending along the quantile axis."""
    raw, cache = forward(params, x, return_cache=True)
    order = np.argsort(raw, axis=-1, kind="stable")
    out = np.take_along_axis(raw, order, axis=-1)
    return (out, (order, cache)) if return_cache else out


def value_backward(params: MlpParams, x, sorted_grad, cache=None) -> MlpParams:
    """Backward pass through the sort: gradients follow the permutation."""
    if cache is None:
        _, cache = value_forward(params, x, return_cache=True)
    order, net_cache = cache
    raw_grad = np.empty_like(np.asarray(sorted_grad, dtype=float))
    np.put_along_axis(raw_grad, order, sorted_grad, axis=-1)
    return backward(params, x, raw_grad, cache=net_cache)


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian policy.

    With ``state_dependent_std`` the network emits ``[mean, log_std]`` and the
    ``log_std`` array is unused; otherwise ``log_std`` is a free parameter.
    """

    mlp: MlpParams
    log_std: np.ndarray
    state_dependent_std: bool = False

    @property
    def action_dim(self) -> int:
        return self.log_std.size

    def arrays(self) -> list:
        return self.mlp.arrays() + [self.log_std]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mlp.copy(), self.log_std.copy(), self.state_dependent_std)


def init_policy(state_dim, action_dim, hidden, rng, log_std_init=0.0,
                state_dependent_std=False, n_hidden_layers=2) -> GaussianPolicy:
    out_dim = 2 * action_dim if state_dependent_std else action_dim
    sizes = [state_dim] + [hidden] * n_hidden_layers + [out_dim]
    mlp = init_mlp(sizes, rng, out_gain=0.01)
    if state_dependent_std:
        mlp.biases[-1][action_dim:] = log_std_init
    return GaussianPolicy(mlp, np.full(action_dim, float(log_std_init)), state_dependent_std)


def _heads(policy: GaussianPolicy, states):
    out, cache = forward(policy.mlp, states, return_cache=True)
    d = policy.action_dim
    if policy.state_dependent_std:
        mu, raw_log_std = out[..., :d], out[..., d:]
    else:
        mu = out
        raw_log_std = np.broadcast_to(policy.log_std, mu.shape)
    log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    inside = (raw_log_std >= LOG_STD_MIN) & (raw_log_std <= LOG_STD_MAX)
    return mu, log_std, inside, cache


def action_mean(policy: GaussianPolicy, states):
    return _heads(policy, states)[0]


def _log_density(mu, log_std, actions):
    z = (actions - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=-1), z


def policy_grad(policy: GaussianPolicy, states, actions, dlogp, entropy_weight=0.0):
    """Gradient of ``sum_b dlogp[b] * log pi(a_b|s_b) + entropy_weight * mean_b H_b``.

    ``dlogp`` may be a callable mapping the current log-probabilities to the
    weights, so objectives such as a clipped ratio need a single forward pass.
    Returns ``(log_probs, grads)`` with ``grads`` ordered like
    :meth:`GaussianPolicy.arrays`.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    mu, log_std, inside, cache = _heads(policy, states)
    if actions.shape != mu.shape:
        raise ValueError(f"action shape {actions.shape} != policy output {mu.shape}")
    logp, z = _log_density(mu, log_std, actions)
    if callable(dlogp):
        dlogp = dlogp(logp)
    w = np.asarray(dlogp, dtype=float).reshape(-1, 1)
    B = states.shape[0]
    d_mu = w * z * np.exp(-log_std)
    d_log_std = (w * (z * z - 1.0) + entropy_weight / B) * inside
    if policy.state_dependent_std:
        mlp_grads = backward(policy.mlp, states, np.concatenate([d_mu, d_log_std], axis=-1), cache)
        g_log_std = np.zeros_like(policy.log_std)
    else:
        mlp_grads = backward(policy.mlp, states, d_mu, cache)
        g_log_std = d_log_std.sum(axis=0)
    return logp, mlp_grads.arrays() + [g_log_std]


def log_prob(policy: GaussianPolicy, state, action):
    """Log-density of ``action`` and its gradient w.r.t. every policy parameter.

    A single state/action pair gives a float; batches give an array of
    log-densities and the gradient of their sum.
    """
    single = np.ndim(state) == 1
    logp, grads = policy_grad(policy, state, action, np.ones(np.atleast_2d(state).shape[0]))
    return (float(logp[0]), grads) if single else (logp, grads)


def log_probs(policy: GaussianPolicy, states, actions) -> np.ndarray:
    mu, log_std, _, _ = _heads(policy, np.atleast_2d(states))
    return _log_density(mu, log_std, np.atleast_2d(actions))[0]


def entropy(policy: GaussianPolicy, states) -> np.ndarray:
    _, log_std, _, _ = _heads(policy, np.atleast_2d(states))
    return np.sum(log_std + 0.5 * (_LOG_2PI + 1.0), axis=-1)


def sample_action(policy: GaussianPolicy, state, rng) -> np.ndarray:
    mu, log_std, _, _ = _heads(policy, np.asarray(state, dtype=float))
    return mu + np.exp(log_std) * rng.standard_normal(mu.shape)


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        grads = [g * s for g in grads]
    return grads, norm


@dataclass
class Adam:
    """Adam over a list of arrays updated in place (descent direction)."""

    params: list
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
            self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def save_checkpoint(path, policy: GaussianPolicy, value: MlpParams, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "policy_sizes": policy.mlp.sizes,
        "value_sizes": value.sizes,
        "state_dependent_std": policy.state_dependent_std,
        **(extra or {}),
    }
    entries = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for k, a in enumerate(policy.arrays()):
        entries[f"policy/{k}"] = a
    for k, a in enumerate(value.arrays()):
        entries[f"value/{k}"] = a
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **entries)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Return ``(policy, value_params, meta)`` from :func:`save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        n_pol = 2 * (len(meta["policy_sizes"]) - 1) + 1
        n_val = 2 * (len(meta["value_sizes"]) - 1)
        pol = [np.array(data[f"policy/{k}"]) for k in range(n_pol)]
        val = [np.array(data[f"value/{k}"]) for k in range(n_val)]
    policy = GaussianPolicy(MlpParams.from_arrays(pol[:-1]), pol[-1], meta["state_dependent_std"])
    return policy, MlpParams.from_arrays(val), meta

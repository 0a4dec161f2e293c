"""Experiment configuration and its ``key = value`` file format.

One assignment per line, ``#`` starts a comment, and dotted prefixes group
keys::

    env.name = pointmass
    env.noise_std = 0.05
    agent.algorithm = dppo
    agent.gamma = 0.99
    agent.lambda = 0.95
    quantiles = 64
    seeds = 1, 2, 3, 4, 5

``env.*`` keys other than ``name`` are passed to the environment constructor.
``agent.gamma`` and ``agent.lambda`` fill :class:`~dgae.advantage.GaeParams`;
other ``agent.*`` keys map onto :class:`~dgae.agents.AgentConfig` fields.
``sweep.gamma`` / ``sweep.lambda`` hold default grids for ``dgae sweep``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from dgae.advantage import GaeParams
from dgae.agents import AgentConfig


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"field {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass
class ExperimentConfig:
    env_name: str = "pointmass"
    env_params: dict = field(default_factory=dict)
    agent: AgentConfig = field(default_factory=AgentConfig)
    n_quantiles: int = 64
    hidden: int = 64
    total_timesteps: int = 200_000
    eval_interval: int = 10_000
    eval_episodes: int = 10
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    output_dir: str = "runs"
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ConfigError("at least one seed is required", key="seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}", key="seeds")
        if self.n_quantiles < 1 or self.hidden < 1:
            raise ConfigError("quantiles and hidden must be positive")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigError("eval_interval and eval_episodes must be positive")

    def validate_budget(self):
        if self.total_timesteps < self.agent.rollout_length:
            raise ConfigError(
                f"total_timesteps={self.total_timesteps} is below one rollout "
                f"({self.agent.rollout_length})", key="total_timesteps")


_TOP_LEVEL = {
    "quantiles": "n_quantiles",
    "hidden": "hidden",
    "total_timesteps": "total_timesteps",
    "eval_interval": "eval_interval",
    "eval_episodes": "eval_episodes",
    "seeds": "seeds",
    "output_dir": "output_dir",
}
_AGENT_FIELDS = {f.name: f for f in dataclasses.fields(AgentConfig) if f.name != "gae"}


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_value(text: str):
    text = text.strip()
    if "," in text:
        return [_scalar(tok.strip()) for tok in text.split(",") if tok.strip()]
    return _scalar(text)


def _coerce(key, value, kind, line):
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise ValueError("expected true or false")
            return value
        if kind is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError("expected an integer")
            return int(float(value))
        if kind is float:
            if isinstance(value, (bool, list)) or value is None:
                raise ValueError("expected a number")
            return float(value)
        if kind is str:
            return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{exc} (got {value!r})", key=key, line=line) from None
    return value


_AGENT_TYPES = {
    "algorithm": str, "rollout_length": int, "ppo_clip": float, "ppo_epochs": int,
    "minibatch_size": int, "entropy_coef": float, "value_lr": float, "policy_lr": float,
    "normalize_advantages": bool, "kappa": float, "max_grad_norm": float,
    "log_std_init": float, "state_dependent_std": bool,
}


def parse_config(text: str) -> ExperimentConfig:
    top, env, agent, sweep = {}, {}, {}, {}
    gae = {}
    env_name = None
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value_text = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        if key in lines:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key=key, line=lineno)
        lines[key] = lineno
        value = parse_value(value_text)
        section, _, name = key.partition(".")
        if not name:
            if key not in _TOP_LEVEL:
                raise ConfigError("unknown field", key=key, line=lineno)
            attr = _TOP_LEVEL[key]
            if attr == "seeds":
                seeds = value if isinstance(value, list) else [value]
                top[attr] = [_coerce(key, s, int, lineno) for s in seeds]
            elif attr == "output_dir":
                top[attr] = str(value_text)
            else:
                top[attr] = _coerce(key, value, int, lineno)
        elif section == "env":
            if name == "name":
                env_name = str(value)
            else:
                env[name] = value
        elif section == "agent":
            if name in ("gamma", "lambda"):
                gae["lam" if name == "lambda" else "gamma"] = _coerce(key, value, float, lineno)
            elif name in _AGENT_TYPES:
                kind = _AGENT_TYPES[name]
                if value is None and name in ("normalize_advantages", "max_grad_norm"):
                    agent[name] = None
                else:
                    agent[name] = _coerce(key, value, kind, lineno)
            else:
                raise ConfigError("unknown agent field", key=key, line=lineno)
        elif section == "sweep":
            if name not in ("gamma", "lambda"):
                raise ConfigError("unknown sweep field", key=key, line=lineno)
            vals = value if isinstance(value, list) else [value]
            sweep[name] = [_coerce(key, v, float, lineno) for v in vals]
        else:
            raise ConfigError("unknown section", key=key, line=lineno)

    try:
        agent_cfg = AgentConfig(gae=GaeParams(**gae), **agent)
    except ValueError as exc:
        bad = next((k for k in lines if k.startswith("agent.")), None)
        raise ConfigError(str(exc), key=bad, line=lines.get(bad)) from None
    try:
        cfg = ExperimentConfig(env_name=env_name or "pointmass", env_params=env,
                               agent=agent_cfg, sweep=sweep, **top)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], key=exc.key,
                          line=lines.get(exc.key)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        # a trailing comma keeps one-element lists lists on re-parse
        body = ", ".join(_fmt(v) for v in value)
        return body + ("," if len(value) == 1 else "")
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    out = [f"env.name = {cfg.env_name}"]
    out += [f"env.{k} = {_fmt(v)}" for k, v in cfg.env_params.items()]
    a = cfg.agent
    out.append(f"agent.algorithm = {a.algorithm}")
    out.append(f"agent.gamma = {_fmt(a.gae.gamma)}")
    out.append(f"agent.lambda = {_fmt(a.gae.lam)}")
    for name in _AGENT_TYPES:
        if name != "algorithm":
            out.append(f"agent.{name} = {_fmt(getattr(a, name))}")
    for key, attr in _TOP_LEVEL.items():
        val = getattr(cfg, attr)
        out.append(f"{key} = {_fmt(val if attr != 'seeds' else list(val))}")
    for name in ("gamma", "lambda"):
        if name in cfg.sweep:
            out.append(f"sweep.{name} = {_fmt(list(cfg.sweep[name]))}")
    return "\n".join(out) + "\n"

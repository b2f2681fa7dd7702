"""Scenario configuration: flat ``key = value`` text with typed keys.

Precedence, lowest first: defaults, config file, ``RSPC_<KEY>`` environment
variables, ``--set key=value`` flags.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0-9"`` or ``"1,5,7"`` or a mix like ``"0-3,10"``."""
    out: list[int] = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError as exc:
            raise ConfigError(f"bad seed list {text!r}") from exc
    if not out:
        raise ConfigError("empty seed list")
    return tuple(out)


def format_seeds(seeds) -> str:
    seeds = list(seeds)
    if seeds and seeds == list(range(seeds[0], seeds[0] + len(seeds))) and len(seeds) > 1:
        return f"{seeds[0]}-{seeds[-1]}"
    return ",".join(str(s) for s in seeds)


BEHAVIORS = ("none", "crash", "silent", "equivocate", "join_leave")
DELAYS = ("fixed", "uniform")


@dataclass(frozen=True)
class ScenarioConfig:
    # planning
    N: int = 100
    f: int = 0
    T_policy: str = "optimal"
    W: int = 1000
    t_g: float = 1.0
    t_t: float = 1.0
    p_max: float = 1.0
    W_t: int = 1024
    # consensus and workload
    epoch_rounds: int = 0
    epochs: int = 1
    batch_size: int = 64
    accounts: int = 0
    tx_size: int = 250
    view_timeout_ms: int = 500
    # network and cost model
    delay: str = "uniform"
    delay_lo_us: int = 1000
    delay_hi_us: int = 5000
    msg_cost_us: int = 20
    tx_verify_us: int = 20
    xshard_timeout_factor: float = 4.0
    pair_threshold: int = 1000
    # epoch reset
    bandwidth_mbps: float = 100.0
    entry_bytes: int = 96
    joiners: int = 0
    # adversary
    adversary: str = "none"
    churn_rate: int = 0
    # run control
    seeds: tuple = (0,)
    max_sim_s: float = 60.0
    out: str = "out"

    def __post_init__(self):
        problems = []
        if self.N < 4:
            problems.append("N must be >= 4")
        if not 0 <= self.f < self.N:
            problems.append("f must satisfy 0 <= f < N")
        if self.W < 0 or self.batch_size < 1:
            problems.append("W >= 0 and batch_size >= 1 required")
        if self.t_g <= 0 or self.t_t < 0:
            problems.append("t_g > 0 and t_t >= 0 required")
        if self.delay not in DELAYS:
            problems.append(f"delay must be one of {DELAYS}")
        if not 0 <= self.delay_lo_us <= self.delay_hi_us:
            problems.append("need 0 <= delay_lo_us <= delay_hi_us")
        if self.adversary not in BEHAVIORS:
            problems.append(f"adversary must be one of {BEHAVIORS}")
        if not (self.T_policy in ("optimal", "max", "median")
                or (self.T_policy.startswith("fixed:") and self.T_policy[6:].isdigit())):
            problems.append("T_policy must be optimal, max, median or fixed:<T>")
        if self.tx_size > self.W_t:
            problems.append("tx_size must not exceed W_t (oversized routing is not simulated)")
        if self.view_timeout_ms <= 0 or self.xshard_timeout_factor <= 0:
            problems.append("timeouts must be positive")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.adversary == "none" and self.churn_rate:
            problems.append("churn_rate needs adversary=join_leave")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def n_accounts(self) -> int:
        return self.accounts or max(2 * self.W, 16)

    @property
    def mean_delay_us(self) -> float:
        return (self.delay_lo_us + self.delay_hi_us) / 2 if self.delay == "uniform" \
            else float(self.delay_lo_us)

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f_ in fields(self):
            v = getattr(self, f_.name)
            lines.append(f"{f_.name} = {format_seeds(v) if f_.name == 'seeds' else v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}


def _coerce(key: str, raw):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    if key == "seeds":
        return parse_seeds(raw) if isinstance(raw, str) else tuple(int(s) for s in raw)
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, bool):
            return str(raw).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return str(raw)


def parse_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = _coerce(k, v)
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                env: dict | None = None) -> ScenarioConfig:
    values: dict = {}
    if path is not None:
        try:
            values.update(parse_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    env = os.environ if env is None else env
    for key in _FIELDS:
        name = f"RSPC_{key.upper()}"
        if name in env:
            values[key] = _coerce(key, env[name])
    for k, v in (overrides or {}).items():
        values[k] = _coerce(k, v)
    try:
        return ScenarioConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

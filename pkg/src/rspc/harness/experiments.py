"""Figure sweeps at desk scale. Each experiment returns a :class:`Figure`."""
from __future__ import annotations

import logging
from typing import Callable

from .config import ConfigError, ScenarioConfig
from .metrics import Figure, Point, Series, check_safety, summarize
from .runner import simulate

log = logging.getLogger(__name__)

N_SWEEP = (100, 125, 150, 175, 200, 225, 250)
JOINERS = (5, 10, 15)
F_SWEEP = (5, 10, 15, 20, 25)
POLICIES = ("optimal", "median", "max")
MIN_SEEDS = 10


def _latency_ms(cfg: ScenarioConfig, seed: int) -> float:
    rep = summarize(simulate(cfg, seed).epochs)
    check_safety(rep, f"seed {seed}")
    return rep.latency_mean_us / 1000


def _throughput(cfg: ScenarioConfig, seed: int) -> float:
    rep = summarize(simulate(cfg, seed).epochs)
    check_safety(rep, f"seed {seed}")
    return rep.throughput_tps


def _reset_ms(cfg: ScenarioConfig, seed: int) -> float:
    result = simulate(cfg.replace(epochs=max(2, cfg.epochs)), seed)
    rep = summarize(result.epochs)
    check_safety(rep, f"seed {seed}")
    return result.epochs[-1].reset_delay_us / 1000


def sweep(name: str, cfg: ScenarioConfig, seeds, xs, vary: Callable, metric: Callable,
          x_label: str, y_label: str, series: tuple = ("rspc",)) -> Figure:
    fig = Figure(name, x_label, y_label, cfg, tuple(seeds))
    for s in series:
        out = Series(s)
        for x in xs:
            point_cfg = vary(cfg, s, x)
            values = [metric(point_cfg, seed) for seed in seeds]
            out.points.append(Point(x, values))
            log.info("%s %s x=%s mean=%.3f", name, s, x, out.points[-1].mean)
        fig.series.append(out)
    return fig


def latency_vs_n(cfg, seeds, xs=None):
    return sweep("latency_vs_n", cfg, seeds, xs or N_SWEEP,
                 lambda c, s, x: c.replace(N=x), _latency_ms, "N", "latency_ms")


def latency_vs_T_policy(cfg, seeds, xs=None):
    return sweep("latency_vs_T_policy", cfg, seeds, xs or (100, 150, 200, 250),
                 lambda c, s, x: c.replace(N=x, T_policy=s), _latency_ms, "N", "latency_ms",
                 POLICIES)


def reset_delay(cfg, seeds, xs=None):
    return sweep("reset_delay", cfg, seeds, xs or JOINERS,
                 lambda c, s, x: c.replace(joiners=x), _reset_ms, "joiners", "reset_delay_ms")


def throughput_vs_n(cfg, seeds, xs=None):
    return sweep("throughput_vs_n", cfg, seeds, xs or N_SWEEP,
                 lambda c, s, x: c.replace(N=x), _throughput, "N", "throughput_tps")


def throughput_vs_f(cfg, seeds, xs=None):
    adversary = cfg.adversary if cfg.adversary != "none" else "equivocate"
    return sweep("throughput_vs_f", cfg, seeds, xs or F_SWEEP,
                 lambda c, s, x: c.replace(f=x, adversary=adversary), _throughput, "f",
                 "throughput_tps")


def throughput_vs_T_policy(cfg, seeds, xs=None):
    return sweep("throughput_vs_T_policy", cfg, seeds, xs or (100, 150, 200, 250),
                 lambda c, s, x: c.replace(N=x, T_policy=s), _throughput, "N",
                 "throughput_tps", POLICIES)


EXPERIMENTS = {
    "latency_vs_n": latency_vs_n,
    "latency_vs_T_policy": latency_vs_T_policy,
    "reset_delay": reset_delay,
    "throughput_vs_n": throughput_vs_n,
    "throughput_vs_f": throughput_vs_f,
    "throughput_vs_T_policy": throughput_vs_T_policy,
}


def run_experiment(name: str, cfg: ScenarioConfig, seeds=None, xs=None) -> Figure:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    seeds = tuple(seeds if seeds is not None else cfg.seeds)
    if len(seeds) < MIN_SEEDS:
        log.warning("%s: %d seeds per point (figures use at least %d)", name, len(seeds),
                    MIN_SEEDS)
    return EXPERIMENTS[name](cfg, seeds, xs)

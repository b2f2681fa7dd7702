"""Partition-count planning: security bounds, running-time curve and
hypergeometric committee-failure probabilities."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

MIN_COMMITTEE = 4


class NoFeasiblePartition(ValueError):
    pass


@dataclass(frozen=True)
class PlannerInput:
    N: int
    f: int
    t_g: float
    t_t: float
    W: int
    p_max: float = 1.0

    def __post_init__(self):
        if self.N < MIN_COMMITTEE:
            raise ValueError("N must be >= 4")
        if not 0 <= self.f < self.N:
            raise ValueError("f must satisfy 0 <= f < N")
        if self.t_g <= 0:
            raise ValueError("t_g must be positive")
        if self.t_t < 0 or self.W < 0:
            raise ValueError("t_t and W must be non-negative")
        if not 0.0 <= self.p_max <= 1.0:
            raise ValueError("p_max must lie in [0, 1]")


@dataclass(frozen=True)
class PlanResult:
    T: int
    T_n: int
    f_max_per_committee: int
    F_value: float
    committee_failure_prob: float


def partition_size(N: int, T: int) -> int:
    """Nodes per committee, ``floor(N / T)``. Callers check the >= 4 bound."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return N // T


def max_faulty(n: int) -> int:
    return (n - 1) // 3


def is_feasible(N: int, f: int, T: int) -> bool:
    T_n = partition_size(N, T)
    if T_n < MIN_COMMITTEE:
        return False
    if f > max_faulty(T_n):
        return False
    if f > 0 and T > N // (3 * f):
        return False
    return True


def security_feasible_set(N: int, f: int) -> list[int]:
    """Partition counts whose committees survive every placement of the f faulty nodes."""
    return [T for T in range(1, N // MIN_COMMITTEE + 1) if is_feasible(N, f, T)]


def complexity(T: int, t_g: float, t_t: float, W: int) -> float:
    """Estimated epoch running time ``t_g * T**2 + t_t * W / T``."""
    if T <= 0:
        raise ValueError("T must be positive")
    return t_g * T * T + t_t * W / T


def performance_optimum(t_g: float, t_t: float, W: int) -> float:
    """Real-valued zero of dF/dT, ``(t_t * W / (2 t_g)) ** (1/3)``."""
    if t_g <= 0:
        raise ValueError("t_g must be positive")
    return (t_t * W / (2.0 * t_g)) ** (1.0 / 3.0)


def _check_hyper(N: int, f: int, T_n: int, k: int | None = None):
    if not (0 <= f <= N and 0 <= T_n <= N):
        raise ValueError(f"invalid hypergeometric parameters N={N} f={f} T_n={T_n}")
    if k is not None and not 0 <= k <= min(f, T_n):
        raise ValueError(f"k={k} outside [0, min(f, T_n)]")


def failure_probability_exact(N: int, f: int, T_n: int, k: int) -> Fraction:
    _check_hyper(N, f, T_n, k)
    return Fraction(math.comb(f, k) * math.comb(N - f, T_n - k), math.comb(N, T_n))


def failure_probability(N: int, f: int, T_n: int, k: int) -> float:
    """P(exactly k faulty nodes in a committee of T_n drawn from N with f faulty)."""
    return float(failure_probability_exact(N, f, T_n, k))


@lru_cache(maxsize=65536)
def _tail_exact(N: int, f: int, T_n: int) -> Fraction:
    lo = max_faulty(T_n) + 1
    hi = min(f, T_n)
    if lo > hi:
        return Fraction(0)
    # N - f < T_n - k terms vanish through math.comb returning 0
    num = sum(math.comb(f, k) * math.comb(N - f, T_n - k) for k in range(lo, hi + 1))
    return Fraction(num, math.comb(N, T_n))


def committee_failure_probability(N: int, f: int, T_n: int) -> float:
    """P(a committee of T_n holds more than floor((T_n-1)/3) faulty nodes)."""
    _check_hyper(N, f, T_n)
    return float(_tail_exact(N, f, T_n))


def plan_for(N: int, f: int, T: int, t_g: float, t_t: float, W: int) -> PlanResult:
    T_n = partition_size(N, T)
    return PlanResult(T=T, T_n=T_n, f_max_per_committee=max_faulty(T_n),
                      F_value=complexity(T, t_g, t_t, W),
                      committee_failure_prob=committee_failure_probability(N, f, T_n))


def candidate_partitions(inp: PlannerInput) -> list[int]:
    return [T for T in security_feasible_set(inp.N, inp.f)
            if committee_failure_probability(inp.N, inp.f, partition_size(inp.N, T)) <= inp.p_max]


def choose_partition_size(inp: PlannerInput) -> PlanResult:
    """Feasible T closest to the performance optimum; the smaller T wins ties."""
    candidates = candidate_partitions(inp)
    if not candidates:
        raise NoFeasiblePartition(f"no partition count is safe for N={inp.N}, f={inp.f}, "
                                  f"p_max={inp.p_max}")
    t_star = performance_optimum(inp.t_g, inp.t_t, inp.W)
    T = min(candidates, key=lambda t: (abs(t - t_star), t))
    return plan_for(inp.N, inp.f, T, inp.t_g, inp.t_t, inp.W)


def choose_by_policy(inp: PlannerInput, policy: str) -> PlanResult:
    """Partition count under a named policy: optimal, max, median or fixed:<T>."""
    if policy == "optimal":
        return choose_partition_size(inp)
    if policy.startswith("fixed"):
        T = int(policy.split(":", 1)[1])
        if not is_feasible(inp.N, inp.f, T):
            raise NoFeasiblePartition(f"fixed T={T} violates the committee bounds")
        return plan_for(inp.N, inp.f, T, inp.t_g, inp.t_t, inp.W)
    candidates = candidate_partitions(inp)
    if not candidates:
        raise NoFeasiblePartition(f"no partition count is safe for N={inp.N}, f={inp.f}")
    if policy == "max":
        T = candidates[-1]
    elif policy == "median":
        T = candidates[(len(candidates) - 1) // 2]
    else:
        raise ValueError(f"unknown partition policy {policy!r}")
    return plan_for(inp.N, inp.f, T, inp.t_g, inp.t_t, inp.W)


def plan_table(inp: PlannerInput) -> list[dict]:
    """One row per T in [1, N/4]: the data behind the ``plan`` CSV."""
    chosen = None
    try:
        chosen = choose_partition_size(inp).T
    except NoFeasiblePartition:
        pass
    rows = []
    for T in range(1, inp.N // MIN_COMMITTEE + 1):
        T_n = partition_size(inp.N, T)
        rows.append({
            "T": T,
            "T_n": T_n,
            "f_max": max_faulty(T_n),
            "F_T": complexity(T, inp.t_g, inp.t_t, inp.W),
            "P_fail": committee_failure_probability(inp.N, inp.f, T_n),
            "feasible": is_feasible(inp.N, inp.f, T),
            "chosen": T == chosen,
        })
    return rows

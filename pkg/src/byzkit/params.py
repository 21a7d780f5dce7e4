"""Protocol constants, per-epoch thresholds and per-node state records.

All logarithms are base 2. Thresholds are kept as reals and compared
against integer counts directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# Comparisons against configuration boundaries tolerate float rounding,
# e.g. 0.25 - 0.1 and 0.1 ** 2 are not exact in binary.
_BOUNDARY_TOL = 1e-12


class ConfigError(ValueError):
    """Raised when a parameter set violates a model constraint."""


def log2n(n: int) -> float:
    """log2 of the node count, floored at 1 so tiny systems stay sane."""
    return max(1.0, math.log2(n))


def id_bits(n: int, k: int) -> int:
    """Bits needed to carry one node ID drawn from [1, n^k]."""
    return math.ceil(k * log2n(n))


@dataclass(frozen=True)
class ProtocolParams:
    """Global configuration shared by every node.

    ``activation_slack`` widens the window around the expected active
    count used for ``max_a``/``min_a``. ``None`` means the analysis slack
    ``epsilon`` itself; at simulation scale a wider window is needed for
    the light test to hold reliably (see the README).
    """

    n: int
    t: int = 0
    epsilon0: float = 0.1
    epsilon: float = 0.01
    C: float = 4.0
    c_promise: float = 8.0
    k: int = 2
    master_seed: int = 0
    activation_slack: float | None = None
    kappa: float = 1.0
    size_rule: str = "ln6"
    king_phases: int = 10

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.n < 2:
            raise ConfigError(f"n must be at least 2, got {self.n}")
        if self.t < 0:
            raise ConfigError(f"t must be non-negative, got {self.t}")
        if self.epsilon0 <= 0:
            raise ConfigError(f"epsilon0 must be positive, got {self.epsilon0}")
        bound = (0.25 - self.epsilon0) * self.n
        if self.t > bound + _BOUNDARY_TOL * self.n:
            raise ConfigError(
                f"t={self.t} violates t <= (1/4 - epsilon0) * n = {bound:g}"
            )
        if not 0 < self.epsilon:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.epsilon > self.epsilon0**2 + _BOUNDARY_TOL:
            raise ConfigError(
                f"epsilon={self.epsilon} violates epsilon < epsilon0^2 = {self.epsilon0**2:g}"
            )
        if self.C <= 0 or self.c_promise <= 0:
            raise ConfigError("C and c_promise must be positive")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must fit in 64 bits")
        if self.activation_slack is not None and self.activation_slack < 0:
            raise ConfigError("activation_slack must be non-negative")
        if self.size_rule not in ("log", "ln6"):
            raise ConfigError(f"size_rule must be 'log' or 'ln6', got {self.size_rule!r}")
        if self.kappa <= 0 or self.king_phases < 1:
            raise ConfigError("kappa and king_phases must be positive")

    @property
    def slack(self) -> float:
        return self.epsilon if self.activation_slack is None else self.activation_slack

    @property
    def log_n(self) -> float:
        return log2n(self.n)

    @property
    def id_universe(self) -> int:
        return self.n**self.k

    @property
    def query_count(self) -> int:
        """Ports probed per validated ID in the query step."""
        return math.ceil(self.C * self.log_n)

    @property
    def promise_samples(self) -> int:
        return math.ceil(self.c_promise * self.log_n)

    @property
    def doubling_limit(self) -> float:
        """p must stay below this for another epoch to be attempted."""
        return 1.0 / (self.C * self.log_n)


@dataclass(frozen=True)
class EpochParams:
    epoch_index: int
    p: float
    max_a: float
    min_a: float
    low: float
    high: float
    beta: float
    delta: float
    light_threshold: float


def derive_epoch_params(params: ProtocolParams, epoch_index: int) -> EpochParams:
    """Evaluate the per-epoch thresholds for ``epoch_index`` (1-based)."""
    if epoch_index < 1:
        raise ValueError(f"epoch_index must be >= 1, got {epoch_index}")
    n, t, eps = params.n, params.t, params.epsilon
    p = min(params.C * params.log_n / n * 2.0 ** (epoch_index - 1), 1.0)
    slack = params.slack
    max_a = (1 + slack) * p * (n - t)
    min_a = (1 - slack) * p * (n - t)
    low = n - 2 * t - eps * n
    high = low + t
    light_threshold = max_a + eps * p * n
    beta = (1 - eps) * (low - t) / light_threshold
    delta = (1 - eps) * (low - t) / n
    return EpochParams(
        epoch_index=epoch_index,
        p=p,
        max_a=max_a,
        min_a=min_a,
        low=low,
        high=high,
        beta=beta,
        delta=delta,
        light_threshold=light_threshold,
    )


def is_light(received_active_count: int, ep: EpochParams) -> bool:
    if received_active_count < 0:
        raise ValueError("count must be non-negative")
    return received_active_count <= ep.light_threshold


@dataclass(frozen=True)
class DecisionTuple:
    ready_out: int
    value: int


@dataclass
class NodeState:
    """Snapshot of one good node's protocol state."""

    id: int
    input_bit: int
    is_active: bool = False
    is_light: bool = False
    s_x: frozenset[int] = frozenset()
    n_x: int = 0
    ready_in: int = 0
    ready_out: int = 0
    value: int = 0
    decided: bool = False
    port_directory: dict[int, int] = field(default_factory=dict)

"""Monte Carlo of the ion -> frequency conversion -> MZI -> detector chain.

Every attempt emits at most one photon. A single uniform draw decides whether
it is detected at port 1, at port 2, on the back-window reference PMT, or lost.
The arrival time follows the emission shape, measured from the trigger at
the excitation pulse. Dark counts are a homogeneous Poisson process over the
whole attempt period, independently on every channel.

Random numbers come from counter-based Philox substreams, one per block of
``BLOCK_ATTEMPTS`` attempts, keyed by ``(master_seed, block index)``. Blocks
are merged in attempt order, so a stream depends only on the seed, the
config and the attempt count, never on how many workers produced it.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .xfer import CircuitModel

CH_REFERENCE, CH_PORT1, CH_PORT2 = 0, 1, 2
CHANNELS = (CH_REFERENCE, CH_PORT1, CH_PORT2)
BLOCK_ATTEMPTS = 1 << 16

DEFAULT_REP_RATE_HZ = 780.64e3
DEFAULT_WAIT_NS = 320.0
# 1 - exp(-32 / tau) = 0.75
DEFAULT_TAU_NS = 32.0 / math.log(4.0)

# Second QFC stage: 25 % overall, including these passive elements.
QFC2_FILTER_TRANSMISSION = 0.8
QFC2_ETALON_TRANSMISSION = 0.6


@dataclass(frozen=True)
class AttemptCycle:
    """One photon-production attempt, measured from the excitation trigger.

    Segments in trigger order: excite (emission happens here), cool, pump,
    then the dark wait with all lasers off before the next excitation.
    """

    rep_rate_hz: float = DEFAULT_REP_RATE_HZ
    wait_ns: float = DEFAULT_WAIT_NS
    cool_ns: float = 500.0
    pump_ns: float = 261.0
    excite_ns: float = 200.0

    def __post_init__(self):
        if not self.rep_rate_hz > 0:
            raise ConfigError(f"rep_rate_hz must be positive, got {self.rep_rate_hz}")
        for name in ("wait_ns", "cool_ns", "pump_ns", "excite_ns"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")
        total = self.cool_ns + self.pump_ns + self.excite_ns + self.wait_ns
        if abs(total - self.period_ns) > 1.0:
            raise ConfigError(
                f"cycle segments sum to {total:.3f} ns but the period is {self.period_ns:.3f} ns"
            )

    @property
    def period_ns(self) -> float:
        return 1e9 / self.rep_rate_hz


@dataclass(frozen=True)
class EmissionShape:
    """Arrival-time density of a detected photon relative to the trigger.

    ``exponential``: ``t0 + Exp(tau)``. ``rise_decay``: ``t0 + Exp(rise) + Exp(tau)``,
    the convolution of a rise and a decay. Both are truncated to the attempt
    period and renormalised.
    """

    kind: str = "exponential"
    tau_ns: float = DEFAULT_TAU_NS
    rise_ns: float = 0.0
    t0_ns: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exponential", "rise_decay"):
            raise ConfigError(f"unknown emission kind {self.kind!r}")
        if not self.tau_ns > 0:
            raise ConfigError(f"tau_ns must be positive, got {self.tau_ns}")
        if self.kind == "rise_decay" and not self.rise_ns > 0:
            raise ConfigError("rise_decay emission needs rise_ns > 0")
        if not self.t0_ns >= 0:
            raise ConfigError("t0_ns must be >= 0")

    def _raw_cdf(self, t):
        x = np.maximum(np.asarray(t, dtype=float) - self.t0_ns, 0.0)
        if self.kind == "exponential":
            return -np.expm1(-x / self.tau_ns)
        r, tau = self.rise_ns, self.tau_ns
        if math.isclose(r, tau):
            return 1.0 - np.exp(-x / tau) * (1.0 + x / tau)
        return 1.0 - (tau * np.exp(-x / tau) - r * np.exp(-x / r)) / (tau - r)

    def _raw_pdf(self, t):
        t = np.asarray(t, dtype=float)
        x = t - self.t0_ns
        xp = np.maximum(x, 0.0)
        if self.kind == "exponential":
            out = np.exp(-xp / self.tau_ns) / self.tau_ns
        elif math.isclose(self.rise_ns, self.tau_ns):
            out = xp * np.exp(-xp / self.tau_ns) / self.tau_ns**2
        else:
            r, tau = self.rise_ns, self.tau_ns
            out = (np.exp(-xp / tau) - np.exp(-xp / r)) / (tau - r)
        return np.where(x >= 0, out, 0.0)

    def cdf(self, t, t_max: float | None = None):
        """Cumulative probability, normalised on ``[0, t_max)`` when given."""
        c = self._raw_cdf(t)
        if t_max is None:
            return c
        return np.minimum(c / self._raw_cdf(t_max), 1.0)

    def pdf(self, t, t_max: float | None = None):
        """Probability density (1/ns), normalised on ``[0, t_max)`` when given."""
        p = self._raw_pdf(t)
        if t_max is None:
            return p
        return np.where(np.asarray(t) < t_max, p / self._raw_cdf(t_max), 0.0)


@dataclass(frozen=True)
class PipelineBudget:
    """Per-attempt probabilities along the photon path.

    ``p_emit_collect`` covers emission into the front window plus collection
    and polarisation filtering; ``p_ref_collect`` is the same for the back
    window including the PMT efficiency. ``qfc2`` already contains the
    tunable filter and etalon transmissions.
    """

    p_emit_collect: float = 0.1
    p_ref_collect: float = 0.05
    qfc1: float = 0.20
    qfc2: float = 0.25
    eta1: float = 1.0
    eta2: float = 1.0 / 1.13
    dark_rate_hz: tuple[float, float, float] = (50.0, 100.0, 100.0)

    def __post_init__(self):
        object.__setattr__(self, "dark_rate_hz", tuple(float(x) for x in self.dark_rate_hz))
        for name in ("p_emit_collect", "p_ref_collect"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("qfc1", "qfc2", "eta1", "eta2"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if len(self.dark_rate_hz) != 3 or any(not (r >= 0 and math.isfinite(r)) for r in self.dark_rate_hz):
            raise ConfigError(f"dark_rate_hz needs three non-negative rates, got {self.dark_rate_hz}")

    @property
    def efficiency_ratio(self) -> float:
        return self.eta1 / self.eta2

    @property
    def chip_input_probability(self) -> float:
        """Probability per attempt that a converted photon reaches the chip input."""
        return self.p_emit_collect * self.qfc1 * self.qfc2


@dataclass(frozen=True)
class ExperimentConfig:
    cycle: AttemptCycle
    emission: EmissionShape
    budget: PipelineBudget
    model: CircuitModel
    current_mA: float = 0.0

    def __post_init__(self):
        self.model.calib.check_current(self.current_mA)
        p1, p2 = per_port_click_probability(self.budget, self.model, self.current_mA)
        if p1 + p2 + self.budget.p_ref_collect > 1.0:
            raise ConfigError("per-attempt detection probabilities sum above 1")

    def to_dict(self) -> dict:
        return {
            "cycle": asdict(self.cycle),
            "emission": asdict(self.emission),
            "budget": asdict(self.budget),
            "model": self.model.to_dict(),
            "current_mA": float(self.current_mA),
        }

    def sha256(self) -> str:
        return config_sha256(self.to_dict())


def config_sha256(d: dict) -> str:
    """Hash of canonical JSON (sorted keys, no whitespace, repr floats)."""
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class TimeTagStream:
    """Detection events sorted by ``(attempt, t_ns, channel)``."""

    channel: np.ndarray
    attempt: np.ndarray
    t_ns: np.ndarray
    seed: int
    n_attempts: int
    config_sha256: str
    period_ns: float = field(default=1e9 / DEFAULT_REP_RATE_HZ)

    def __len__(self):
        return len(self.t_ns)

    def times(self, channel: int) -> np.ndarray:
        return self.t_ns[self.channel == channel]

    def counts(self) -> dict[int, int]:
        return {ch: int(np.count_nonzero(self.channel == ch)) for ch in CHANNELS}

    def same_events(self, other: "TimeTagStream") -> bool:
        return (
            np.array_equal(self.channel, other.channel)
            and np.array_equal(self.attempt, other.attempt)
            and np.array_equal(self.t_ns, other.t_ns)
        )


def sample_emission_time(shape: EmissionShape, rng: np.random.Generator, size=None, t_max: float | None = None):
    """Draw arrival times (ns) from ``shape``, truncated below ``t_max`` when given."""
    n = 1 if size is None else size
    tau = shape.tau_ns
    if shape.kind == "exponential":
        u = rng.random(n)
        if t_max is None:
            t = shape.t0_ns - tau * np.log1p(-u)
        else:
            span = -np.expm1(-(t_max - shape.t0_ns) / tau)
            t = shape.t0_ns - tau * np.log1p(-u * span)
    else:
        t = shape.t0_ns + rng.exponential(shape.rise_ns, n) + rng.exponential(tau, n)
        if t_max is not None:
            bad = np.flatnonzero(t >= t_max)
            while bad.size:
                t[bad] = shape.t0_ns + rng.exponential(shape.rise_ns, bad.size) + rng.exponential(tau, bad.size)
                bad = bad[t[bad] >= t_max]
    return float(t[0]) if size is None else t


def per_port_click_probability(budget: PipelineBudget, model: CircuitModel, current_mA: float) -> tuple[float, float]:
    """Per-attempt probability of a signal click at port 1 and at port 2."""
    f1, f2 = model.fractions(current_mA)
    base = budget.chip_input_probability * model.loss_L
    p1, p2 = base * f1 * budget.eta1, base * f2 * budget.eta2
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        raise ConfigError(f"click probabilities ({p1}, {p2}) outside [0, 1]")
    return p1, p2


def expected_rates(config: ExperimentConfig) -> np.ndarray:
    """Expected counts per second on channels (reference, port 1, port 2)."""
    p1, p2 = per_port_click_probability(config.budget, config.model, config.current_mA)
    rep = config.cycle.rep_rate_hz
    dark = np.asarray(config.budget.dark_rate_hz)
    return np.array([rep * config.budget.p_ref_collect, rep * p1, rep * p2]) + dark


def _block_rng(master_seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


def _simulate_block(config: ExperimentConfig, thresholds, master_seed: int, block: int, start: int, count: int):
    rng = _block_rng(master_seed, block)
    period = config.cycle.period_ns

    u = rng.random(count)
    outcome = np.searchsorted(thresholds, u, side="right")  # 0: port 1, 1: port 2, 2: reference, 3: none
    hit = np.flatnonzero(outcome < 3)
    channel = np.array([CH_PORT1, CH_PORT2, CH_REFERENCE], dtype=np.int8)[outcome[hit]]
    attempt = hit.astype(np.int64) + start
    t = sample_emission_time(config.emission, rng, size=hit.size, t_max=period)

    chans, atts, ts = [channel], [attempt], [t]
    for ch, rate in zip(CHANNELS, config.budget.dark_rate_hz):
        n_dark = rng.poisson(rate * period * 1e-9 * count) if rate > 0 else 0
        chans.append(np.full(n_dark, ch, dtype=np.int8))
        atts.append(rng.integers(0, count, n_dark).astype(np.int64) + start)
        ts.append(rng.random(n_dark) * period)

    channel = np.concatenate(chans)
    attempt = np.concatenate(atts)
    # integer picoseconds / 1000 is the same double "%.3f" parses back to
    t = np.floor(np.concatenate(ts) * 1000.0) / 1000.0
    order = np.lexsort((channel, t, attempt))
    return channel[order], attempt[order], t[order]


def run_experiment(
    config: ExperimentConfig,
    master_seed: int,
    n_attempts: int,
    *,
    workers: int = 1,
    config_hash: str | None = None,
) -> TimeTagStream:
    """Simulate ``n_attempts`` attempts and return the merged, sorted time-tag stream."""
    n_attempts = int(n_attempts)
    if n_attempts < 1:
        raise ConfigError(f"n_attempts must be >= 1, got {n_attempts}")
    if not 0 <= int(master_seed) < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    p1, p2 = per_port_click_probability(config.budget, config.model, config.current_mA)
    thresholds = np.cumsum([p1, p2, config.budget.p_ref_collect])

    blocks = [(b, s, min(BLOCK_ATTEMPTS, n_attempts - s)) for b, s in enumerate(range(0, n_attempts, BLOCK_ATTEMPTS))]

    def job(blk):
        return _simulate_block(config, thresholds, master_seed, *blk)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, blocks))
    else:
        parts = [job(b) for b in blocks]

    return TimeTagStream(
        channel=np.concatenate([p[0] for p in parts]),
        attempt=np.concatenate([p[1] for p in parts]),
        t_ns=np.concatenate([p[2] for p in parts]),
        seed=int(master_seed),
        n_attempts=n_attempts,
        config_sha256=config_hash or config.sha256(),
        period_ns=config.cycle.period_ns,
    )

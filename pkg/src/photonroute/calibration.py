"""Recover coupler ratios, the heater current-to-phase map and loss from a few anchors.

The heater is thermo-optic, so phase follows dissipated power::

    phi(I) = phi0 - c * I**2

Coupler ratios come from the two port extinction ratios in closed form. The
phase map is then fitted to operating-point anchors ("port 1 at maximum",
"50/50 split", ...) by a fixed grid scan followed by derivative-free local
refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from .errors import DomainError, FitError, InfeasibleFitError, UnderdeterminedFitError
from .xfer import CircuitModel, CouplerSpec, extinction_powers, wrap_phase

PORT1_MAX = "port1_max"
PORT2_NEAR_MAX = "port2_near_max"
SPLIT_50_50 = "split_50_50"
PORT_FRACTION = "port_fraction"
ANCHOR_KINDS = (PORT1_MAX, PORT2_NEAR_MAX, SPLIT_50_50, PORT_FRACTION)

# Amplitudes carry ~eps relative error, so powers below eps^2 * max are exact nulls.
_NULL_POWER = np.finfo(float).eps ** 2


@dataclass(frozen=True)
class PhaseCalibration:
    """Quadratic current-to-phase map ``phi(I) = phi0 - c I^2`` on ``[0, i_max]``."""

    phi0: float
    c: float
    i_max: float
    residuals: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not math.isfinite(self.phi0) or not math.isfinite(self.c):
            raise DomainError("phi0 and c must be finite")
        if self.c < 0:
            raise DomainError(f"thermo-optic coefficient must be >= 0, got {self.c}")
        if not self.i_max > 0:
            raise DomainError(f"i_max must be positive, got {self.i_max}")

    def check_current(self, current_mA: float) -> float:
        current_mA = float(current_mA)
        if not (0.0 <= current_mA <= self.i_max * (1 + 1e-12)) or not math.isfinite(current_mA):
            raise DomainError(f"current {current_mA} mA outside heater range [0, {self.i_max}] mA")
        return current_mA

    def unwrapped_phase(self, current_mA: float) -> float:
        current_mA = self.check_current(current_mA)
        return self.phi0 - self.c * current_mA * current_mA

    def phase(self, current_mA: float) -> float:
        """Phase at ``current_mA`` reduced to ``[0, 2*pi)``."""
        return wrap_phase(self.unwrapped_phase(current_mA))

    @property
    def rss(self) -> float:
        return float(sum(r.residual**2 for r in self.residuals if r.kind != PORT2_NEAR_MAX))


@dataclass(frozen=True)
class Anchor:
    """One published operating point: a heater current and what was seen there.

    ``value`` is the port-1 fraction and is only used by ``port_fraction`` anchors.
    """

    current_mA: float
    kind: str
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ANCHOR_KINDS:
            raise DomainError(f"unknown anchor kind {self.kind!r}; expected one of {ANCHOR_KINDS}")
        if self.kind == PORT_FRACTION and (self.value is None or not 0.0 <= self.value <= 1.0):
            raise DomainError("port_fraction anchor needs a value in [0, 1]")
        if not self.current_mA >= 0:
            raise DomainError(f"anchor current must be >= 0, got {self.current_mA}")

    @property
    def exact(self) -> bool:
        return self.kind != PORT2_NEAR_MAX


@dataclass(frozen=True)
class AnchorResidual:
    current_mA: float
    kind: str
    residual: float


DEVICE_ANCHORS = (
    Anchor(0.0, PORT1_MAX),
    Anchor(11.05, SPLIT_50_50),
    Anchor(16.6, PORT2_NEAR_MAX),
)
DEVICE_EXTINCTION_DB = (10.2, 7.6)
DEVICE_I_MAX_MA = 16.6
DEVICE_LOSS_L = 0.31


@dataclass(frozen=True)
class SweepCurve:
    """Absolute port transmissions sampled along a heater-current sweep."""

    current_mA: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    def __len__(self):
        return len(self.current_mA)


# -- couplers ---------------------------------------------------------------


def _db_to_linear(er_db: float) -> float:
    er_db = float(er_db)
    if math.isnan(er_db) or er_db <= 0:
        raise DomainError(f"extinction ratio must be > 0 dB, got {er_db}")
    return math.inf if math.isinf(er_db) else 10.0 ** (er_db / 10.0)


def model_extinction_db(c1: CouplerSpec, c2: CouplerSpec) -> tuple[float, float]:
    """Port-1 and port-2 extinction ratios (dB) over a full fringe."""
    out = []
    for hi, lo in extinction_powers(c1, c2).values():
        out.append(math.inf if lo <= _NULL_POWER * hi else 10.0 * math.log10(hi / lo))
    return out[0], out[1]


def _is_canonical(r1: float, r2: float, tol: float = 1e-12) -> bool:
    # tol absorbs round-off when a coupler sits exactly at 50/50
    return r1 <= 0.5 + tol and r1 <= r2 + tol


def fit_couplers_from_extinction(er1_db: float, er2_db: float) -> tuple[CouplerSpec, CouplerSpec]:
    """Coupler ratios reproducing the port-1 and port-2 extinction ratios.

    Writing ``t = cos(alpha)``, ``k = sin(alpha)`` for each coupler, the
    extinctions are ``cos^2(a - b) / cos^2(a + b)`` and
    ``sin^2(a + b) / sin^2(a - b)``, which invert in closed form. Four
    observationally equivalent solutions exist (swap the couplers; exchange
    t and k globally). The one returned has ``r1 <= 0.5`` and ``r1 <= r2``; when
    two pairs qualify, the one with ``r1`` nearest 0.5.
    """
    e1, e2 = _db_to_linear(er1_db), _db_to_linear(er2_db)
    if math.isinf(e1) and math.isinf(e2):
        return CouplerSpec(0.5), CouplerSpec(0.5)
    if math.isinf(e1) or math.isinf(e2):
        raise InfeasibleFitError(
            f"no coupler pair gives extinction ({er1_db}, {er2_db}) dB: one port infinite needs both infinite"
        )

    x = (e2 - 1.0) / (e1 * e2 - 1.0)  # cos^2(alpha + beta)
    y = e1 * x  # cos^2(alpha - beta)
    if not (0.0 < x < y < 1.0):
        raise InfeasibleFitError(f"extinction pair ({er1_db}, {er2_db}) dB admits no r in (0, 1)")
    u0 = math.acos(math.sqrt(x))
    v0 = math.acos(math.sqrt(y))

    candidates = []
    for u in (u0, math.pi - u0):
        for v in (v0, -v0):
            alpha, beta = 0.5 * (u + v), 0.5 * (u - v)
            r1, r2 = math.sin(alpha) ** 2, math.sin(beta) ** 2
            if 0.0 < r1 < 1.0 and 0.0 < r2 < 1.0:
                candidates.append((r1, r2))
    canonical = [c for c in candidates if _is_canonical(*c)]
    if not canonical:
        raise InfeasibleFitError(f"extinction pair ({er1_db}, {er2_db}) dB admits no r in (0, 1)")
    # two pairs can pass (e.g. 0.178/0.562 and 0.438/0.822); prefer r1 nearest 50/50
    r1, r2 = max(canonical, key=lambda c: (c[0], -c[1]))
    c1, c2 = CouplerSpec(r1), CouplerSpec(r2)

    got1, got2 = model_extinction_db(c1, c2)
    rel1 = abs(10 ** (got1 / 10) / e1 - 1.0)
    rel2 = abs(10 ** (got2 / 10) / e2 - 1.0)
    if rel1 > 1e-9 or rel2 > 1e-9:
        raise InfeasibleFitError(
            f"closed-form couplers ({r1:.6g}, {r2:.6g}) miss the targets (relative errors {rel1:.2e}, {rel2:.2e})"
        )
    return c1, c2


def coupler_solutions(c1: CouplerSpec, c2: CouplerSpec) -> list[tuple[CouplerSpec, CouplerSpec]]:
    """All four coupler pairs with the same port-power fringes as ``(c1, c2)``."""
    a, b = c1.r, c2.r
    return [
        (CouplerSpec(a), CouplerSpec(b)),
        (CouplerSpec(b), CouplerSpec(a)),
        (CouplerSpec(1 - a), CouplerSpec(1 - b)),
        (CouplerSpec(1 - b), CouplerSpec(1 - a)),
    ]


# -- phase map --------------------------------------------------------------


def _fractions(couplers, phi):
    """Vectorised port-1 / port-2 fractions of the lossless MZI."""
    c1, c2 = couplers
    a, b = c1.t * c2.t, c1.k * c2.k
    c, d = c1.k * c2.t, c1.t * c2.k
    cos_phi = np.cos(phi)
    f1 = a * a + b * b - 2.0 * a * b * cos_phi
    f2 = c * c + d * d + 2.0 * a * b * cos_phi
    return f1, f2


def _anchor_terms(anchors, couplers, phi0, c):
    """Residuals of the exact anchors and shortfalls of the near-max anchors.

    ``phi0`` and ``c`` broadcast against each other; the anchor axis is last.
    """
    (hi1, _), (hi2, _) = extinction_powers(*couplers).values()
    exact, near = [], []
    for an in anchors:
        phi = phi0 - c * an.current_mA**2
        f1, f2 = _fractions(couplers, phi)
        if an.kind == PORT1_MAX:
            exact.append(f1 - hi1)
        elif an.kind == SPLIT_50_50:
            exact.append(f1 - 0.5)
        elif an.kind == PORT_FRACTION:
            exact.append(f1 - an.value)
        else:
            near.append(hi2 - f2)
    return exact, near


def _objective(anchors, couplers, phi0, c):
    exact, _ = _anchor_terms(anchors, couplers, phi0, c)
    return sum(np.square(r) for r in exact)


def _near_shortfall(anchors, couplers, phi0, c):
    _, near = _anchor_terms(anchors, couplers, phi0, c)
    return float(sum(near)) if near else 0.0


def _grid_minima(values: np.ndarray, periodic_axis0: bool) -> list[tuple[int, ...]]:
    """Indices of grid points no larger than any of their neighbours."""
    if values.ndim == 1:
        v = np.pad(values, 1, constant_values=np.inf)
        mask = (values <= v[:-2]) & (values <= v[2:])
        return [(int(i),) for i in np.flatnonzero(mask)]
    mode = "wrap" if periodic_axis0 else "edge"
    v = np.pad(values, ((1, 1), (0, 0)), mode=mode)
    v = np.pad(v, ((0, 0), (1, 1)), constant_values=np.inf)
    mask = np.ones_like(values, dtype=bool)
    n0, n1 = values.shape
    for d0 in (-1, 0, 1):
        for d1 in (-1, 0, 1):
            if d0 == 0 and d1 == 0:
                continue
            mask &= values <= v[1 + d0 : 1 + d0 + n0, 1 + d1 : 1 + d1 + n1]
    return [tuple(int(i) for i in ix) for ix in np.argwhere(mask)]


def fit_phase_calibration(
    anchors: Iterable[Anchor],
    couplers: tuple[CouplerSpec, CouplerSpec],
    i_max: float | None = None,
    *,
    max_excursion_rad: float = 4 * math.pi,
    grid_c: int = 4001,
    grid_phi0: int = 361,
    max_candidates: int = 24,
) -> PhaseCalibration:
    """Least-squares fit of ``(phi0, c)`` to operating-point anchors.

    Exact anchors (``port1_max``, ``split_50_50``, ``port_fraction``) enter the
    sum of squared port-1-fraction residuals. A ``port1_max`` anchor at 0 mA
    pins ``phi0 = pi``. ``port2_near_max`` anchors are qualitative: among
    equally good minima they select the one whose port-2 fraction there is
    closest to its maximum. Remaining ties go to the smallest ``c``, then the
    smallest ``phi0``.

    The fitted residual per anchor is attached as ``.residuals``.
    """
    anchors = tuple(anchors)
    couplers = tuple(couplers)
    if i_max is None:
        i_max = max((a.current_mA for a in anchors), default=0.0)
    if not i_max > 0:
        raise UnderdeterminedFitError("need at least one anchor at non-zero current")
    for an in anchors:
        if an.current_mA > i_max:
            raise DomainError(f"anchor at {an.current_mA} mA exceeds heater limit {i_max} mA")

    exact = [a for a in anchors if a.exact]
    pinned = any(a.kind == PORT1_MAX and a.current_mA == 0.0 for a in exact)
    informative_currents = {a.current_mA for a in exact if not (pinned and a.current_mA == 0.0)}
    if pinned:
        if not any(i > 0 for i in informative_currents):
            raise UnderdeterminedFitError(
                "phi0 is pinned by the 0 mA port-1 maximum but no exact anchor at non-zero current fixes c"
            )
    elif len(informative_currents) < 2:
        raise UnderdeterminedFitError(
            f"need exact anchors at >= 2 distinct currents to fit (phi0, c); got {sorted(informative_currents)}"
        )

    c_max = max_excursion_rad / i_max**2
    c_grid = np.linspace(0.0, c_max, grid_c)
    dc = c_grid[1] - c_grid[0]

    if pinned:
        phi0_grid = np.array([math.pi])
        values = _objective(exact, couplers, math.pi, c_grid)
        seeds = [(math.pi, c_grid[i]) for (i,) in _grid_minima(values, False)]
        seed_vals = [values[i] for (i,) in _grid_minima(values, False)]
    else:
        phi0_grid = np.linspace(0.0, 2 * math.pi, grid_phi0, endpoint=False)
        values = _objective(exact, couplers, phi0_grid[:, None], c_grid[None, :])
        idx = _grid_minima(values, True)
        seeds = [(phi0_grid[i], c_grid[j]) for i, j in idx]
        seed_vals = [values[i, j] for i, j in idx]

    order = np.argsort(seed_vals, kind="stable")[:max_candidates]
    refined = []
    for k in order:
        p0, c0 = seeds[k]
        if pinned:
            x0, lo, hi = [c0], [0.0], [np.inf]

            def unpack(x):
                return math.pi, x[0]

        else:
            x0, lo, hi = [p0, c0], [-np.inf, 0.0], [np.inf, np.inf]

            def unpack(x):
                return x[0], x[1]

        def resid(x):
            ex, _ = _anchor_terms(exact, couplers, *unpack(x))
            return np.asarray(ex, dtype=float)

        res = optimize.least_squares(
            resid, x0, bounds=(lo, hi), method="trf", x_scale=[1.0] * (len(x0) - 1) + [dc],
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000,
        )
        if res.status <= 0:
            raise FitError(f"phase-map refinement did not converge from (phi0={p0:.4g}, c={c0:.4g}): {res.message}")
        ph, cc = unpack(res.x)
        sol = (wrap_phase(ph), float(max(cc, 0.0)))
        # the trust-region solver stops a hair inside the c >= 0 bound
        if 0.0 < sol[1] <= 1e-9 * dc and _objective(exact, couplers, sol[0], 0.0) <= _objective(exact, couplers, *sol) + 1e-24:
            sol = (sol[0], 0.0)
        rms = math.sqrt(float(_objective(exact, couplers, *sol)) / len(exact))
        refined.append((rms, sol))

    best = min(f for f, _ in refined)
    tied = [s for f, s in refined if f <= best + 1e-9]

    def rank(sol):
        p0, cc = sol
        return (round(_near_shortfall(anchors, couplers, p0, cc), 9), cc, p0)

    phi0, c = min(tied, key=rank)

    residuals = []
    for an in anchors:
        ex, nr = _anchor_terms((an,), couplers, phi0, c)
        residuals.append(AnchorResidual(an.current_mA, an.kind, float((ex or nr)[0])))
    return PhaseCalibration(phi0, c, float(i_max), tuple(residuals))


def fit_model(
    er_db: tuple[float, float] = DEVICE_EXTINCTION_DB,
    anchors: Sequence[Anchor] = DEVICE_ANCHORS,
    loss_L: float = DEVICE_LOSS_L,
    i_max: float = DEVICE_I_MAX_MA,
) -> CircuitModel:
    """Couplers from extinction ratios, then the phase map from anchors."""
    c1, c2 = fit_couplers_from_extinction(*er_db)
    calib = fit_phase_calibration(anchors, (c1, c2), i_max)
    return CircuitModel(c1, c2, calib, loss_L)


# -- sweeps -----------------------------------------------------------------


def predict_sweep(model: CircuitModel, currents: Iterable[float]) -> SweepCurve:
    """Absolute port transmissions ``loss_L * (P1, P2)`` at each current."""
    currents = np.asarray(list(currents), dtype=float)
    p1 = np.empty_like(currents)
    p2 = np.empty_like(currents)
    for i, cur in enumerate(currents):
        p1[i], p2[i] = model.powers(cur)
    return SweepCurve(currents, p1, p2)


def current_grid(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive current grid, rounded so the endpoint lands exactly on ``stop``."""
    if step <= 0:
        raise DomainError("sweep step must be positive")
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 10)


def extinction_ratios(curve: SweepCurve) -> tuple[float, float]:
    """Per-port ``10 log10(max / min)`` over the sweep; ``inf`` for an exact null."""
    out = []
    for p in (np.asarray(curve.p1), np.asarray(curve.p2)):
        hi, lo = float(np.max(p)), float(np.min(p))
        if hi <= 0:
            out.append(0.0)
        elif lo <= _NULL_POWER * hi:
            out.append(math.inf)
        else:
            out.append(10.0 * math.log10(hi / lo))
    return out[0], out[1]

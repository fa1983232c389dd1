"""Count reduction: histograms, background subtraction, windowing, photon areas, splitting ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .source import CH_PORT1, CH_PORT2, CH_REFERENCE, TimeTagStream
from .xfer import CircuitModel

DEFAULT_BIN_NS = 1.6
DEFAULT_WINDOW_NS = 32.0
# the decay tail must be gone: exp(-(32 + 300) / 23.08) ~ 6e-7
DEFAULT_BG_MARGIN_NS = 300.0


@dataclass(frozen=True)
class Histogram:
    """Counts per time bin. ``span_ns`` is the exposed time range; the last bin
    may stick out past it and then has a shorter exposure."""

    bin_width_ns: float
    t_start_ns: float
    counts: np.ndarray
    variance: np.ndarray
    span_ns: float

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def bin_starts(self) -> np.ndarray:
        return self.t_start_ns + self.bin_width_ns * np.arange(self.n_bins)

    @property
    def exposure(self) -> np.ndarray:
        """Time (ns) each bin was actually exposed."""
        lo = self.bin_starts
        hi = np.minimum(lo + self.bin_width_ns, self.t_start_ns + self.span_ns)
        return np.clip(hi - lo, 0.0, None)

    @property
    def t_end_ns(self) -> float:
        return self.t_start_ns + self.span_ns

    def subtract(self, background: tuple[float, float]) -> "Histogram":
        """Background-subtracted copy; negative bins are kept."""
        rate, var = background
        e = self.exposure
        return Histogram(
            self.bin_width_ns, self.t_start_ns, self.counts - rate * e, self.variance + var * e**2, self.span_ns
        )


@dataclass(frozen=True)
class CountWindow:
    start_ns: float
    width_ns: float = DEFAULT_WINDOW_NS
    captured_fraction: float = math.nan

    @property
    def end_ns(self) -> float:
        return self.start_ns + self.width_ns


@dataclass(frozen=True)
class PhotonArea:
    area: float
    sigma: float
    n_window: int = 0


@dataclass(frozen=True)
class SplittingEstimate:
    s1: float
    s2: float
    sigma1: float
    sigma2: float
    eff_ratio_used: float

    @property
    def sigma(self) -> float:
        return self.sigma1


def _n_bins(span: float, w: float) -> int:
    return max(1, int(math.ceil(span / w - 1e-9)))


def bin_times(times, bin_width_ns: float = DEFAULT_BIN_NS, span_ns: float = None, t_start_ns: float = 0.0) -> Histogram:
    """Histogram arrival times into ``[t_start + k w, t_start + (k+1) w)`` bins."""
    if not bin_width_ns > 0:
        raise DomainError(f"bin width must be positive, got {bin_width_ns}")
    times = np.asarray(times, dtype=float)
    if span_ns is None:
        span_ns = float(times.max() - t_start_ns) if times.size else bin_width_ns
    n = _n_bins(span_ns, bin_width_ns)
    k = np.floor((times - t_start_ns) / bin_width_ns).astype(np.int64)
    k = k[(k >= 0) & (k < n)]
    counts = np.bincount(k, minlength=n).astype(float)
    return Histogram(float(bin_width_ns), float(t_start_ns), counts, counts.copy(), float(span_ns))


def bin_events(stream: TimeTagStream, channel: int, bin_width_ns: float = DEFAULT_BIN_NS) -> Histogram:
    """Histogram one channel of a stream over the full attempt period."""
    return bin_times(stream.times(channel), bin_width_ns, stream.period_ns)


def _bin_mask(h: Histogram, regions: Sequence[tuple[float, float]]) -> np.ndarray:
    lo = h.bin_starts
    hi = lo + h.bin_width_ns
    eps = 1e-9 * h.bin_width_ns
    mask = np.zeros(h.n_bins, dtype=bool)
    for a, b in regions:
        mask |= (lo >= a - eps) & (hi <= b + eps)
    return mask


def default_background_regions(h: Histogram, window: CountWindow, margin_ns: float = DEFAULT_BG_MARGIN_NS):
    """Everything outside ``[window start - margin, window end + margin]``."""
    regions = []
    if window.start_ns - margin_ns > h.t_start_ns:
        regions.append((h.t_start_ns, window.start_ns - margin_ns))
    if window.end_ns + margin_ns < h.t_start_ns + h.n_bins * h.bin_width_ns:
        regions.append((window.end_ns + margin_ns, h.t_start_ns + h.n_bins * h.bin_width_ns))
    return regions


def estimate_background(
    h: Histogram, bg_regions: Sequence[tuple[float, float]], signal_window: CountWindow | None = None
) -> tuple[float, float]:
    """Flat background rate (counts/ns) and its variance from bins inside ``bg_regions``.

    Only whole bins count; the partially exposed tail bin contributes its
    actual exposure. Returns ``(N_bg / T, N_bg / T^2)``.
    """
    bg_regions = [(float(a), float(b)) for a, b in bg_regions]
    if not bg_regions or any(b <= a for a, b in bg_regions):
        raise DomainError(f"background regions must be non-empty intervals, got {bg_regions}")
    if signal_window is not None:
        for a, b in bg_regions:
            if a < signal_window.end_ns and b > signal_window.start_ns:
                raise DomainError(
                    f"background region [{a}, {b}) overlaps the signal window "
                    f"[{signal_window.start_ns}, {signal_window.end_ns})"
                )
    mask = _bin_mask(h, bg_regions)
    span = float(h.exposure[mask].sum())
    if span <= 0:
        raise DomainError("background regions contain no complete bins")
    n_bg = float(h.counts[mask].sum())
    return n_bg / span, n_bg / span**2


def _window_bins(h: Histogram, width_ns: float) -> int:
    n = int(round(width_ns / h.bin_width_ns))
    if n < 1 or abs(n * h.bin_width_ns - width_ns) > 1e-6 * width_ns:
        raise DomainError(f"window width {width_ns} ns is not a whole number of {h.bin_width_ns} ns bins")
    if n > h.n_bins:
        raise DomainError(f"window width {width_ns} ns exceeds the histogram span")
    return n


def select_window(
    reference: Histogram, width_ns: float = DEFAULT_WINDOW_NS, background: tuple[float, float] | None = None
) -> CountWindow:
    """Grid-aligned window of ``width_ns`` capturing the most (background-subtracted) counts.

    Ties go to the earliest start. ``captured_fraction`` is window counts over
    total counts, both background-subtracted when ``background`` is given.
    """
    n = _window_bins(reference, width_ns)
    h = reference.subtract(background) if background is not None else reference
    total = float(h.counts.sum())
    if not total > 0:
        raise DomainError("reference histogram has no counts above background")
    sums = np.convolve(h.counts, np.ones(n), mode="valid")
    k = int(np.argmax(sums))
    start = reference.t_start_ns + k * reference.bin_width_ns
    return CountWindow(start, n * reference.bin_width_ns, float(sums[k] / total))


def _window_slice(h: Histogram, win: CountWindow) -> slice:
    k0 = int(round((win.start_ns - h.t_start_ns) / h.bin_width_ns))
    n = _window_bins(h, win.width_ns)
    if k0 < 0 or k0 + n > h.n_bins:
        raise DomainError(f"window [{win.start_ns}, {win.end_ns}) lies outside the histogram")
    return slice(k0, k0 + n)


def photon_area(h: Histogram, win: CountWindow, bg: tuple[float, float] = (0.0, 0.0)) -> PhotonArea:
    """Background-subtracted counts in ``win`` with 1-sigma shot noise.

    ``area = N_win - rate * width`` and ``sigma^2 = N_win + var(rate) * width^2``.
    The area may come out negative; it is returned as is.
    """
    sl = _window_slice(h, win)
    n_win = float(h.counts[sl].sum())
    width = float(h.exposure[sl].sum())
    rate, var = bg
    return PhotonArea(n_win - rate * width, math.sqrt(n_win + var * width**2), int(round(n_win)))


def splitting_ratio(a1: PhotonArea, a2: PhotonArea, rho: float = 1.13, sigma_rho: float = 0.0) -> SplittingEstimate:
    """Efficiency-corrected port fractions from the two photon areas.

    ``rho = eta1 / eta2`` is the detection-efficiency ratio. Port 1 is the more
    efficient detector, so port 2's area is scaled up by ``rho``:

        s1 = A1 / (A1 + rho A2)

    e.g. A1 = 840, A2 = 160, rho = 1.13 gives s1 = 840 / 1020.8 = 0.823.
    Errors follow first-order propagation of sigma(A1), sigma(A2) and ``sigma_rho``.
    """
    A1, A2 = a1.area, a2.area
    den = A1 + rho * A2
    if not den > 0:
        raise DomainError(f"no signal: A1 + rho*A2 = {den:.6g} <= 0")
    s1 = A1 / den
    var = ((rho * A2 * a1.sigma) ** 2 + (rho * A1 * a2.sigma) ** 2 + (A1 * A2 * sigma_rho) ** 2) / den**4
    sig = math.sqrt(var)
    return SplittingEstimate(s1, 1.0 - s1, sig, sig, float(rho))


@dataclass(frozen=True)
class PullReport:
    currents: np.ndarray
    measured_s1: np.ndarray
    model_s1: np.ndarray
    sigma: np.ndarray
    pulls: np.ndarray

    @property
    def max_abs_pull(self) -> float:
        return float(np.max(np.abs(self.pulls))) if self.pulls.size else 0.0

    @property
    def fraction_within_1(self) -> float:
        return float(np.mean(np.abs(self.pulls) <= 1.0)) if self.pulls.size else 1.0


def compare_to_classical(
    currents: Sequence[float], estimates: Sequence[SplittingEstimate], model: CircuitModel
) -> PullReport:
    """Pulls ``(s1_measured - s1_model) / sigma`` against the laser-calibrated model curve."""
    currents = np.asarray(currents, dtype=float)
    if len(currents) != len(estimates):
        raise DomainError(f"{len(currents)} currents but {len(estimates)} estimates")
    meas = np.array([e.s1 for e in estimates], dtype=float)
    sig = np.array([e.sigma1 for e in estimates], dtype=float)
    mod = np.array([model.fractions(i)[0] for i in currents], dtype=float)
    diff = meas - mod
    with np.errstate(divide="ignore", invalid="ignore"):
        pulls = np.where(diff == 0, 0.0, diff / sig)
    return PullReport(currents, meas, mod, sig, pulls)


# -- whole-stream pipeline --------------------------------------------------


@dataclass(frozen=True)
class AnalysisSettings:
    bin_width_ns: float = DEFAULT_BIN_NS
    window_width_ns: float = DEFAULT_WINDOW_NS
    bg_margin_ns: float = DEFAULT_BG_MARGIN_NS
    bg_regions: tuple | None = None
    rho: float = 1.13
    sigma_rho: float = 0.07
    include_rho_error: bool = True

    def __post_init__(self):
        if not self.bin_width_ns > 0 or not self.window_width_ns > 0:
            raise DomainError("bin and window widths must be positive")
        if not self.rho > 0 or not self.sigma_rho >= 0 or not self.bg_margin_ns >= 0:
            raise DomainError("rho must be positive; sigma_rho and bg_margin_ns non-negative")


@dataclass(frozen=True)
class StreamAnalysis:
    histograms: dict
    backgrounds: dict
    window: CountWindow
    areas: dict
    estimate: SplittingEstimate | None


def analyze_stream(stream: TimeTagStream, settings: AnalysisSettings = AnalysisSettings()) -> StreamAnalysis:
    """Bin all channels, place the window on the reference, subtract backgrounds, split."""
    hists = {ch: bin_events(stream, ch, settings.bin_width_ns) for ch in (CH_REFERENCE, CH_PORT1, CH_PORT2)}
    ref = hists[CH_REFERENCE]
    # a flat background does not move the argmax, so place the window on raw counts first
    raw_win = select_window(ref, settings.window_width_ns)
    regions = settings.bg_regions or default_background_regions(ref, raw_win, settings.bg_margin_ns)
    bgs = {ch: estimate_background(h, regions, raw_win) for ch, h in hists.items()}
    window = select_window(ref, settings.window_width_ns, bgs[CH_REFERENCE])
    areas = {ch: photon_area(hists[ch], window, bgs[ch]) for ch in hists}
    sigma_rho = settings.sigma_rho if settings.include_rho_error else 0.0
    try:
        est = splitting_ratio(areas[CH_PORT1], areas[CH_PORT2], settings.rho, sigma_rho)
    except DomainError:
        est = None
    return StreamAnalysis(hists, bgs, window, areas, est)


def estimate_total_transmission(
    a1: PhotonArea, a2: PhotonArea, eta1: float, eta2: float, chip_photons: float, window_fraction: float
) -> tuple[float, float]:
    """Device transmission from efficiency-corrected port areas.

    ``chip_photons`` is the expected number of photons reaching the chip input;
    ``window_fraction`` the share of each photon's arrival density inside the window.
    """
    denom = chip_photons * window_fraction
    t = (a1.area / eta1 + a2.area / eta2) / denom
    sig = math.hypot(a1.sigma / eta1, a2.sigma / eta2) / denom
    return t, sig

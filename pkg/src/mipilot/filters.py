"""High-pass FIR filtering for DC-drift removal on streaming EEG.

The filter is designed by weighted least squares on a dense frequency grid
and applied causally, per channel, with explicit delay-line state so a
continuous stream can be processed in arbitrary block sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FilterDesignError(ValueError):
    """Raised when the requested filter cannot be designed."""


@dataclass(frozen=True)
class FilterSpec:
    """Design parameters for the high-pass filter.

    ``order`` must be even (Type-I linear phase); the filter has
    ``order + 1`` taps. ``transition`` sets the unweighted transition band
    ``[cutoff, cutoff * (1 + transition)]``: a short filter cannot realize a
    brick-wall edge at a cutoff far below Nyquist, so an explicit transition
    region is required for a sane design.
    """

    order: int = 64
    cutoff_hz: float = 1.64
    sample_rate_hz: float = 250.0
    grid_points: int = 4096
    transition: float = 1.0
    stop_weight: float = 1.0

    def __post_init__(self):
        if self.order < 2 or self.order % 2 != 0:
            raise FilterDesignError(f"filter order must be even and >= 2, got {self.order}")
        nyquist = self.sample_rate_hz / 2.0
        if not (0.0 < self.cutoff_hz < nyquist):
            raise FilterDesignError(
                f"cutoff must lie in (0, {nyquist}) Hz, got {self.cutoff_hz}"
            )
        if self.grid_points < 8 * (self.order + 1):
            raise FilterDesignError(
                f"grid_points must be >= {8 * (self.order + 1)} for order {self.order}"
            )
        if self.transition <= 0.0:
            raise FilterDesignError("transition fraction must be positive")
        if self.stop_weight <= 0.0:
            raise FilterDesignError("stop_weight must be positive")

    @property
    def nyquist_hz(self) -> float:
        return self.sample_rate_hz / 2.0


@dataclass(frozen=True)
class FirFilter:
    """Designed filter: ``order + 1`` symmetric taps plus the spec they came from."""

    taps: np.ndarray
    spec: FilterSpec

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        object.__setattr__(self, "taps", taps)
        if taps.shape != (self.spec.order + 1,):
            raise FilterDesignError(
                f"expected {self.spec.order + 1} taps, got shape {taps.shape}"
            )
        if not np.all(np.isfinite(taps)):
            raise FilterDesignError("taps must be finite")
        if np.max(np.abs(taps - taps[::-1])) > 1e-9:
            raise FilterDesignError("taps must be symmetric (linear phase)")

    @property
    def dc_gain(self) -> float:
        return float(self.taps.sum())

    @property
    def group_delay_samples(self) -> int:
        return self.spec.order // 2


@dataclass
class ChannelFilterState:
    """Per-channel delay line holding the most recent ``order`` input samples."""

    delay_line: np.ndarray
    channel_index: int = 0

    @classmethod
    def zeros(cls, filt: "FirFilter", channel_index: int = 0) -> "ChannelFilterState":
        return cls(np.zeros(filt.spec.order, dtype=np.float64), channel_index)


def design_highpass_ls(spec: FilterSpec) -> FirFilter:
    """Design the high-pass filter by weighted least squares.

    The amplitude response of a symmetric (Type-I) filter is a cosine series
    over half the taps; we fit that series to the ideal response (0 on
    ``[0, cutoff]``, 1 on ``[cutoff * (1 + transition), Nyquist]``) on a dense
    frequency grid, leaving the transition band unweighted. Designing over the
    half-space makes the taps exactly symmetric by construction.
    """
    nyquist = spec.nyquist_hz
    half = spec.order // 2
    freqs = np.linspace(0.0, nyquist, spec.grid_points)
    in_stop = freqs <= spec.cutoff_hz
    in_pass = freqs >= spec.cutoff_hz * (1.0 + spec.transition)
    weights = np.where(in_stop, spec.stop_weight, np.where(in_pass, 1.0, 0.0))
    desired = np.where(in_pass, 1.0, 0.0)

    keep = weights > 0.0
    if keep.sum() < half + 1:
        raise FilterDesignError("too few weighted grid points; increase grid_points")
    omega = 2.0 * np.pi * freqs[keep] / spec.sample_rate_hz
    k = np.arange(half + 1)
    basis = np.cos(np.outer(omega, k))
    sw = np.sqrt(weights[keep])
    coeffs, _, rank, _ = np.linalg.lstsq(basis * sw[:, None], desired[keep] * sw, rcond=None)
    if rank < half + 1:
        raise FilterDesignError("singular design system; widen bands or raise grid_points")

    taps = np.zeros(spec.order + 1, dtype=np.float64)
    taps[half] = coeffs[0]
    taps[half - k[1:]] = coeffs[1:] / 2.0
    taps[half + k[1:]] = coeffs[1:] / 2.0
    return FirFilter(taps=taps, spec=spec)


def frequency_response(filt: FirFilter, freqs_hz) -> np.ndarray:
    """Complex response H(f) = sum_k taps[k] * exp(-j 2 pi f k / fs)."""
    freqs = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
    nyquist = filt.spec.nyquist_hz
    if np.any(freqs < 0.0) or np.any(freqs > nyquist):
        raise ValueError(f"frequencies must lie in [0, {nyquist}] Hz")
    k = np.arange(filt.taps.size)
    phases = np.exp(-2j * np.pi * np.outer(freqs, k) / filt.spec.sample_rate_hz)
    return phases @ filt.taps


def apply_streaming(filt: FirFilter, state: ChannelFilterState, block) -> np.ndarray:
    """Causally filter one block of a channel's stream, continuing from ``state``.

    The accumulation runs in fixed tap order so the output is bit-identical
    for any split of the stream into blocks.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 1:
        raise ValueError("block must be one-dimensional")
    order = filt.spec.order
    if state.delay_line.shape != (order,):
        raise ValueError(
            f"state delay line has length {state.delay_line.shape[0]}, filter order is {order}"
        )
    if block.size == 0:
        return block.copy()

    padded = np.concatenate([state.delay_line, block])
    out = np.zeros(block.size, dtype=np.float64)
    for k, tap in enumerate(filt.taps):
        out += tap * padded[order - k : order - k + block.size]
    state.delay_line = padded[-order:].copy()
    return out


def apply_offline(filt: FirFilter, data) -> np.ndarray:
    """Filter whole channels from zero state.

    ``data`` is one channel ``[T]`` or a multichannel stream ``[C, T]``;
    output matches ``apply_streaming`` fed the same samples in any block
    sizes, bit for bit.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        return apply_streaming(filt, ChannelFilterState.zeros(filt), data)
    if data.ndim != 2:
        raise ValueError("data must be [T] or [C, T]")
    out = np.empty_like(data)
    for c in range(data.shape[0]):
        out[c] = apply_streaming(filt, ChannelFilterState.zeros(filt, c), data[c])
    return out


def write_taps(path, filt: FirFilter) -> None:
    """Write taps as little-endian 64-bit reals."""
    filt.taps.astype("<f8").tofile(path)


def read_taps(path, spec: FilterSpec) -> FirFilter:
    taps = np.fromfile(path, dtype="<f8")
    return FirFilter(taps=taps, spec=spec)

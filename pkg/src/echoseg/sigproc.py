"""Time-domain preprocessing of multichannel ultrasound captures.

Band-pass filtering around the burst carrier, segmentation of a recording
into per-burst blocks (direct wave, guard, reflected-wave gate), and 4x
upsampling of gated segments before beamforming.
"""

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_SOUND_MPS = 343.0


@dataclass(frozen=True)
class FilterSpec:
    """Band-pass description: carrier-centered, fixed odd tap count."""
    center_hz: float = 62_000.0
    bandwidth_hz: float = 10_000.0
    num_taps: int = 255

    def validate(self, sample_rate_hz):
        if self.num_taps < 3 or self.num_taps % 2 == 0:
            raise ValueError(f"num_taps must be odd and >= 3, got {self.num_taps}")
        if self.center_hz + self.bandwidth_hz / 2 >= sample_rate_hz / 2:
            raise ValueError(
                f"band edge {self.center_hz + self.bandwidth_hz / 2:.0f} Hz "
                f"exceeds Nyquist at {sample_rate_hz:.0f} Hz sampling")
        if self.center_hz - self.bandwidth_hz / 2 <= 0:
            raise ValueError("lower band edge must be positive")


@dataclass
class Waveform:
    """Multichannel sampled pressure signal.

    samples has shape (channels, frames); all channels share one length and
    one sample rate.
    """
    samples: np.ndarray
    sample_rate_hz: float
    geometry_id: str = "4x4-mems"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError("samples must be 2-D (channels, frames)")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def frames(self):
        return self.samples.shape[1]


@dataclass(frozen=True)
class Block:
    """Sample-index intervals of one burst: direct wave then reflected gate."""
    direct: tuple
    reflected: tuple
    emission_time_s: float

    def __post_init__(self):
        if not (self.direct[0] <= self.direct[1] <= self.reflected[0] <= self.reflected[1]):
            raise ValueError("direct interval must precede reflected interval")


def design_bandpass(spec: FilterSpec, sample_rate_hz) -> np.ndarray:
    """Design a linear-phase windowed-sinc band-pass (Hamming window).

    The taps are normalized to unit magnitude response at spec.center_hz,
    so the passband center sits at exactly 0 dB.
    """
    spec.validate(sample_rate_hz)
    mid = (spec.num_taps - 1) // 2
    k = np.arange(spec.num_taps) - mid
    lo = (spec.center_hz - spec.bandwidth_hz / 2) / sample_rate_hz
    hi = (spec.center_hz + spec.bandwidth_hz / 2) / sample_rate_hz
    taps = 2 * hi * np.sinc(2 * hi * k) - 2 * lo * np.sinc(2 * lo * k)
    taps *= np.hamming(spec.num_taps)
    gain = np.abs(np.sum(taps * np.exp(-2j * np.pi * spec.center_hz / sample_rate_hz * k)))
    return taps / gain


def frequency_response(taps, freqs_hz, sample_rate_hz):
    """Complex response of FIR taps at the given frequencies (midpoint phase)."""
    taps = np.asarray(taps, dtype=np.float64)
    k = np.arange(len(taps)) - (len(taps) - 1) / 2
    w = 2 * np.pi * np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64)) / sample_rate_hz
    return np.exp(-1j * np.outer(w, k)) @ taps


def apply_filter(w: Waveform, taps) -> Waveform:
    """Filter every channel, compensating the FIR group delay.

    Output is time-aligned with the input (output[i] corresponds to
    input[i]) and keeps the input length; boundaries are zero-padded.
    """
    if w.frames == 0:
        raise ValueError("cannot filter an empty waveform")
    taps = np.asarray(taps, dtype=np.float64)
    delay = (len(taps) - 1) // 2
    out = np.empty_like(w.samples)
    for ch in range(w.channels):
        full = np.convolve(w.samples[ch], taps)
        out[ch] = full[delay:delay + w.frames]
    return Waveform(out, w.sample_rate_hz, w.geometry_id)


def split_blocks(w: Waveform, emission_times_s, direct_len_s, guard_s, gate_s):
    """Cut a recording into per-burst blocks using the emission schedule.

    Each emission yields direct = [t_e, t_e + direct_len) and
    reflected = [t_e + direct_len + guard, ... + gate). Blocks whose gate
    does not fit inside the recording are dropped, not an error.
    """
    times = np.asarray(emission_times_s, dtype=np.float64)
    if times.size and np.any(np.diff(times) <= 0):
        raise ValueError("emission times must be strictly increasing")
    fs = w.sample_rate_hz
    direct_n = int(round(direct_len_s * fs))
    guard_n = int(round(guard_s * fs))
    gate_n = int(round(gate_s * fs))
    blocks = []
    for t_e in times:
        start = int(round(t_e * fs))
        refl_start = start + direct_n + guard_n
        refl_end = refl_start + gate_n
        if start < 0 or refl_end > w.frames:
            continue
        blocks.append(Block(direct=(start, start + direct_n),
                            reflected=(refl_start, refl_end),
                            emission_time_s=float(t_e)))
    return blocks


def upsample4(segment, rate_hz, num_taps: int = 255):
    """Upsample a single-channel segment 4x by zero-stuffing plus a
    windowed-sinc anti-image low-pass (cutoff at the original Nyquist).

    Each polyphase branch of the interpolator is normalized to unit DC
    gain, so constant inputs are reproduced exactly in the interior.
    Output sample n lands at time n / (4 * rate_hz) on the input clock:
    out[4*i] ~= segment[i].
    """
    x = np.asarray(segment, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("segment must be a nonempty 1-D sequence")
    taps = _interp_taps(num_taps)
    stuffed = np.zeros(4 * x.size)
    stuffed[::4] = x
    mid = (num_taps - 1) // 2
    full = np.convolve(stuffed, taps)
    return full[mid:mid + 4 * x.size]


_INTERP_CACHE: dict = {}


def _interp_taps(num_taps):
    if num_taps % 2 == 0:
        raise ValueError("interpolator tap count must be odd")
    taps = _INTERP_CACHE.get(num_taps)
    if taps is None:
        mid = (num_taps - 1) // 2
        k = np.arange(num_taps) - mid
        taps = np.sinc(k / 4.0) * np.hamming(num_taps)
        # unit DC gain per polyphase branch: constants pass through exactly
        for phase in range(4):
            sel = (k % 4) == phase
            taps[sel] /= taps[sel].sum()
        _INTERP_CACHE[num_taps] = taps
    return taps


def burst_duration_s(carrier_hz=62_000.0, cycles=20):
    """Length of one emitted burst; the default direct-wave gate."""
    return cycles / carrier_hz


def two_way_gate_s(max_range_m, c_mps=SPEED_OF_SOUND_MPS):
    """Reflected-wave gate long enough to see echoes out to max_range_m."""
    return 2.0 * max_range_m / c_mps

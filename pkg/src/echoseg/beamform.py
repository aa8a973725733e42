"""Delay-and-sum imaging of reflected bursts.

A gated, band-passed, upsampled multichannel segment is steered over an
angular grid; each cell keeps the peak absolute beamformed amplitude,
giving a reflected-sound heat map. A human-free reference map is scaled
and subtracted, and the residual is clamped/normalized into a sound image
in [0, 1].
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .sigproc import SPEED_OF_SOUND_MPS


class DegenerateReferenceError(ValueError):
    """Reference heat map is identically zero; the scale coefficient is undefined."""


def grid_mic_positions(rows=4, cols=4, pitch_m=0.00325):
    """Planar rows x cols grid centered at the origin, z toward the scene.

    x spans columns (horizontal / azimuth axis), y spans rows (vertical /
    polar axis).
    """
    xs = (np.arange(cols) - (cols - 1) / 2) * pitch_m
    ys = (np.arange(rows) - (rows - 1) / 2) * pitch_m
    pos = np.zeros((rows * cols, 3))
    for r in range(rows):
        for c in range(cols):
            pos[r * cols + c] = (xs[c], ys[r], 0.0)
    return pos


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone grid plus the emitter offset along the horizontal axis."""
    mic_positions_m: np.ndarray = field(default_factory=grid_mic_positions)
    pitch_m: float = 0.00325
    rows: int = 4
    cols: int = 4
    emitter_offset_m: float = 0.030

    def __post_init__(self):
        pos = np.asarray(self.mic_positions_m, dtype=np.float64)
        object.__setattr__(self, "mic_positions_m", pos)
        if pos.shape != (self.rows * self.cols, 3):
            raise ValueError(f"expected {self.rows * self.cols} mic positions, got {pos.shape}")
        if len(np.unique(pos, axis=0)) != len(pos):
            raise ValueError("mic positions must be pairwise distinct")
        if not np.allclose(pos.mean(axis=0), 0.0, atol=1e-12):
            raise ValueError("mic positions must be centered on the origin")

    @property
    def num_mics(self):
        return self.mic_positions_m.shape[0]

    @property
    def emitter_position_m(self):
        return np.array([self.emitter_offset_m, 0.0, 0.0])


@dataclass(frozen=True)
class AngularGrid:
    """Evenly spaced steering directions, endpoints included.

    Azimuth theta maps to image width (columns), polar phi to image height
    (rows); cell (i, j) looks toward (phis[i], thetas[j]).
    """
    theta_min_deg: float = -45.0
    theta_max_deg: float = 45.0
    phi_min_deg: float = -60.0
    phi_max_deg: float = 60.0
    n_theta: int = 45
    n_phi: int = 30

    def __post_init__(self):
        if self.n_theta < 2 or self.n_phi < 2:
            raise ValueError("pixel counts must be >= 2")
        if self.theta_max_deg <= self.theta_min_deg or self.phi_max_deg <= self.phi_min_deg:
            raise ValueError("angular ranges must be nonempty")

    @property
    def thetas_deg(self):
        return np.linspace(self.theta_min_deg, self.theta_max_deg, self.n_theta)

    @property
    def phis_deg(self):
        return np.linspace(self.phi_min_deg, self.phi_max_deg, self.n_phi)

    @property
    def shape(self):
        return (self.n_phi, self.n_theta)

    def cell_of(self, theta_deg, phi_deg):
        """Index (i, j) of the grid cell whose center is nearest the angles."""
        j = int(np.argmin(np.abs(self.thetas_deg - theta_deg)))
        i = int(np.argmin(np.abs(self.phis_deg - phi_deg)))
        return i, j


@dataclass(frozen=True)
class HeatMap:
    """Per-direction beamformed amplitude on an AngularGrid."""
    values: np.ndarray
    grid: AngularGrid


@dataclass(frozen=True)
class SoundImage:
    """Normalized reflected-sound directional image, values in [0, 1]."""
    values: np.ndarray
    grid: AngularGrid


def direction_unit(theta_deg, phi_deg):
    """Unit vector for azimuth theta / polar phi; (0, 0) is broadside (+z)."""
    th = np.deg2rad(theta_deg)
    ph = np.deg2rad(phi_deg)
    return np.array([np.sin(th) * np.cos(ph), np.sin(ph), np.cos(th) * np.cos(ph)])


def steering_delays(geometry: ArrayGeometry, theta_deg, phi_deg,
                    c_mps=SPEED_OF_SOUND_MPS):
    """Far-field plane-wave delays (seconds) relative to the array center.

    delay_m = -(p_m . u) / c; the tiny 9.75 mm aperture puts every target
    of interest far beyond the Fraunhofer distance, so per-range focusing
    is unnecessary.
    """
    if c_mps <= 0:
        raise ValueError("speed of sound must be positive")
    u = direction_unit(theta_deg, phi_deg)
    return -(geometry.mic_positions_m @ u) / c_mps


def das_beamform(samples, delays_s, rate_hz):
    """Delay-and-sum: y(t) = sum_m x_m(t - delay_m).

    Fractional-sample shifts use linear interpolation; samples shifted
    outside the segment contribute zero. Channel m pairs with delays_s[m].
    """
    samples = np.asarray(samples, dtype=np.float64)
    delays_s = np.asarray(delays_s, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError("samples must be 2-D (channels, frames)")
    if samples.shape[0] != delays_s.size:
        raise ValueError(f"{samples.shape[0]} channels but {delays_s.size} delays")
    shifts = delays_s * rate_hz
    pad = int(np.ceil(np.abs(shifts).max())) + 1 if shifts.size else 1
    padded = np.pad(samples, ((0, 0), (pad, pad)))
    return _shift_sum(padded, shifts, pad, samples.shape[1])


def _shift_sum(padded, shifts, pad, length):
    """Sum of linearly interpolated shifted channels; shared by das paths."""
    y = np.zeros(length)
    for m, d in enumerate(shifts):
        q = int(np.floor(d))
        f = d - q
        a = pad - q
        y += (1.0 - f) * padded[m, a:a + length]
        if f != 0.0:
            y += f * padded[m, a - 1:a - 1 + length]
    return y


def heatmap(segment, rate_hz, geometry: ArrayGeometry, grid: AngularGrid,
            c_mps=SPEED_OF_SOUND_MPS, threads=None):
    """Beamform a gated reflected segment toward every grid cell.

    segment: (num_mics, frames) array, already band-passed and upsampled.
    Cell value is max_t |y(t)| over the gate. Cells are independent, so
    the result does not depend on the degree of parallelism.
    """
    segment = np.asarray(segment, dtype=np.float64)
    if segment.ndim != 2 or segment.shape[0] != geometry.num_mics:
        raise ValueError(f"segment must be ({geometry.num_mics}, frames)")
    length = segment.shape[1]
    if length == 0:
        raise ValueError("empty reflected gate")

    # delays for every (phi, theta) cell: (n_phi, n_theta, M) in samples
    thetas = grid.thetas_deg
    phis = grid.phis_deg
    th = np.deg2rad(thetas)[None, :]
    ph = np.deg2rad(phis)[:, None]
    u = np.stack([np.sin(th) * np.cos(ph),
                  np.broadcast_to(np.sin(ph), (grid.n_phi, grid.n_theta)),
                  np.cos(th) * np.cos(ph)], axis=-1)
    shifts = -(u @ geometry.mic_positions_m.T) / c_mps * rate_hz

    pad = int(np.ceil(np.abs(shifts).max())) + 1
    padded = np.pad(segment, ((0, 0), (pad, pad)))
    values = np.empty(grid.shape)

    def fill_row(i):
        for j in range(grid.n_theta):
            y = _shift_sum(padded, shifts[i, j], pad, length)
            values[i, j] = np.abs(y).max()

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill_row, range(grid.n_phi)))
    else:
        for i in range(grid.n_phi):
            fill_row(i)
    return HeatMap(values=values, grid=grid)


def reference_subtract(h: HeatMap, h_ref: HeatMap) -> HeatMap:
    """Subtract the scaled human-free reference from a heat map.

    The scale k matches the two maps at the reference's maximum pixel
    (first in row-major order on ties), so the dominant static echo
    cancels exactly.
    """
    if h.grid != h_ref.grid:
        raise ValueError("heat maps must share one grid")
    ref = h_ref.values
    flat_idx = int(np.argmax(ref))
    i_max, j_max = np.unravel_index(flat_idx, ref.shape)
    peak = ref[i_max, j_max]
    if peak <= 0.0:
        raise DegenerateReferenceError("reference heat map has no positive peak")
    k = h.values[i_max, j_max] / peak
    return HeatMap(values=h.values - k * ref, grid=h.grid)


def to_sound_image(h_us: HeatMap, eps=1e-12) -> SoundImage:
    """Clamp negative residual pixels to zero and normalize the rest by the
    map maximum. An all-nonpositive residual yields the all-zero image,
    keeping the normalization defined.
    """
    clamped = np.maximum(h_us.values, 0.0)
    peak = clamped.max() if clamped.size else 0.0
    if peak <= eps:
        return SoundImage(values=np.zeros_like(clamped), grid=h_us.grid)
    return SoundImage(values=clamped / peak, grid=h_us.grid)

"""Synthetic paired data: ultrasound echoes of parametric human silhouettes.

Stands in for hardware capture. A scene is a wall plus capsule-and-ellipse
human figures on per-frame motion tracks; each frame yields a 16-channel
echo waveform and an analytically rasterized ground-truth mask. The module
also hosts the full waveform-to-sound-image pipeline and dataset
generation with deterministic seeding.
"""

import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .beamform import (AngularGrid, ArrayGeometry, HeatMap, direction_unit,
                       heatmap, reference_subtract, to_sound_image)
from .sigproc import (FilterSpec, Waveform, apply_filter, burst_duration_s,
                      design_bandpass, split_blocks, two_way_gate_s, upsample4)

_NOISE_TAG = 0xA05E
_REF_TAG = 0x4EF5


@dataclass(frozen=True)
class EmissionSpec:
    """Burst emission schedule: short tone packets at fixed intervals."""
    carrier_hz: float = 62_000.0
    cycles: int = 20
    interval_s: float = 0.050
    sample_rate_hz: float = 192_000.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.cycles < 1:
            raise ValueError("burst must have at least one cycle")
        if self.carrier_hz >= self.sample_rate_hz / 2:
            raise ValueError("carrier must be below Nyquist")

    def burst(self):
        """Hann-windowed tone packet sampled at sample_rate_hz."""
        n = int(round(self.cycles / self.carrier_hz * self.sample_rate_hz))
        t = np.arange(n) / self.sample_rate_hz
        return self.amplitude * np.hanning(n) * np.sin(2 * np.pi * self.carrier_hz * t)


@dataclass(frozen=True)
class HumanFigure:
    """Capsule torso with an ellipse head riding on top, in angle space.

    pose_track holds per-frame (dtheta_deg, dphi_deg, drange_m) offsets;
    an empty track means the figure is static for any frame index.
    """
    theta_deg: float
    phi_deg: float
    range_m: float
    half_width_deg: float = 7.0
    half_height_deg: float = 18.0
    head_half_width_deg: float = 3.0
    head_half_height_deg: float = 4.0
    pose_track: tuple = ()
    reflectivity: float = 0.8

    def __post_init__(self):
        if not (0.0 < self.reflectivity <= 1.0):
            raise ValueError("reflectivity must be in (0, 1]")
        if min(self.half_width_deg, self.half_height_deg,
               self.head_half_width_deg, self.head_half_height_deg) <= 0:
            raise ValueError("silhouette extents must be positive")

    def placement(self, frame):
        """(theta, phi, range) of the torso center at the given frame."""
        if self.pose_track:
            if not (0 <= frame < len(self.pose_track)):
                raise ValueError(f"frame {frame} outside pose track "
                                 f"of length {len(self.pose_track)}")
            dth, dph, dr = self.pose_track[frame]
        else:
            dth = dph = dr = 0.0
        return self.theta_deg + dth, self.phi_deg + dph, self.range_m + dr

    def contains(self, theta_deg, phi_deg, frame):
        """Vectorized point-in-silhouette test (torso capsule | head ellipse)."""
        tc, pc, _ = self.placement(frame)
        th = np.asarray(theta_deg, dtype=np.float64)
        ph = np.asarray(phi_deg, dtype=np.float64)
        dth = th - tc
        seg = max(self.half_height_deg - self.half_width_deg, 0.0)
        dph = np.maximum(np.abs(ph - pc) - seg, 0.0)
        torso = dth * dth + dph * dph <= self.half_width_deg ** 2
        head_c = pc + self.half_height_deg + self.head_half_height_deg
        head = ((dth / self.head_half_width_deg) ** 2
                + ((ph - head_c) / self.head_half_height_deg) ** 2) <= 1.0
        return torso | head

    def bbox(self, frame):
        """(theta_lo, theta_hi, phi_lo, phi_hi) bounding the silhouette."""
        tc, pc, _ = self.placement(frame)
        half_w = max(self.half_width_deg, self.head_half_width_deg)
        return (tc - half_w, tc + half_w,
                pc - self.half_height_deg,
                pc + self.half_height_deg + 2 * self.head_half_height_deg)

    def sample_reflectors(self, k, frame, rng):
        """k points uniform over the silhouette (rejection sampling)."""
        t_lo, t_hi, p_lo, p_hi = self.bbox(frame)
        out_t = np.empty(k)
        out_p = np.empty(k)
        got = 0
        while got < k:
            n = 4 * (k - got)
            cand_t = rng.uniform(t_lo, t_hi, size=n)
            cand_p = rng.uniform(p_lo, p_hi, size=n)
            ok = self.contains(cand_t, cand_p, frame)
            take = min(int(ok.sum()), k - got)
            out_t[got:got + take] = cand_t[ok][:take]
            out_p[got:got + take] = cand_p[ok][:take]
            got += take
        return out_t, out_p

    def key(self):
        """Stable 64-bit content key; figures sample identical reflector
        streams regardless of scene composition."""
        payload = struct.pack(
            "<8d", self.theta_deg, self.phi_deg, self.range_m,
            self.half_width_deg, self.half_height_deg,
            self.head_half_width_deg, self.head_half_height_deg,
            self.reflectivity)
        for step in self.pose_track:
            payload += struct.pack("<3d", *step)
        return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SceneSpec:
    """Figures in front of a wall; additive white noise on the capture."""
    figures: tuple = ()
    wall_range_m: float = 3.0
    noise_std: float = 0.01
    c_mps: float = 343.0
    wall_reflectivity: float = 1.0
    direct_gain: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "figures", tuple(self.figures))
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        for fig in self.figures:
            if fig.range_m >= self.wall_range_m:
                raise ValueError("wall must lie beyond every figure")

    def without_figures(self):
        return SceneSpec(figures=(), wall_range_m=self.wall_range_m,
                         noise_std=self.noise_std, c_mps=self.c_mps,
                         wall_reflectivity=self.wall_reflectivity,
                         direct_gain=self.direct_gain)


# fixed fan of wall sample points: a broad planar reflector behind the scene
_WALL_THETAS = np.linspace(-40.0, 40.0, 9)
_WALL_PHIS = np.linspace(-50.0, 50.0, 7)


def render_segmentation(scene: SceneSpec, frame, grid: AngularGrid):
    """Rasterize the union of figure silhouettes on the grid (uint8 {0,1}).

    Pixel (i, j) is on iff the cell center (phis[i], thetas[j]) lies inside
    any figure at that frame.
    """
    th, ph = np.meshgrid(grid.thetas_deg, grid.phis_deg)
    mask = np.zeros(grid.shape, dtype=bool)
    for fig in scene.figures:
        mask |= fig.contains(th, ph, frame)
    return mask.astype(np.uint8)


def synth_echo(scene: SceneSpec, frame, emission: EmissionSpec,
               geometry: ArrayGeometry, n_bursts, rng_seed,
               k_reflectors=64) -> Waveform:
    """Simulate the 16-channel capture of n_bursts emissions.

    Each figure is sampled as k point reflectors uniform over its
    silhouette; every reflector echoes the emitted burst to each mic with
    two-way flight delay and reflectivity / range^2 amplitude. One wall
    echo (fixed fan of points on the plane at wall_range_m) and the direct
    emitter-to-mic arrivals are added, then white Gaussian noise.
    Deterministic in (scene, frame, rng_seed).
    """
    if n_bursts < 1:
        raise ValueError("need at least one burst")
    fs = emission.sample_rate_hz
    mics = geometry.mic_positions_m
    emitter = geometry.emitter_position_m
    c = scene.c_mps
    total = int(round(n_bursts * emission.interval_s * fs))
    wave = np.zeros((geometry.num_mics, total))
    burst = emission.burst()

    # point sources: (position, amplitude), resampled once per frame
    points = []
    for fig in scene.figures:
        rng = np.random.default_rng([rng_seed & 0xFFFFFFFF, frame, fig.key()])
        thetas, phis = fig.sample_reflectors(k_reflectors, frame, rng)
        _, _, r_fig = fig.placement(frame)
        for th, ph in zip(thetas, phis):
            points.append((r_fig * direction_unit(th, ph),
                           fig.reflectivity / r_fig ** 2))
    for th in _WALL_THETAS:
        for ph in _WALL_PHIS:
            u = direction_unit(th, ph)
            r = scene.wall_range_m / u[2]
            points.append((r * u, scene.wall_reflectivity / r ** 2))

    for b in range(n_bursts):
        start = b * emission.interval_s * fs
        # direct wave, fixed gain (not 1/r^2: the emitter sits millimeters
        # from the array and would otherwise swamp the dynamic range)
        for m in range(geometry.num_mics):
            tau = np.linalg.norm(emitter - mics[m]) / c
            _add_at(wave[m], start + tau * fs, burst, scene.direct_gain)
        for pos, amp in points:
            d_emit = np.linalg.norm(pos - emitter)
            d_mics = np.linalg.norm(mics - pos, axis=1)
            for m in range(geometry.num_mics):
                tau = (d_emit + d_mics[m]) / c
                _add_at(wave[m], start + tau * fs, burst, amp)

    if scene.noise_std > 0:
        rng = np.random.default_rng([rng_seed & 0xFFFFFFFF, frame, _NOISE_TAG])
        wave += rng.normal(0.0, scene.noise_std, size=wave.shape)
    return Waveform(wave, fs)


def _add_at(dest, pos_samples, burst, amp):
    """Add amp * burst at a fractional sample position (linear split)."""
    k = int(np.floor(pos_samples))
    f = pos_samples - k
    scaled = amp * burst
    for offset, weight in ((k, 1.0 - f), (k + 1, f)):
        if weight == 0.0 or offset >= dest.size:
            continue
        end = min(offset + scaled.size, dest.size)
        if end <= max(offset, 0):
            continue
        lo = max(offset, 0)
        dest[lo:end] += weight * scaled[lo - offset:end - offset]


def emission_schedule(duration_s, interval_s):
    """Emission times covering a recording of the given duration."""
    n = int(np.floor(duration_s / interval_s + 1e-9))
    return np.arange(n) * interval_s


@dataclass(frozen=True)
class CaptureConfig:
    """Everything the waveform-to-heat-map chain needs besides the scene."""
    emission: EmissionSpec = EmissionSpec()
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry)
    grid: AngularGrid = AngularGrid()
    filter_spec: FilterSpec = FilterSpec()
    guard_s: float = 0.0005
    max_range_m: float = 3.5
    n_bursts: int = 1
    k_reflectors: int = 64
    threads: int | None = None


def waveform_heatmaps(wave: Waveform, cap: CaptureConfig, c_mps):
    """Full front end on a raw capture: band-pass, gate, upsample, beamform.

    Returns one heat map per burst block found in the recording.
    """
    taps = design_bandpass(cap.filter_spec, wave.sample_rate_hz)
    filtered = apply_filter(wave, taps)
    times = emission_schedule(wave.frames / wave.sample_rate_hz,
                              cap.emission.interval_s)
    blocks = split_blocks(
        filtered, times,
        direct_len_s=burst_duration_s(cap.emission.carrier_hz, cap.emission.cycles),
        guard_s=cap.guard_s,
        gate_s=two_way_gate_s(cap.max_range_m, c_mps))
    maps = []
    for block in blocks:
        lo, hi = block.reflected
        gated = filtered.samples[:, lo:hi]
        upsampled = np.stack([upsample4(ch, wave.sample_rate_hz) for ch in gated])
        maps.append(heatmap(upsampled, 4 * wave.sample_rate_hz, cap.geometry,
                            cap.grid, c_mps, threads=cap.threads))
    return maps


def frame_heatmap(scene: SceneSpec, frame, cap: CaptureConfig, rng_seed) -> HeatMap:
    """Capture one frame and average its per-burst heat maps."""
    wave = synth_echo(scene, frame, cap.emission, cap.geometry,
                      cap.n_bursts, rng_seed, cap.k_reflectors)
    maps = waveform_heatmaps(wave, cap, scene.c_mps)
    if not maps:
        raise ValueError("recording too short for a single burst block")
    values = np.mean([m.values for m in maps], axis=0)
    return HeatMap(values=values, grid=cap.grid)


def reference_capture(scene: SceneSpec, cap: CaptureConfig, rng_seed) -> HeatMap:
    """Human-free reference map for subtraction; burst-averaged."""
    if scene.figures:
        raise ValueError("reference capture requires a scene without figures")
    return frame_heatmap(scene, 0, cap, rng_seed)


def frame_sound_image(scene: SceneSpec, frame, cap: CaptureConfig,
                      h_ref: HeatMap, rng_seed):
    """Sound image of one frame given a reference map."""
    h = frame_heatmap(scene, frame, cap, rng_seed)
    return to_sound_image(reference_subtract(h, h_ref))


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetConfig:
    """Knobs for synthetic dataset generation."""
    scenes: int = 10
    frames_per_scene: int = 20
    image_size: int = 32
    capture: CaptureConfig = CaptureConfig()
    wall_range_m: float = 3.0
    noise_std: float = 0.01
    c_mps: float = 343.0
    train_fraction: float = 0.8
    min_figures: int = 1
    max_figures: int = 2
    reference_bursts: int = 4

    def canonical(self):
        """Stable key=value text used for the manifest digest."""
        cap, em, grid = self.capture, self.capture.emission, self.capture.grid
        fsp, geo = self.capture.filter_spec, self.capture.geometry
        items = [
            ("scenes", self.scenes), ("frames_per_scene", self.frames_per_scene),
            ("image_size", self.image_size), ("wall_range_m", self.wall_range_m),
            ("noise_std", self.noise_std), ("c_mps", self.c_mps),
            ("train_fraction", self.train_fraction),
            ("min_figures", self.min_figures), ("max_figures", self.max_figures),
            ("reference_bursts", self.reference_bursts),
            ("carrier_hz", em.carrier_hz), ("cycles", em.cycles),
            ("interval_s", em.interval_s), ("sample_rate_hz", em.sample_rate_hz),
            ("amplitude", em.amplitude),
            ("theta_min_deg", grid.theta_min_deg), ("theta_max_deg", grid.theta_max_deg),
            ("phi_min_deg", grid.phi_min_deg), ("phi_max_deg", grid.phi_max_deg),
            ("n_theta", grid.n_theta), ("n_phi", grid.n_phi),
            ("filter_center_hz", fsp.center_hz),
            ("filter_bandwidth_hz", fsp.bandwidth_hz),
            ("filter_num_taps", fsp.num_taps),
            ("pitch_m", geo.pitch_m), ("rows", geo.rows), ("cols", geo.cols),
            ("emitter_offset_m", geo.emitter_offset_m),
            ("guard_s", cap.guard_s), ("max_range_m", cap.max_range_m),
            ("n_bursts", cap.n_bursts), ("k_reflectors", cap.k_reflectors),
        ]
        return "\n".join(f"{k} = {v!r}" for k, v in items)


@dataclass
class ManifestEntry:
    sound_path: str
    mask_path: str
    frame: int
    split: str


@dataclass
class DatasetManifest:
    """Paths and splits of one generated dataset, plus provenance."""
    entries: list
    seed: int
    digest: str
    root: str = "."

    def split_entries(self, split):
        return [e for e in self.entries if e.split == split]


def write_manifest(manifest: DatasetManifest, path):
    lines = [f"# seed={manifest.seed} digest={manifest.digest}"]
    for e in manifest.entries:
        lines.append(f"{e.sound_path}\t{e.mask_path}\t{e.frame}\t{e.split}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(path):
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("# seed="):
            raise formats.FormatError(f"{path}: missing manifest header")
        try:
            seed_part, digest_part = header[2:].split()
            seed = int(seed_part.split("=", 1)[1])
            digest = digest_part.split("=", 1)[1]
        except (ValueError, IndexError) as exc:
            raise formats.FormatError(f"{path}: malformed manifest header") from exc
        entries = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4 or parts[3] not in ("train", "test"):
                raise formats.FormatError(f"{path}: malformed manifest line {line!r}")
            entries.append(ManifestEntry(parts[0], parts[1], int(parts[2]), parts[3]))
    return DatasetManifest(entries=entries, seed=seed, digest=digest,
                           root=os.path.dirname(os.path.abspath(path)))


def _walk_track(frames, sweep_deg, bob_deg):
    t = np.linspace(0.0, 1.0, frames)
    return tuple((float(sweep_deg * (2 * x - 1)),
                  float(bob_deg * np.sin(4 * np.pi * x)), 0.0) for x in t)


def _stand_track(frames, sway_deg, phase):
    t = np.arange(frames)
    return tuple((float(sway_deg * np.sin(2 * np.pi * x / max(frames, 2) + phase)),
                  0.0, 0.0) for x in t)


def _sit_track(frames, drop_deg):
    t = np.linspace(0.0, 1.0, frames)
    return tuple((0.0, float(-drop_deg * min(1.0, 2 * x)), 0.0) for x in t)


def random_scene(rng, config: DatasetConfig) -> SceneSpec:
    """Draw figures with randomized placement, build, and motion."""
    n_fig = int(rng.integers(config.min_figures, config.max_figures + 1))
    frames = config.frames_per_scene
    figures = []
    for _ in range(n_fig):
        kind = rng.integers(0, 3)
        if kind == 0:
            track = _stand_track(frames, rng.uniform(0.2, 0.8), rng.uniform(0, 2 * np.pi))
        elif kind == 1:
            track = _walk_track(frames, rng.uniform(4.0, 9.0), rng.uniform(0.3, 1.0))
        else:
            track = _sit_track(frames, rng.uniform(5.0, 9.0))
        figures.append(HumanFigure(
            theta_deg=float(rng.uniform(-26.0, 26.0)),
            phi_deg=float(rng.uniform(-18.0, 2.0)),
            range_m=float(rng.uniform(1.2, 2.5)),
            half_width_deg=float(rng.uniform(5.0, 9.0)),
            half_height_deg=float(rng.uniform(14.0, 22.0)),
            head_half_width_deg=float(rng.uniform(2.5, 4.0)),
            head_half_height_deg=float(rng.uniform(3.0, 5.0)),
            pose_track=track,
            reflectivity=float(rng.uniform(0.5, 1.0)),
        ))
    return SceneSpec(figures=tuple(figures), wall_range_m=config.wall_range_m,
                     noise_std=config.noise_std, c_mps=config.c_mps)


def resize_bilinear(img, out_h, out_w):
    """Plain bilinear resize with half-pixel-aligned sampling."""
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape
    r = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0, in_h - 1)
    c = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0, in_w - 1)
    r0 = np.floor(r).astype(int)
    c0 = np.floor(c).astype(int)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    return ((1 - fr) * (1 - fc) * img[np.ix_(r0, c0)]
            + (1 - fr) * fc * img[np.ix_(r0, c1)]
            + fr * (1 - fc) * img[np.ix_(r1, c0)]
            + fr * fc * img[np.ix_(r1, c1)])


def resize_nearest(img, out_h, out_w):
    """Nearest-neighbor resize (masks stay strictly binary)."""
    img = np.asarray(img)
    in_h, in_w = img.shape
    r = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(int), in_h - 1)
    c = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(int), in_w - 1)
    return img[np.ix_(r, c)]


def gen_dataset(config: DatasetConfig, seed, out_dir) -> DatasetManifest:
    """Generate paired (sound image, mask) files plus a manifest.

    The train/test split is by scene, not by frame, so motion within one
    scene never leaks across the split. Output is a pure function of
    (config, seed): same inputs give byte-identical trees.
    """
    os.makedirs(out_dir, exist_ok=True)
    digest = hashlib.sha256(
        (config.canonical() + f"\nseed = {seed}").encode()).hexdigest()[:16]
    cap = config.capture

    ref_scene = SceneSpec(figures=(), wall_range_m=config.wall_range_m,
                          noise_std=config.noise_std, c_mps=config.c_mps)
    ref_cap = CaptureConfig(emission=cap.emission, geometry=cap.geometry,
                            grid=cap.grid, filter_spec=cap.filter_spec,
                            guard_s=cap.guard_s, max_range_m=cap.max_range_m,
                            n_bursts=config.reference_bursts,
                            k_reflectors=cap.k_reflectors, threads=cap.threads)
    h_ref = reference_capture(ref_scene, ref_cap, np.random.default_rng(
        [seed & 0xFFFFFFFF, _REF_TAG]).integers(0, 2 ** 31))

    n_train_scenes = int(round(config.train_fraction * config.scenes))
    entries = []
    scene_rng = np.random.default_rng([seed & 0xFFFFFFFF, 1])
    for s in range(config.scenes):
        scene = random_scene(scene_rng, config)
        split = "train" if s < n_train_scenes else "test"
        scene_dir = f"scene{s:03d}"
        os.makedirs(os.path.join(out_dir, scene_dir), exist_ok=True)
        frame_seed = int(np.random.default_rng([seed & 0xFFFFFFFF, 2, s]).integers(0, 2 ** 31))
        for fr in range(config.frames_per_scene):
            img = frame_sound_image(scene, fr, cap, h_ref, frame_seed)
            mask = render_segmentation(scene, fr, cap.grid)
            small_img = resize_bilinear(img.values, config.image_size, config.image_size)
            small_mask = resize_nearest(mask, config.image_size, config.image_size)
            sound_rel = f"{scene_dir}/frame{fr:03d}_us.pfm"
            mask_rel = f"{scene_dir}/frame{fr:03d}_seg.pgm"
            formats.write_pfm(os.path.join(out_dir, sound_rel), small_img)
            formats.write_pgm(os.path.join(out_dir, mask_rel), small_mask)
            entries.append(ManifestEntry(sound_rel, mask_rel, fr, split))

    manifest = DatasetManifest(entries=entries, seed=int(seed), digest=digest,
                               root=str(out_dir))
    write_manifest(manifest, os.path.join(out_dir, "manifest.txt"))
    return manifest

"""Binary file formats used across the pipeline.

Four formats, all little-endian:

* MCW1  -- multichannel waveform capture (float32, channel-interleaved)
* PFM   -- single-channel portable float map (heat maps, sound images,
           probability maps)
* PGM   -- binary P5 grayscale, used for segmentation masks (0=background,
           255=person)
* CLV1  -- model checkpoint: named float64 parameter blobs plus RNG seed
           and epoch trailer
"""

import struct

import numpy as np


class FormatError(Exception):
    """A file failed to parse: wrong magic, truncated payload, bad header."""


# ---------------------------------------------------------------------------
# MCW1 multichannel waveforms
#
# magic 'MCW1' | u32 channels | u32 sample_rate_hz | u64 frames |
# frames x channels float32, channel-interleaved (all channels of frame 0,
# then frame 1, ...)
# ---------------------------------------------------------------------------

MCW1_MAGIC = b"MCW1"


def write_mcw1(path, samples, sample_rate_hz):
    """Write per-channel samples (channels, frames) as an MCW1 file."""
    samples = np.asarray(samples, dtype=np.float32)
    if samples.ndim != 2:
        raise ValueError("samples must be 2-D (channels, frames)")
    channels, frames = samples.shape
    with open(path, "wb") as f:
        f.write(MCW1_MAGIC)
        f.write(struct.pack("<II", channels, int(sample_rate_hz)))
        f.write(struct.pack("<Q", frames))
        # interleave: frame-major on disk
        f.write(samples.T.astype("<f4").tobytes())


def read_mcw1(path):
    """Read an MCW1 file, returning (samples (channels, frames) float64, rate)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MCW1_MAGIC:
        raise FormatError(f"{path}: not an MCW1 file")
    if len(data) < 20:
        raise FormatError(f"{path}: truncated MCW1 header")
    channels, rate = struct.unpack_from("<II", data, 4)
    (frames,) = struct.unpack_from("<Q", data, 12)
    need = 20 + 4 * channels * frames
    if len(data) < need:
        raise FormatError(f"{path}: truncated MCW1 payload "
                          f"({len(data)} bytes, expected {need})")
    flat = np.frombuffer(data, dtype="<f4", count=channels * frames, offset=20)
    return flat.reshape(frames, channels).T.astype(np.float64), rate


# ---------------------------------------------------------------------------
# PFM (single channel, grayscale 'Pf')
#
# header: 'Pf\n<width> <height>\n-1.0\n'; then rows bottom-to-top of
# little-endian float32. Negative scale marks little-endian.
# ---------------------------------------------------------------------------


def write_pfm(path, image):
    """Write a 2-D float image as grayscale PFM."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError("PFM image must be 2-D")
    height, width = image.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(image).astype("<f4").tobytes())


def read_pfm(path):
    """Read a grayscale PFM written by write_pfm; returns float64 (h, w)."""
    with open(path, "rb") as f:
        magic = f.readline().rstrip()
        if magic != b"Pf":
            raise FormatError(f"{path}: not a grayscale PFM")
        try:
            width, height = map(int, f.readline().split())
            scale = float(f.readline())
        except ValueError as exc:
            raise FormatError(f"{path}: malformed PFM header") from exc
        if scale >= 0:
            raise FormatError(f"{path}: big-endian PFM not supported")
        payload = f.read(4 * width * height)
    if len(payload) != 4 * width * height:
        raise FormatError(f"{path}: truncated PFM payload")
    rows = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return np.flipud(rows).astype(np.float64)


# ---------------------------------------------------------------------------
# PGM P5 masks (maxval 255; 0 = background, 255 = person)
# ---------------------------------------------------------------------------


def write_pgm(path, mask):
    """Write a binary mask (any nonzero = person) as P5 PGM."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    height, width = mask.shape
    body = np.where(mask != 0, 255, 0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(body.tobytes())


def read_pgm(path):
    """Read a P5 PGM; returns a uint8 {0,1} mask (nonzero pixel = 1)."""
    with open(path, "rb") as f:
        magic = f.readline().rstrip()
        if magic != b"P5":
            raise FormatError(f"{path}: not a binary PGM")
        try:
            width, height = map(int, f.readline().split())
            maxval = int(f.readline())
        except ValueError as exc:
            raise FormatError(f"{path}: malformed PGM header") from exc
        if maxval != 255:
            raise FormatError(f"{path}: unsupported PGM maxval {maxval}")
        payload = f.read(width * height)
    if len(payload) != width * height:
        raise FormatError(f"{path}: truncated PGM payload")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return (img != 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# CLV1 checkpoints
#
# magic 'CLV1' | u32 blob count | per blob:
#   u32 name length | name UTF-8 | u32 rank | u32 dims... | float64 values
# trailer: u64 RNG seed | u32 epoch
# ---------------------------------------------------------------------------

CLV1_MAGIC = b"CLV1"


def write_clv1(path, blobs, seed, epoch):
    """Write named float64 arrays plus (seed, epoch) as a CLV1 checkpoint.

    `blobs` is a name -> array mapping; insertion order is preserved on disk.
    """
    with open(path, "wb") as f:
        f.write(CLV1_MAGIC)
        f.write(struct.pack("<I", len(blobs)))
        for name, values in blobs.items():
            arr = np.asarray(values, dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())
        f.write(struct.pack("<QI", int(seed), int(epoch)))


def read_clv1(path):
    """Read a CLV1 checkpoint; returns (blobs dict, seed, epoch)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CLV1_MAGIC:
        raise FormatError(f"{path}: not a CLV1 checkpoint")
    offset = 4
    try:
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        blobs = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode("utf-8")
            if len(data) < offset + name_len:
                raise FormatError(f"{path}: truncated CLV1 blob name")
            offset += name_len
            (rank,) = struct.unpack_from("<I", data, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            end = offset + 8 * n
            if len(data) < end:
                raise FormatError(f"{path}: truncated CLV1 blob payload")
            values = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
            blobs[name] = values.reshape(dims).copy()
            offset = end
        seed, epoch = struct.unpack_from("<QI", data, offset)
        offset += 12
    except struct.error as exc:
        raise FormatError(f"{path}: truncated CLV1 checkpoint") from exc
    return blobs, seed, epoch

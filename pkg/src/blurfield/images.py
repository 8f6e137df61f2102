"""Core raster types and sensor channel semantics.

An :class:`Image` is a row-major float32 raster (top-down scanlines) with one
or more channels over a shared pixel grid. A :class:`SensorDescriptor` names
the pixel-channel layout of a sensor and produces per-channel supervision
masks: each channel is only measured at the sensor sites its color filter or
photodiode actually covers. Dual-pixel layouts are represented as extra
channels over the same grid rather than separate images, so per-channel sums
stay uniform downstream.

A :class:`Kernel2D` is a discrete 2D point-spread function sampled on an odd
grid of integer pixel displacements centered at zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .validation import check_finite, check_odd

MAX_KERNEL_SAMPLES = 120


class ChannelLayout(enum.Enum):
    """Pixel-channel layout of a sensor."""

    MONO = "MONO"          # single channel, every site measured
    RGGB = "RGGB"          # Bayer CFA, channels [R, G1, G2, B]
    DP_G_LR = "DP_G_LR"    # dual-pixel green, channels [L, R]
    RGGB_DP = "RGGB_DP"    # Bayer + dual pixel, [R_L, R_R, G1_L, G1_R, G2_L, G2_R, B_L, B_R]

    @property
    def channels(self) -> int:
        return {"MONO": 1, "RGGB": 4, "DP_G_LR": 2, "RGGB_DP": 8}[self.value]


# (row parity, col parity) of the top-left site of each Bayer phase.
_CFA_PHASES = {"R": (0, 0), "G1": (0, 1), "G2": (1, 0), "B": (1, 1)}


@dataclass(frozen=True)
class Image:
    """Immutable float32 raster, shape (height, width, channels), top-down."""

    width: int
    height: int
    channels: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"image data shape {arr.shape} does not match "
                f"({self.height}, {self.width}, {self.channels})"
            )
        check_finite("image data", arr)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, arr) -> "Image":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"expected a 2D or 3D array, got ndim={arr.ndim}")
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, data=arr)

    def plane(self, c: int) -> np.ndarray:
        """Read-only view of channel c, shape (height, width)."""
        return self.data[:, :, c]

    def crop(self, x0: int, y0: int, width: int, height: int) -> "Image":
        if x0 < 0 or y0 < 0 or x0 + width > self.width or y0 + height > self.height:
            raise ValueError("crop region exceeds image bounds")
        return Image.from_array(self.data[y0 : y0 + height, x0 : x0 + width, :])


@dataclass(frozen=True)
class SensorDescriptor:
    """Sensor geometry, channel layout, and raw digital-number range."""

    width: int
    height: int
    layout: ChannelLayout
    black_level: float = 0.0
    white_level: float = 1.0

    def __post_init__(self):
        if isinstance(self.layout, str):
            object.__setattr__(self, "layout", ChannelLayout(self.layout))
        if self.width < 1 or self.height < 1:
            raise ValueError("sensor dimensions must be positive")
        if not self.black_level < self.white_level:
            raise ValueError(
                f"black_level ({self.black_level}) must be below "
                f"white_level ({self.white_level})"
            )

    @property
    def channels(self) -> int:
        return self.layout.channels

    def with_size(self, width: int, height: int) -> "SensorDescriptor":
        return SensorDescriptor(width, height, self.layout, self.black_level, self.white_level)


def channel_mask(sensor: SensorDescriptor, channel_index: int) -> Image:
    """Binary mask of the sensor sites that measure the given channel.

    RGGB masks are the four disjoint CFA phases and partition the grid.
    Dual-pixel layouts put both photodiodes behind the same site, so left
    and right channels share a mask: the green phases for DP_G_LR, the
    channel's own CFA phase for RGGB_DP.
    """
    c = int(channel_index)
    if c < 0 or c >= sensor.channels:
        raise ValueError(f"channel_index {c} out of range for C={sensor.channels}")
    mask = np.zeros((sensor.height, sensor.width), dtype=np.float32)
    layout = sensor.layout
    if layout is ChannelLayout.MONO:
        mask[:, :] = 1.0
    elif layout is ChannelLayout.RGGB:
        r0, c0 = _CFA_PHASES[("R", "G1", "G2", "B")[c]]
        mask[r0::2, c0::2] = 1.0
    elif layout is ChannelLayout.DP_G_LR:
        # both photodiodes live at the green sites
        for phase in ("G1", "G2"):
            r0, c0 = _CFA_PHASES[phase]
            mask[r0::2, c0::2] = 1.0
    elif layout is ChannelLayout.RGGB_DP:
        r0, c0 = _CFA_PHASES[("R", "G1", "G2", "B")[c // 2]]
        mask[r0::2, c0::2] = 1.0
    return Image.from_array(mask)


def linearize(image: Image, sensor: SensorDescriptor) -> Image:
    """Map raw digital numbers to linear intensity in [0, 1].

    Applies (DN - black_level) / (white_level - black_level), clamped to
    [0, 1]. Identity for data already stored with black 0 / white 1.
    """
    if sensor.black_level == 0.0 and sensor.white_level == 1.0:
        return image
    scale = sensor.white_level - sensor.black_level
    lin = np.clip((image.data - sensor.black_level) / scale, 0.0, 1.0)
    return Image.from_array(lin)


@dataclass(frozen=True)
class Kernel2D:
    """Discrete 2D PSF: nonnegative per-channel weights on an odd sample grid.

    ``samples`` has shape (channels, kv, ku); entry (c, j, i) is the weight at
    displacement u = (i - (ku-1)/2) * pixel_pitch horizontally and
    v = (j - (kv-1)/2) * pixel_pitch vertically.
    """

    ku: int
    kv: int
    channels: int
    samples: np.ndarray = field(repr=False)
    pixel_pitch: float = 1.0

    def __post_init__(self):
        check_odd("ku", self.ku)
        check_odd("kv", self.kv)
        if self.ku > MAX_KERNEL_SAMPLES or self.kv > MAX_KERNEL_SAMPLES:
            raise ValueError(
                f"kernel sample counts ({self.ku}, {self.kv}) exceed "
                f"{MAX_KERNEL_SAMPLES}"
            )
        arr = np.asarray(self.samples, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.shape != (self.channels, self.kv, self.ku):
            raise ValueError(
                f"kernel sample shape {arr.shape} does not match "
                f"({self.channels}, {self.kv}, {self.ku})"
            )
        check_finite("kernel samples", arr)
        if np.any(arr < 0):
            raise ValueError("kernel samples must be nonnegative")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @classmethod
    def from_array(cls, arr, pixel_pitch: float = 1.0) -> "Kernel2D":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        c, kv, ku = arr.shape
        return cls(ku=ku, kv=kv, channels=c, samples=arr, pixel_pitch=pixel_pitch)

    def offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """(u, v) displacement coordinates of the sample columns and rows."""
        u = (np.arange(self.ku) - (self.ku - 1) / 2.0) * self.pixel_pitch
        v = (np.arange(self.kv) - (self.kv - 1) / 2.0) * self.pixel_pitch
        return u, v

    def normalized(self) -> "Kernel2D":
        """Rescale every channel to unit mass (channels with zero mass stay zero)."""
        sums = self.samples.sum(axis=(1, 2), keepdims=True)
        safe = np.where(sums > 0, sums, 1.0)
        return Kernel2D.from_array(self.samples / safe, self.pixel_pitch)

    def channel(self, c: int) -> np.ndarray:
        return self.samples[c]

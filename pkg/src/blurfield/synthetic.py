"""Simulated focal stacks with known ground-truth blur.

Generates antialiased thin-lens defocus discs, ramp-weighted dual-pixel
half-aperture pairs, band-limited noise calibration patterns, a sensor noise
model (Poisson shot noise, Gaussian read noise, ADC quantization), and whole
simulated focal stacks written as standard manifests.

All randomness flows through numpy SeedSequence streams keyed by (seed,
pattern, focus), so stacks are reproducible frame by frame regardless of
generation order.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.signal import fftconvolve

from .images import ChannelLayout, Image, Kernel2D, SensorDescriptor
from .stacks import FocalStackManifest, FrameRecord, save_manifest
from .pfm import write_frame
from .validation import check_odd, check_positive

# Gaussian low-pass sigma (in samples) of the five noise-pattern bands,
# lowest to highest spatial frequency.
BAND_SIGMAS = (16.0, 8.0, 4.0, 2.0, 1.0)


@dataclass(frozen=True)
class ThinLensConfig:
    """Thin-lens defocus sweep: linear in diopters, radius pinned at the ends."""

    focal_length: float = 0.030        # m
    target_distance: float = 0.40      # m
    n_focus: int = 21
    r_min: float = 0.5                 # px
    r_max: float = 24.0                # px
    sweep: str = "one_sided"           # or "two_sided"
    diopter_span: float = 1.0          # extent of the sweep from the target

    def __post_init__(self):
        if not (0 < self.r_min <= self.r_max):
            raise ValueError("need 0 < r_min <= r_max")
        if self.n_focus < 2:
            raise ValueError("n_focus must be >= 2")
        if self.sweep not in ("one_sided", "two_sided"):
            raise ValueError(f"unknown sweep {self.sweep!r}")
        check_positive("focal_length", self.focal_length)
        check_positive("target_distance", self.target_distance)
        check_positive("diopter_span", self.diopter_span)

    @property
    def target_diopter(self) -> float:
        return 1.0 / self.target_distance


@dataclass(frozen=True)
class NoiseConfig:
    """Sensor noise model parameters; read_sigma is a fraction of full scale."""

    read_sigma: float = 0.01
    full_scale_electrons: float = 10000.0
    bit_depth: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.read_sigma < 0:
            raise ValueError("read_sigma must be >= 0")
        if not (8 <= self.bit_depth <= 16):
            raise ValueError("bit_depth must be in [8, 16]")
        check_positive("full_scale_electrons", self.full_scale_electrons)


def disc_coverage(radius_px: float, grid_size: int, supersample: int = 4) -> np.ndarray:
    """Fractional cell coverage of a centered disc, supersample^2 points per cell."""
    check_positive("radius_px", radius_px)
    check_odd("grid_size", grid_size)
    if grid_size < 2 * radius_px + 1:
        raise ValueError(
            f"grid_size {grid_size} too small for radius {radius_px} "
            f"(need >= {2 * radius_px + 1})"
        )
    half = (grid_size - 1) / 2.0
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5
    centers = np.arange(grid_size) - half
    pts = (centers[:, None] + sub[None, :]).ravel()  # supersampled coordinates
    xx2 = pts[None, :] ** 2
    yy2 = pts[:, None] ** 2
    inside = (xx2 + yy2) <= radius_px ** 2
    cov = inside.reshape(grid_size, supersample, grid_size, supersample)
    return cov.mean(axis=(1, 3)).astype(np.float64)


def disc_psf(radius_px: float, grid_size: int) -> Kernel2D:
    """Antialiased defocus disc normalized to unit mass."""
    cov = disc_coverage(radius_px, grid_size)
    total = cov.sum()
    if total <= 0:
        raise ValueError("disc has zero coverage; radius too small for supersampling")
    return Kernel2D.from_array((cov / total).astype(np.float32))


def _dp_ramp(radius_px: float, grid_size: int, side_sign: int) -> np.ndarray:
    u = np.arange(grid_size) - (grid_size - 1) / 2.0
    w = np.clip((radius_px - side_sign * u) / (2.0 * radius_px), 0.0, 1.0)
    return np.broadcast_to(w[None, :], (grid_size, grid_size))


def dual_pixel_pair(radius_px: float, grid_size: int,
                    side_sign: int = 1) -> tuple[Kernel2D, Kernel2D]:
    """Left/right dual-pixel half-aperture kernels.

    The full normalized disc is split by a linear ramp across u; the halves
    sum exactly to the disc and mirror each other through u -> -u.
    """
    if side_sign not in (1, -1):
        raise ValueError("side_sign must be +1 or -1")
    disc = disc_psf(radius_px, grid_size).channel(0).astype(np.float64)
    w = _dp_ramp(radius_px, grid_size, side_sign)
    left = disc * w
    right = disc - left  # exact complement, no second rounding
    return Kernel2D.from_array(left.astype(np.float32)), \
        Kernel2D.from_array(right.astype(np.float32))


def radius_schedule(cfg: ThinLensConfig) -> list[tuple[float, float, int]]:
    """(focus_diopter, radius_px, side_sign) per focal-stack frame.

    Diopters are linearly spaced; radius is affine in the absolute diopter
    offset from the target with endpoints pinned to (r_min, r_max). A
    one-sided sweep starts at the target (r_min) and walks away from it; a
    two-sided sweep crosses the target, flipping the dual-pixel orientation.
    """
    dt = cfg.target_diopter
    n = cfg.n_focus
    if cfg.sweep == "one_sided":
        foci = np.linspace(dt, dt + cfg.diopter_span, n)
        offmax = cfg.diopter_span
    else:
        foci = np.linspace(dt - cfg.diopter_span, dt + cfg.diopter_span, n)
        offmax = cfg.diopter_span
    out = []
    for f in foci:
        off = abs(f - dt)
        r = cfg.r_min + (cfg.r_max - cfg.r_min) * off / offmax
        side = 1 if f >= dt else -1
        out.append((float(f), float(r), side))
    return out


def noise_pattern(band: int, size: int, seed: int = 0) -> Image:
    """Band-limited noise pattern spanning [0, 1], deterministic per seed."""
    if band not in range(len(BAND_SIGMAS)):
        raise ValueError(f"band must be in 0..{len(BAND_SIGMAS) - 1}")
    if size < 64:
        raise ValueError("pattern size must be >= 64")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(band, size)))
    white = rng.standard_normal((size, size))
    low = gaussian_filter(white, BAND_SIGMAS[band], mode="reflect")
    lo, hi = low.min(), low.max()
    if hi <= lo:
        raise ValueError("degenerate pattern; increase size")
    return Image.from_array(((low - lo) / (hi - lo)).astype(np.float32))


def add_noise(image: Image, cfg: NoiseConfig,
              rng: np.random.Generator | None = None) -> Image:
    """Apply shot, read, and quantization noise to a linear image in [0, 1]."""
    x = image.data.astype(np.float64)
    if x.min() < 0 or x.max() > 1:
        raise ValueError("add_noise expects values in [0, 1]")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    ne = cfg.full_scale_electrons
    y = rng.poisson(x * ne).astype(np.float64) / ne
    if cfg.read_sigma > 0:
        y += rng.normal(0.0, cfg.read_sigma, size=y.shape)
    y = np.clip(y, 0.0, 1.0)
    levels = 2 ** cfg.bit_depth - 1
    y = np.round(y * levels) / levels
    return Image.from_array(y.astype(np.float32))


def _frame_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def kernels_for(layout: ChannelLayout, radius_px: float, grid_size: int,
                side_sign: int) -> Kernel2D:
    """Ground-truth kernel stack for a sensor layout at one focus setting."""
    if layout is ChannelLayout.MONO:
        return disc_psf(radius_px, grid_size)
    if layout is ChannelLayout.DP_G_LR:
        left, right = dual_pixel_pair(radius_px, grid_size, side_sign)
        return Kernel2D.from_array(
            np.stack([left.channel(0), right.channel(0)], axis=0))
    raise ValueError(f"simulation supports MONO or DP_G_LR, got {layout}")


def simulate_stack(patterns: dict[str, Image], cfg_lens: ThinLensConfig,
                   cfg_noise: NoiseConfig | None, sensor: SensorDescriptor,
                   out_dir, kernel_grid: int | None = None) -> FocalStackManifest:
    """Write a simulated focal stack of the given patterns to ``out_dir``.

    For every pattern and focus setting the sharp frame is the pattern
    itself and the blurry frame is its valid-region convolution with the
    scheduled kernel plus sensor noise; all-black and all-white frames are
    synthesized per focus for radiometric bookkeeping. All frames share the
    crop that the largest kernel support allows, so the emitted sensor
    descriptor is the pattern size minus the kernel margin.

    ``cfg_noise=None`` disables the noise model entirely (no quantization),
    which keeps blur-free identities exact for verification runs.
    """
    if not patterns:
        raise ValueError("need at least one pattern")
    if any(img.channels != 1 for img in patterns.values()):
        raise ValueError("patterns must be single channel")
    layout = sensor.layout
    if layout not in (ChannelLayout.MONO, ChannelLayout.DP_G_LR):
        raise ValueError("simulate_stack supports MONO or DP_G_LR sensors")
    schedule = radius_schedule(cfg_lens)
    if kernel_grid is None:
        kernel_grid = int(2 * np.ceil(max(r for _, r, _ in schedule)) + 1)
        if kernel_grid % 2 == 0:
            kernel_grid += 1
    check_odd("kernel_grid", kernel_grid)

    sizes = {(img.width, img.height) for img in patterns.values()}
    if len(sizes) != 1:
        raise ValueError("all patterns must share one size")
    (pw, ph), = sizes
    if pw < kernel_grid or ph < kernel_grid:
        raise ValueError(
            f"pattern {pw}x{ph} smaller than kernel grid {kernel_grid}"
        )
    half = kernel_grid // 2
    cw, ch = pw - kernel_grid + 1, ph - kernel_grid + 1
    out_sensor = sensor.with_size(cw, ch)
    C = out_sensor.channels

    os.makedirs(out_dir, exist_ok=True)
    pattern_ids = sorted(patterns)
    frames: list[FrameRecord] = []

    # sharp frames: central crop replicated over channels, one file per pattern
    for t, pid in enumerate(pattern_ids):
        crop = patterns[pid].data[half : half + ch, half : half + cw, 0]
        sharp = Image.from_array(np.repeat(crop[:, :, None], C, axis=2))
        fn = f"sharp_{pid}.pfm"
        write_frame(sharp, os.path.join(out_dir, fn))
        for i in range(len(schedule)):
            frames.append(FrameRecord(pid, i, 0, "sharp", fn))

    for i, (f_diop, radius, side) in enumerate(schedule):
        kern = kernels_for(layout, radius, kernel_grid, side)
        for t, pid in enumerate(pattern_ids):
            planes = []
            pat = patterns[pid].data[:, :, 0].astype(np.float64)
            for c in range(C):
                planes.append(fftconvolve(pat, kern.channel(c).astype(np.float64),
                                          mode="valid"))
            frame = Image.from_array(np.clip(np.stack(planes, axis=-1), 0.0, 1.0))
            if cfg_noise is not None:
                frame = add_noise(frame, cfg_noise,
                                  rng=_frame_rng(cfg_noise.seed, 0, t, i))
            fn = f"blurry_{pid}_f{i:02d}.pfm"
            write_frame(frame, os.path.join(out_dir, fn))
            frames.append(FrameRecord(pid, i, 0, "blurry", fn))
        # radiometric extremes: blurred constants stay constant (unit-mass kernels)
        for role, value, kind in (("min", 0.0, 1), ("max", 1.0, 2)):
            frame = Image.from_array(np.full((ch, cw, C), value, dtype=np.float32))
            if cfg_noise is not None:
                frame = add_noise(frame, cfg_noise,
                                  rng=_frame_rng(cfg_noise.seed, kind, 0, i))
            fn = f"{role}_f{i:02d}.pfm"
            write_frame(frame, os.path.join(out_dir, fn))
            frames.append(FrameRecord("__flat__", i, 0, role, fn))

    manifest = FocalStackManifest(
        sensor=out_sensor,
        focus_diopters=tuple(f for f, _, _ in schedule),
        distances_m=(cfg_lens.target_distance,),
        frames=tuple(frames),
        base_dir=os.fspath(out_dir),
    )
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    with open(os.path.join(out_dir, "simulation.json"), "w", encoding="utf-8") as fh:
        json.dump({
            "lens": asdict(cfg_lens),
            "noise": asdict(cfg_noise),
            "kernel_grid": kernel_grid,
            "layout": layout.value,
            "pattern_ids": pattern_ids,
        }, fh, indent=2)
    return manifest

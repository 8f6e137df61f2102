"""Focal-stack manifests: the on-disk index of a capture or simulation.

A manifest lists the sensor, the focus settings (diopters), the target
distances (meters), and one record per frame file. Frame roles:

- ``blurry``: captured (or simulated) image of a pattern at some focus.
- ``sharp``: blur-free reference for the same pattern and focus.
- ``min`` / ``max``: all-black / all-white captures used for radiometric
  compensation; required at every (focus, distance) a blurry frame uses.
- ``dots`` / ``dots_inv``: dot-grid registration captures.

Frame files are PFM; sensors with channel counts PFM cannot carry natively
store channel planes stacked vertically (see :mod:`blurfield.pfm`).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

from .errors import ManifestError
from .images import ChannelLayout, Image, SensorDescriptor, linearize
from .pfm import read_frame, write_frame

FRAME_ROLES = ("blurry", "sharp", "min", "max", "dots", "dots_inv")

_SENSOR_KEYS = {"width", "height", "layout", "black_level", "white_level"}
_MANIFEST_KEYS = {"version", "sensor", "focus_diopters", "distances_m", "frames"}
_FRAME_KEYS = {"pattern_id", "focus_index", "distance_index", "role", "file"}


@dataclass(frozen=True)
class FrameRecord:
    pattern_id: str
    focus_index: int
    distance_index: int
    role: str
    file: str


@dataclass(frozen=True)
class FocalStackManifest:
    sensor: SensorDescriptor
    focus_diopters: tuple[float, ...]
    distances_m: tuple[float, ...]
    frames: tuple[FrameRecord, ...]
    base_dir: str = "."

    def frames_with_role(self, role: str, focus_index: int | None = None,
                         distance_index: int | None = None,
                         pattern_id: str | None = None) -> list[FrameRecord]:
        out = []
        for fr in self.frames:
            if fr.role != role:
                continue
            if focus_index is not None and fr.focus_index != focus_index:
                continue
            if distance_index is not None and fr.distance_index != distance_index:
                continue
            if pattern_id is not None and fr.pattern_id != pattern_id:
                continue
            out.append(fr)
        return out

    def pattern_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for fr in self.frames:
            if fr.role == "blurry":
                seen.setdefault(fr.pattern_id, None)
        return list(seen)

    def frame_path(self, frame: FrameRecord) -> str:
        return os.path.normpath(os.path.join(self.base_dir, frame.file))

    def load_frame(self, frame: FrameRecord) -> Image:
        img = read_frame(self.frame_path(frame), self.sensor.channels)
        if (img.width, img.height) != (self.sensor.width, self.sensor.height):
            raise ManifestError(
                f"frame {frame.file} is {img.width}x{img.height}, sensor is "
                f"{self.sensor.width}x{self.sensor.height}"
            )
        return linearize(img, self.sensor)


def _require_keys(obj: dict, required: set, what: str) -> None:
    keys = set(obj)
    if keys != required:
        missing = required - keys
        extra = keys - required
        parts = []
        if missing:
            parts.append(f"missing {sorted(missing)}")
        if extra:
            parts.append(f"unknown {sorted(extra)}")
        raise ManifestError(f"{what}: {'; '.join(parts)}")


def _parse_sensor(obj: dict) -> SensorDescriptor:
    _require_keys(obj, _SENSOR_KEYS, "sensor object")
    try:
        layout = ChannelLayout(obj["layout"])
    except ValueError:
        raise ManifestError(f"unknown sensor layout {obj['layout']!r}") from None
    try:
        return SensorDescriptor(
            width=int(obj["width"]), height=int(obj["height"]), layout=layout,
            black_level=float(obj["black_level"]), white_level=float(obj["white_level"]),
        )
    except ValueError as e:
        raise ManifestError(str(e)) from e


def validate_manifest(manifest: FocalStackManifest, check_files: bool = True) -> None:
    """Enforce manifest invariants; raises :class:`ManifestError` on violation."""
    nf, nd = len(manifest.focus_diopters), len(manifest.distances_m)
    if nf == 0 or nd == 0:
        raise ManifestError("focus_diopters and distances_m must be nonempty")
    pairs_with = {role: set() for role in FRAME_ROLES}
    for fr in manifest.frames:
        if fr.role not in FRAME_ROLES:
            raise ManifestError(f"unknown frame role {fr.role!r}")
        if not (0 <= fr.focus_index < nf):
            raise ManifestError(
                f"focus_index {fr.focus_index} out of range [0, {nf}) in {fr.file}"
            )
        if not (0 <= fr.distance_index < nd):
            raise ManifestError(
                f"distance_index {fr.distance_index} out of range [0, {nd}) in {fr.file}"
            )
        pairs_with[fr.role].add((fr.focus_index, fr.distance_index))
        if check_files and not os.path.isfile(manifest.frame_path(fr)):
            raise ManifestError(f"missing frame file {manifest.frame_path(fr)}")
    for pair in sorted(pairs_with["blurry"]):
        for role in ("min", "max"):
            if pair not in pairs_with[role]:
                raise ManifestError(
                    f"blurry frames at (focus={pair[0]}, distance={pair[1]}) "
                    f"have no {role!r} frame at that pair"
                )


def load_manifest(path) -> FocalStackManifest:
    with open(path, "r", encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ManifestError(f"manifest is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ManifestError("manifest root must be a JSON object")
    _require_keys(obj, _MANIFEST_KEYS, "manifest object")
    if obj["version"] != 1:
        raise ManifestError(f"unsupported manifest version {obj['version']!r}")
    sensor = _parse_sensor(obj["sensor"])
    frames = []
    for i, fobj in enumerate(obj["frames"]):
        _require_keys(fobj, _FRAME_KEYS, f"frame {i}")
        frames.append(FrameRecord(
            pattern_id=str(fobj["pattern_id"]),
            focus_index=int(fobj["focus_index"]),
            distance_index=int(fobj["distance_index"]),
            role=str(fobj["role"]),
            file=str(fobj["file"]),
        ))
    manifest = FocalStackManifest(
        sensor=sensor,
        focus_diopters=tuple(float(x) for x in obj["focus_diopters"]),
        distances_m=tuple(float(x) for x in obj["distances_m"]),
        frames=tuple(frames),
        base_dir=os.path.dirname(os.path.abspath(os.fspath(path))),
    )
    validate_manifest(manifest)
    return manifest


def save_manifest(manifest: FocalStackManifest, path, check_files: bool = True) -> None:
    validate_manifest(replace(manifest, base_dir=os.path.dirname(os.path.abspath(os.fspath(path)))),
                      check_files=check_files)
    obj = {
        "version": 1,
        "sensor": {
            "width": manifest.sensor.width,
            "height": manifest.sensor.height,
            "layout": manifest.sensor.layout.value,
            "black_level": manifest.sensor.black_level,
            "white_level": manifest.sensor.white_level,
        },
        "focus_diopters": list(manifest.focus_diopters),
        "distances_m": list(manifest.distances_m),
        "frames": [
            {
                "pattern_id": fr.pattern_id,
                "focus_index": fr.focus_index,
                "distance_index": fr.distance_index,
                "role": fr.role,
                "file": fr.file,
            }
            for fr in manifest.frames
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def split_focus_indices(n_focus: int) -> tuple[list[int], list[int]]:
    """Hold out every other focus index: even indices train, odd validate."""
    idx = list(range(n_focus))
    return idx[0::2], idx[1::2]

"""Bit-exact file I/O for scenes, masks, images, and feature maps.

Formats:
  scene.gsp   16-byte header (8-byte magic ``GSPWSCN\\0``, u32 version,
              u32 reserved, little-endian), a u32-length-prefixed JSON
              metadata block (feature_dim, ids, cameras, trajectory,
              manifold params), then a packed float32 primitive table:
              position[3], scale[3], rotation[4] (w,x,y,z), opacity,
              color[3], feature[D] per primitive.
  masks       binary PGM (P5), nonzero = masked.
  images      binary PPM (P6), 8-bit.
  alpha/depth 16-bit PGM (P5, maxval 65535, big-endian samples per netpbm);
              alpha scaled by 65535, depth stored in whole centimeters.
  *.fmap      u32 H', u32 W', u32 D then float32 row-major data,
              little-endian.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError, UnsupportedVersionError, ValidationError
from .scene import FORMAT_VERSION, Camera, FeatureMap, FrameMask, Scene, validate_scene

MAGIC = b"GSPWSCN\x00"
DEPTH_CM_PER_UNIT = 1.0  # depth PGM samples are centimeters


def _meta_bytes(scene: Scene) -> bytes:
    meta = {
        "feature_dim": int(scene.feature_dim),
        "primitive_count": scene.num_primitives,
        "ids": [int(i) for i in scene.ids],
        "cameras": [c.to_dict() for c in scene.cameras],
        "trajectory": [[float(v) for v in row] for row in scene.trajectory],
        "manifold": scene.manifold,
    }
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_scene(scene: Scene, path: str | Path) -> None:
    violations = validate_scene(scene)
    if violations:
        raise ValidationError(f"refusing to save invalid scene: {violations[0]}", violations)
    meta = _meta_bytes(scene)
    n, d = scene.num_primitives, scene.feature_dim
    table = np.empty((n, 14 + d), dtype="<f4")
    table[:, 0:3] = scene.positions
    table[:, 3:6] = scene.scales
    table[:, 6:10] = scene.rotations
    table[:, 10] = scene.opacities
    table[:, 11:14] = scene.colors
    table[:, 14:] = scene.features
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([scene.version], dtype="<u4").tobytes())
        fh.write(b"\x00\x00\x00\x00")
        fh.write(np.array([len(meta)], dtype="<u4").tobytes())
        fh.write(meta)
        fh.write(table.tobytes())


def load_scene(path: str | Path) -> Scene:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError("file shorter than the 16-byte header", offset=len(raw))
    if raw[:8] != MAGIC:
        raise FormatError("bad magic, not a scene file", offset=0)
    version = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"scene file version {version} unsupported (expected {FORMAT_VERSION})"
        )
    if len(raw) < 20:
        raise FormatError("truncated metadata length field", offset=16)
    meta_len = int(np.frombuffer(raw[16:20], dtype="<u4")[0])
    meta_end = 20 + meta_len
    if len(raw) < meta_end:
        raise FormatError("truncated metadata block", offset=len(raw))
    try:
        meta = json.loads(raw[20:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata block is not valid JSON: {exc}", offset=20) from exc

    d = int(meta["feature_dim"])
    n = int(meta["primitive_count"])
    row_bytes = 4 * (14 + d)
    expected = meta_end + n * row_bytes
    if len(raw) != expected:
        raise FormatError(
            f"primitive table has {len(raw) - meta_end} bytes, expected {n * row_bytes}",
            offset=meta_end,
        )
    table = np.frombuffer(raw[meta_end:], dtype="<f4").reshape(n, 14 + d).astype(np.float64)

    ids = np.array(meta["ids"], dtype=np.int64)
    if ids.shape[0] != n:
        raise FormatError(f"metadata lists {ids.shape[0]} ids for {n} primitives", offset=20)
    scene = Scene(
        feature_dim=d,
        ids=ids,
        positions=table[:, 0:3].copy(),
        scales=table[:, 3:6].copy(),
        rotations=table[:, 6:10].copy(),
        opacities=table[:, 10].copy(),
        colors=table[:, 11:14].copy(),
        features=table[:, 14:].copy(),
        cameras=[Camera.from_dict(c) for c in meta["cameras"]],
        trajectory=np.array(meta["trajectory"], dtype=np.float64).reshape(-1, 3),
        manifold=meta.get("manifold"),
        version=version,
    )
    violations = validate_scene(scene)
    if violations:
        raise ValidationError(f"scene file fails validation: {violations[0]}", violations)
    return scene


def _read_pnm_header(raw: bytes, magic: bytes, path) -> tuple[int, int, int, int]:
    """Parse a PNM header; returns (width, height, maxval, data offset)."""
    if raw[:2] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} header", offset=0)
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header", offset=pos)
        try:
            fields.append(int(raw[start:pos]))
        except ValueError as exc:
            raise FormatError(f"{path}: bad header field {raw[start:pos]!r}", offset=start) from exc
    pos += 1  # single whitespace after maxval
    return fields[0], fields[1], fields[2], pos


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    mask = np.asarray(mask)
    h, w = mask.shape
    data = np.where(mask, 255, 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def load_mask(path: str | Path, frame_index: int | None = None) -> FrameMask:
    raw = Path(path).read_bytes()
    w, h, maxval, pos = _read_pnm_header(raw, b"P5", path)
    if maxval > 255:
        raise FormatError(f"{path}: masks must be 8-bit PGM", offset=2)
    if len(raw) - pos < w * h:
        raise FormatError(f"{path}: truncated pixel data", offset=len(raw))
    bitmap = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8).reshape(h, w) != 0
    if frame_index is None:
        frame_index = _frame_index_from_name(path)
    return FrameMask(frame_index=frame_index, bitmap=bitmap)


def save_image(rgb: np.ndarray, path: str | Path) -> None:
    """Write an H x W x 3 float image in [0, 1] as 8-bit binary PPM."""
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w, _ = rgb.shape
    data = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def load_image(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    w, h, maxval, pos = _read_pnm_header(raw, b"P6", path)
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM supported", offset=2)
    if len(raw) - pos < 3 * w * h:
        raise FormatError(f"{path}: truncated pixel data", offset=len(raw))
    data = np.frombuffer(raw[pos : pos + 3 * w * h], dtype=np.uint8).reshape(h, w, 3)
    return data.astype(np.float64) / 255.0


def save_gray16(values: np.ndarray, path: str | Path, scale: float) -> None:
    """Write a float image as 16-bit PGM after multiplying by `scale`."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    data = np.clip(np.round(values * scale), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(data.tobytes())


def load_gray16(path: str | Path, scale: float) -> np.ndarray:
    raw = Path(path).read_bytes()
    w, h, maxval, pos = _read_pnm_header(raw, b"P5", path)
    if maxval != 65535:
        raise FormatError(f"{path}: expected 16-bit PGM", offset=2)
    if len(raw) - pos < 2 * w * h:
        raise FormatError(f"{path}: truncated pixel data", offset=len(raw))
    data = np.frombuffer(raw[pos : pos + 2 * w * h], dtype=">u2").reshape(h, w)
    return data.astype(np.float64) / scale


def save_alpha(alpha: np.ndarray, path: str | Path) -> None:
    save_gray16(alpha, path, 65535.0)


def load_alpha(path: str | Path) -> np.ndarray:
    return load_gray16(path, 65535.0)


def save_depth(depth_m: np.ndarray, path: str | Path) -> None:
    save_gray16(depth_m, path, 100.0)  # centimeters


def load_depth(path: str | Path) -> np.ndarray:
    return load_gray16(path, 100.0)


def save_feature_map(fmap: FeatureMap | np.ndarray, path: str | Path) -> None:
    data = fmap.data if isinstance(fmap, FeatureMap) else np.asarray(fmap)
    h, w, d = data.shape
    with open(path, "wb") as fh:
        fh.write(np.array([h, w, d], dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def load_feature_map(path: str | Path, frame_index: int | None = None) -> FeatureMap:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated feature-map header", offset=len(raw))
    h, w, d = (int(v) for v in np.frombuffer(raw[:12], dtype="<u4"))
    expected = 12 + 4 * h * w * d
    if len(raw) != expected:
        raise FormatError(
            f"{path}: feature map has {len(raw) - 12} data bytes, expected {4 * h * w * d}",
            offset=12,
        )
    data = np.frombuffer(raw[12:], dtype="<f4").reshape(h, w, d).astype(np.float64)
    if not np.isfinite(data).all():
        raise ValidationError(f"{path}: feature map contains non-finite values")
    if frame_index is None:
        frame_index = _frame_index_from_name(path)
    return FeatureMap(frame_index=frame_index, data=data)


def _frame_index_from_name(path: str | Path) -> int:
    """Frame index from a name like mask_0007.pgm; -1 when absent."""
    stem = Path(path).stem
    digits = "".join(ch for ch in stem if ch.isdigit())
    return int(digits) if digits else -1


def load_frame_dir(directory: str | Path, suffix: str, loader) -> list:
    """Load every `*suffix` file in a directory, ordered by frame index."""
    paths = sorted(Path(directory).glob(f"*{suffix}"), key=_frame_index_from_name)
    return [loader(p) for p in paths]

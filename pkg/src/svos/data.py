"""Video data: codec-free PPM/PGM I/O, the manifest format with skip-frame
annotations, bilinear/nearest resizing, affine augmentation pairs for online
fine-tuning, and a synthetic moving-object video generator.

Frames are (H, W, 3) uint8 arrays; masks are (H, W) uint8 arrays in {0, 1}
(stored on disk as 0/255 graymaps).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Portable pixmap / graymap I/O


def _read_pnm_tokens(raw: bytes, count: int, path) -> tuple[list[int], int]:
    """Read `count` whitespace-separated header integers, honoring # comments.

    Returns the integers and the offset of the first pixel byte.
    """
    tokens: list[int] = []
    i = 0
    while len(tokens) < count:
        if i >= len(raw):
            raise DataError(f"truncated header in {path}")
        c = raw[i:i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < len(raw) and raw[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(raw) and not raw[j:j + 1].isspace():
                j += 1
            try:
                tokens.append(int(raw[i:j]))
            except ValueError:
                raise DataError(f"bad header token {raw[i:j]!r} in {path}") from None
            i = j
    return tokens, i + 1  # single whitespace byte after maxval


def _load_pnm(path, magic: bytes) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing image file: {path}")
    raw = path.read_bytes()
    if raw[:2] != magic:
        raise DataError(f"{path}: expected {magic.decode()} file")
    (w, h, maxval), offset = _read_pnm_tokens(raw[2:], 3, path)
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit images supported, maxval={maxval}")
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    body = raw[2 + offset:2 + offset + need]
    if len(body) != need:
        raise DataError(f"{path}: expected {need} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def pnm_size(path) -> tuple[int, int]:
    """Read (height, width) from a PPM/PGM header without decoding pixels."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing image file: {path}")
    with open(path, "rb") as f:
        head = f.read(256)
    if head[:2] not in (b"P5", b"P6"):
        raise DataError(f"{path}: not a binary PPM/PGM file")
    (w, h, _), _ = _read_pnm_tokens(head[2:], 3, path)
    return h, w


def read_ppm(path) -> np.ndarray:
    return _load_pnm(path, b"P6")


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"write_ppm expects (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())


def read_mask(path) -> np.ndarray:
    """Load a binary mask stored as a 0/255 graymap; returns values in {0, 1}."""
    gray = _load_pnm(path, b"P5")
    if not np.isin(gray, (0, 255)).all():
        raise DataError(f"{path}: mask values must be 0 or 255")
    return (gray // 255).astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DataError(f"write_mask expects (H, W), got {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise DataError("write_mask expects values in {0, 1}")
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write((mask.astype(np.uint8) * 255).tobytes())


# ---------------------------------------------------------------------------
# Resizing (align-corners)


def _axis_coords(n_in: int, n_out: int) -> np.ndarray:
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resampling of (H, W) or (H, W, C) arrays."""
    if out_h < 1 or out_w < 1:
        raise DataError("resize_bilinear: output extents must be >= 1")
    img = np.asarray(img)
    h, w = img.shape[:2]
    dtype = img.dtype if img.dtype in (np.float32, np.float64) else np.float32
    src = img.astype(dtype, copy=False)
    if (out_h, out_w) == (h, w):
        return src.copy()
    ys = _axis_coords(h, out_h).astype(dtype)
    xs = _axis_coords(w, out_w).astype(dtype)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(dtype)
    fx = (xs - x0).astype(dtype)
    if img.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize; binary masks stay binary."""
    if out_h < 1 or out_w < 1:
        raise DataError("resize_nearest: output extents must be >= 1")
    mask = np.asarray(mask)
    h, w = mask.shape[:2]
    ys = np.clip(np.rint(_axis_coords(h, out_h)).astype(np.int64), 0, h - 1)
    xs = np.clip(np.rint(_axis_coords(w, out_w)).astype(np.int64), 0, w - 1)
    return mask[ys][:, xs].copy()


def prepare_frame(img: np.ndarray, out_h: int, out_w: int, dtype=np.float32) -> np.ndarray:
    """uint8 (H, W, 3) frame -> channels-first float array in [0, 1] at the
    model input size."""
    if img.shape[:2] != (out_h, out_w):
        img = resize_bilinear(img, out_h, out_w)
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=dtype) / 255.0


def prepare_mask(mask: np.ndarray, out_h: int, out_w: int, dtype=np.float32) -> np.ndarray:
    """Binary (H, W) mask -> (1, H, W) float array at the model input size."""
    if mask.shape != (out_h, out_w):
        mask = resize_nearest(mask, out_h, out_w)
    return mask.astype(dtype)[None]


# ---------------------------------------------------------------------------
# Video containers


@dataclass
class VideoSequence:
    """Fully in-memory video: frames plus per-object skip-frame annotations."""

    video_id: str
    frames: list[np.ndarray]
    annotations: dict[str, dict[int, np.ndarray]]
    fps: float = 30.0
    annotation_stride: int = 1

    def validate(self) -> None:
        if not self.frames:
            raise DataError(f"{self.video_id}: no frames")
        h, w = self.frames[0].shape[:2]
        for i, fr in enumerate(self.frames):
            if fr.shape != (h, w, 3):
                raise DataError(f"{self.video_id}: frame {i} has shape {fr.shape}, expected {(h, w, 3)}")
        for obj, masks in self.annotations.items():
            if 0 not in masks:
                raise DataError(f"{self.video_id}/{obj}: no mask at frame 0")
            if not masks[0].any():
                raise DataError(f"{self.video_id}/{obj}: frame-0 mask is empty")
            for idx, m in masks.items():
                if idx % self.annotation_stride:
                    raise DataError(f"{self.video_id}/{obj}: mask at frame {idx} violates "
                                    f"annotation stride {self.annotation_stride}")
                if not 0 <= idx < len(self.frames):
                    raise DataError(f"{self.video_id}/{obj}: mask frame index {idx} out of range")
                if m.shape != (h, w):
                    raise DataError(f"{self.video_id}/{obj}: mask {idx} has shape {m.shape}, "
                                    f"expected {(h, w)}")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.frames[0].shape[:2]

    @property
    def object_ids(self) -> list[str]:
        return list(self.annotations)

    def load_frame(self, i: int) -> np.ndarray:
        return self.frames[i]

    def mask_at(self, obj: str, i: int) -> np.ndarray | None:
        return self.annotations[obj].get(i)

    def annotated_indices(self, obj: str) -> list[int]:
        return sorted(self.annotations[obj])


@dataclass
class VideoDescriptor:
    """Lazy handle onto an on-disk video; pixel data is decoded on demand."""

    video_id: str
    fps: float
    annotation_stride: int
    frame_paths: list[Path]
    mask_paths: dict[str, dict[int, Path]]
    height: int
    width: int

    @property
    def n_frames(self) -> int:
        return len(self.frame_paths)

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def object_ids(self) -> list[str]:
        return list(self.mask_paths)

    def load_frame(self, i: int) -> np.ndarray:
        return read_ppm(self.frame_paths[i])

    def mask_at(self, obj: str, i: int) -> np.ndarray | None:
        p = self.mask_paths[obj].get(i)
        return None if p is None else read_mask(p)

    def annotated_indices(self, obj: str) -> list[int]:
        return sorted(self.mask_paths[obj])


def load_manifest(path) -> list[VideoDescriptor]:
    """Parse and validate a dataset manifest without decoding pixel data.

    Checks that every referenced file exists, that header dimensions agree
    within each video, that annotated frame indices are multiples of the
    annotation stride, and that frame 0 of every object is annotated.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("videos"), list):
        raise DataError(f"malformed manifest {path}: expected top-level 'videos' list")
    root = path.parent
    out = []
    for entry in doc["videos"]:
        try:
            vid = entry["id"]
            fps = float(entry["fps"])
            stride = int(entry["annotation_stride"])
            frame_paths = [root / p for p in entry["frames"]]
            objects = entry["objects"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest {path}: {exc!r}") from exc
        if stride < 1:
            raise DataError(f"{vid}: annotation_stride must be >= 1")
        if not frame_paths:
            raise DataError(f"{vid}: no frames listed")
        h, w = pnm_size(frame_paths[0])
        for fp in frame_paths[1:]:
            fh, fw = pnm_size(fp)
            if (fh, fw) != (h, w):
                raise DataError(f"{vid}: frame {fp} is {fh}x{fw}, expected {h}x{w}")
        masks: dict[str, dict[int, Path]] = {}
        for obj in objects:
            oid = str(obj["id"])
            per_frame: dict[int, Path] = {}
            for m in obj["masks"]:
                idx = int(m["frame_index"])
                mp = root / m["path"]
                if not 0 <= idx < len(frame_paths):
                    raise DataError(f"{vid}/{oid}: mask frame_index {idx} out of range")
                if idx % stride:
                    raise DataError(f"{vid}/{oid}: mask at frame {idx} violates stride {stride}")
                mh, mw = pnm_size(mp)
                if (mh, mw) != (h, w):
                    raise DataError(f"{vid}/{oid}: mask {mp} is {mh}x{mw}, expected {h}x{w}")
                per_frame[idx] = mp
            if 0 not in per_frame:
                raise DataError(f"{vid}/{oid}: no mask at frame 0")
            masks[oid] = per_frame
        out.append(VideoDescriptor(vid, fps, stride, frame_paths, masks, h, w))
    return out


def export_sequences(sequences: list[VideoSequence], out_dir) -> Path:
    """Write sequences as PPM/PGM trees plus a manifest.json; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in sequences:
        seq.validate()
        vdir = out_dir / seq.video_id
        vdir.mkdir(parents=True, exist_ok=True)
        frame_rel = []
        for i, fr in enumerate(seq.frames):
            rel = f"{seq.video_id}/frame_{i:05d}.ppm"
            write_ppm(out_dir / rel, fr)
            frame_rel.append(rel)
        objects = []
        for oid, masks in seq.annotations.items():
            mdir = vdir / f"object_{oid}"
            mdir.mkdir(exist_ok=True)
            recs = []
            for idx in sorted(masks):
                rel = f"{seq.video_id}/object_{oid}/mask_{idx:05d}.pgm"
                write_mask(out_dir / rel, masks[idx])
                recs.append({"frame_index": idx, "path": rel})
            objects.append({"id": oid, "masks": recs})
        entries.append({"id": seq.video_id, "fps": seq.fps,
                        "annotation_stride": seq.annotation_stride,
                        "frames": frame_rel, "objects": objects})
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"videos": entries}, indent=1))
    return manifest


# ---------------------------------------------------------------------------
# Affine augmentation for online fine-tuning


@dataclass
class AffineParams:
    rotation: float = 0.0     # degrees
    scale: float = 1.0
    translate_x: float = 0.0  # fraction of width
    translate_y: float = 0.0  # fraction of height
    shear: float = 0.0        # degrees


@dataclass
class AffineRanges:
    rotation: float = 10.0
    scale_lo: float = 0.9
    scale_hi: float = 1.1
    translate: float = 0.1
    shear: float = 5.0


def sample_affine_params(rng: np.random.Generator, ranges: AffineRanges) -> AffineParams:
    return AffineParams(
        rotation=rng.uniform(-ranges.rotation, ranges.rotation),
        scale=rng.uniform(ranges.scale_lo, ranges.scale_hi),
        translate_x=rng.uniform(-ranges.translate, ranges.translate),
        translate_y=rng.uniform(-ranges.translate, ranges.translate),
        shear=rng.uniform(-ranges.shear, ranges.shear),
    )


def _source_grid(h: int, w: int, p: AffineParams) -> tuple[np.ndarray, np.ndarray]:
    """Source coordinates for an inverse warp of the given affine map."""
    th = math.radians(p.rotation)
    sh = math.tan(math.radians(p.shear))
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    shear = np.array([[1.0, sh], [0.0, 1.0]])
    fwd = rot @ shear * p.scale            # maps (x, y) offsets from center
    inv = np.linalg.inv(fwd)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ty, tx = p.translate_y * h, p.translate_x * w
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dx = xs - cx - tx
    dy = ys - cy - ty
    src_x = inv[0, 0] * dx + inv[0, 1] * dy + cx
    src_y = inv[1, 0] * dx + inv[1, 1] * dy + cy
    return src_y, src_x


def apply_affine(img: np.ndarray, mask: np.ndarray, p: AffineParams) -> tuple[np.ndarray, np.ndarray]:
    """Warp an image (bilinear) and its mask (nearest) by the same affine map.

    Pixels mapped from outside the source are filled by edge replication,
    so the mask stays strictly binary.
    """
    h, w = img.shape[:2]
    src_y, src_x = _source_grid(h, w, p)

    y0 = np.clip(np.floor(src_y).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(src_x).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(src_y - y0, 0.0, 1.0)[..., None]
    fx = np.clip(src_x - x0, 0.0, 1.0)[..., None]
    imgf = img.astype(np.float64)
    top = imgf[y0, x0] * (1 - fx) + imgf[y0, x1] * fx
    bot = imgf[y1, x0] * (1 - fx) + imgf[y1, x1] * fx
    warped = np.clip(np.rint(top * (1 - fy) + bot * fy), 0, 255).astype(np.uint8)

    ny = np.clip(np.rint(src_y).astype(np.int64), 0, h - 1)
    nx = np.clip(np.rint(src_x).astype(np.int64), 0, w - 1)
    warped_mask = mask[ny, nx]
    return warped, warped_mask


def affine_sample(x0: np.ndarray, y0: np.ndarray, rng: np.random.Generator,
                  ranges: AffineRanges | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Draw one random affine pair (x', y') from the first frame and mask.

    Redraws up to 10 times if the warped mask comes out empty.
    """
    if not np.isin(y0, (0, 1)).all():
        raise DataError("affine_sample: mask must be binary")
    ranges = ranges or AffineRanges()
    for _ in range(10):
        params = sample_affine_params(rng, ranges)
        img, mask = apply_affine(x0, y0, params)
        if mask.any():
            return img, mask
    raise DataError("affine_sample: mask empty after 10 redraws")


# ---------------------------------------------------------------------------
# Synthetic moving-object videos


@dataclass
class SynthConfig:
    height: int = 64
    width: int = 112
    num_frames: int = 10
    num_objects: int = 1
    shape_set: tuple[str, ...] = ("disc", "square", "triangle")
    min_radius: float = 7.0
    max_radius: float = 12.0
    velocity_min: float = 1.0
    velocity_max: float = 3.0
    drift_rate: float = 0.0        # per-frame color-walk stddev
    jitter: float = 0.0            # camera jitter amplitude, px
    num_occluders: int = 0
    annotation_stride: int = 1
    fps: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.num_frames < 1 or self.num_objects < 0:
            raise DataError("synth: frame and object counts must be positive")
        if self.min_radius > self.max_radius or self.velocity_min > self.velocity_max:
            raise DataError("synth: empty range")
        if self.annotation_stride < 1:
            raise DataError("synth: annotation_stride must be >= 1")


_SHAPES = ("disc", "square", "triangle")


def _shape_mask(shape: str, cy: float, cx: float, r: float, h: int, w: int) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dy = ys - cy
    dx = xs - cx
    if shape == "disc":
        return dy * dy + dx * dx <= r * r
    if shape == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if shape == "triangle":
        # equilateral, apex up, vertices on the radius-r circle
        verts = [(cy - r, cx),
                 (cy + r / 2, cx - r * math.sqrt(3) / 2),
                 (cy + r / 2, cx + r * math.sqrt(3) / 2)]
        inside = np.ones((h, w), dtype=bool)
        for (ay, ax), (by, bx) in zip(verts, verts[1:] + verts[:1]):
            inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0
        return inside
    raise DataError(f"unknown shape {shape!r}")


def _draw_layout(rng: np.random.Generator, cfg: SynthConfig, bg_mean: np.ndarray):
    shapes = tuple(s for s in cfg.shape_set if s in _SHAPES) or ("disc",)
    h, w = cfg.height, cfg.width
    objects = []
    for _ in range(cfg.num_objects):
        r = rng.uniform(cfg.min_radius, cfg.max_radius)
        # start centrally so the frame-0 mask is never clipped away
        cy = rng.uniform(0.3 * h, 0.7 * h)
        cx = rng.uniform(0.3 * w, 0.7 * w)
        speed = rng.uniform(cfg.velocity_min, cfg.velocity_max)
        ang = rng.uniform(0, 2 * math.pi)
        color = rng.uniform(0, 255, size=3)
        for _ in range(50):
            if np.abs(color - bg_mean).sum() >= 160:
                break
            color = rng.uniform(0, 255, size=3)
        objects.append({
            "shape": shapes[int(rng.integers(len(shapes)))],
            "r": r, "cy": cy, "cx": cx,
            "vy": speed * math.sin(ang), "vx": speed * math.cos(ang),
            "color": color,
        })
    occluders = []
    for _ in range(cfg.num_occluders):
        vertical = bool(rng.integers(2))
        occluders.append({
            "vertical": vertical,
            "t": int(rng.integers(3, 7)),
            "pos": rng.uniform(0.1, 0.9) * (cfg.width if vertical else cfg.height),
            "vel": rng.uniform(-1.0, 1.0),
            "color": rng.uniform(0, 255, size=3),
        })
    return objects, occluders


def _occluder_band(occ, t: int, h: int, w: int) -> np.ndarray:
    band = np.zeros((h, w), dtype=bool)
    lo = int(np.rint(occ["pos"] + t * occ["vel"]))
    hi = lo + occ["t"]
    if occ["vertical"]:
        band[:, max(lo, 0):max(hi, 0)] = True
    else:
        band[max(lo, 0):max(hi, 0), :] = True
    return band


def _render_frame(objects, occluders, t, jy, jx, bg_crop):
    """Compose one frame and the per-object visibility masks (z-order: the
    background, then objects in list order, then occluders on top)."""
    h, w = bg_crop.shape[:2]
    frame = bg_crop.copy()
    raw = [_shape_mask(o["shape"], o["cy"] - jy, o["cx"] - jx, o["r"], h, w)
           for o in objects]
    occ_total = np.zeros((h, w), dtype=bool)
    for occ in occluders:
        occ_total |= _occluder_band(occ, t, h, w)
    visible = []
    for k, obj in enumerate(objects):
        vis = raw[k].copy()
        for later in raw[k + 1:]:
            vis &= ~later
        vis &= ~occ_total
        visible.append(vis)
        frame[vis] = obj["color"]
    for occ in occluders:
        frame[_occluder_band(occ, t, h, w)] = occ["color"]
    return np.clip(np.rint(frame), 0, 255).astype(np.uint8), visible


MIN_FIRST_FRAME_PIXELS = 20


def synth_generate(cfg: SynthConfig) -> VideoSequence:
    """Render one synthetic sequence: textured background, moving shapes with
    optional color drift and camera jitter, optional occluder bars, and exact
    per-frame visibility masks recorded every annotation_stride frames.

    Deterministic given cfg.seed. Layouts whose frame-0 masks come out
    (nearly) empty are redrawn from the same random stream.
    """
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.height, cfg.width
    pad = int(math.ceil(cfg.jitter)) + 1

    # static textured background, larger than the frame so jitter can crop
    coarse = rng.uniform(40, 170, size=(6, 6, 3))
    bg = resize_bilinear(coarse, h + 2 * pad, w + 2 * pad)
    bg += rng.uniform(-8, 8, size=bg.shape)
    bg = np.clip(bg, 0, 255)
    bg_mean = bg.mean(axis=(0, 1))
    bg_center = bg[pad:pad + h, pad:pad + w]

    objects = occluders = None
    for _ in range(30):
        objects, occluders = _draw_layout(rng, cfg, bg_mean)
        _, vis0 = _render_frame(objects, occluders, 0, 0, 0, bg_center)
        if all(v.sum() >= MIN_FIRST_FRAME_PIXELS for v in vis0):
            break
    else:
        raise DataError("synth_generate: could not place objects visibly at frame 0")

    frames = []
    annotations: dict[str, dict[int, np.ndarray]] = {str(k): {} for k in range(len(objects))}
    for t in range(cfg.num_frames):
        jy = int(np.rint(rng.uniform(-cfg.jitter, cfg.jitter))) if cfg.jitter else 0
        jx = int(np.rint(rng.uniform(-cfg.jitter, cfg.jitter))) if cfg.jitter else 0
        crop = bg[pad + jy:pad + jy + h, pad + jx:pad + jx + w]
        frame, visible = _render_frame(objects, occluders, t, jy, jx, crop)
        frames.append(frame)
        if t % cfg.annotation_stride == 0:
            for k in range(len(objects)):
                annotations[str(k)][t] = visible[k].astype(np.uint8)

        for obj in objects:
            obj["cy"] += obj["vy"]
            obj["cx"] += obj["vx"]
            # bounce off the frame box
            if obj["cy"] < obj["r"] or obj["cy"] > h - 1 - obj["r"]:
                obj["vy"] = -obj["vy"]
                obj["cy"] = float(np.clip(obj["cy"], obj["r"], h - 1 - obj["r"]))
            if obj["cx"] < obj["r"] or obj["cx"] > w - 1 - obj["r"]:
                obj["vx"] = -obj["vx"]
                obj["cx"] = float(np.clip(obj["cx"], obj["r"], w - 1 - obj["r"]))
            if cfg.drift_rate:
                obj["color"] = np.clip(obj["color"] + rng.normal(0, cfg.drift_rate, 3), 0, 255)

    seq = VideoSequence(f"synth_{cfg.seed:06d}", frames, annotations,
                        fps=cfg.fps, annotation_stride=cfg.annotation_stride)
    seq.validate()
    return seq


def synth_dataset(base: SynthConfig, count: int, base_seed: int | None = None) -> list[VideoSequence]:
    """Generate `count` sequences with per-sequence seeds base_seed + index."""
    seed0 = base.seed if base_seed is None else base_seed
    return [synth_generate(replace(base, seed=seed0 + i)) for i in range(count)]

"""Procedural shape-video generator and its archive format.

Renders short sequences of a single colored shape undergoing one
transformation kind (rotation, horizontal/vertical translation, or
scaling) against a mid-gray background.  Rendering is membership
testing on a 4x supersampled grid followed by box downsampling, so
small pose changes move pixel values smoothly.

Archive layout (everything after the magic little-endian):

    magic    8 bytes  b"HMWM-SEQ"
    version  u32
    H, W, C, T  u32 each
    count    u64
    per record:
        seed u64, label_kind u8, magnitude f64, pose 4*f64
        shape_kind u8, symmetry u8, color 3*f64
        frames T*H*W*C bytes, u8, value = round(pixel*255)

Frames are quantized to the u8 grid at generation time, so writing and
re-reading an archive reproduces the in-memory float frames exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import struct

import numpy as np

from .errors import DataFormatError

MAGIC = b"HMWM-SEQ"
VERSION = 1

BACKGROUND = 0.5
SUPERSAMPLE = 4

SHAPE_KINDS = ("square", "rectangle", "triangle", "cross", "ellipse", "blob")
SYMMETRY = {
    "square": 4, "rectangle": 2, "triangle": 3,
    "cross": 2, "ellipse": 2, "blob": 1,
}
LABEL_KINDS = ("rotation", "translation_h", "translation_v", "scaling")

_SHAPE_CODE = {k: i for i, k in enumerate(SHAPE_KINDS)}
_LABEL_CODE = {k: i for i, k in enumerate(LABEL_KINDS)}

# irregular 7-gon with no rotational symmetry
_BLOB_VERTS = np.array([
    [1.00, 0.00], [0.35, 0.62], [-0.28, 0.90], [-0.85, 0.25],
    [-0.60, -0.38], [-0.05, -0.95], [0.55, -0.50],
])

# circumradius of each canonical shape, for border-clipping checks
_R_BOUND = {
    "square": np.sqrt(2.0),
    "rectangle": np.sqrt(1.0 + 0.6**2),
    "triangle": 1.0,
    "cross": np.sqrt(1.0 + 0.35**2),
    "ellipse": 1.0,
    "blob": float(np.max(np.linalg.norm(_BLOB_VERTS, axis=1))),
}


class GenerationError(Exception):
    """Could not realize a valid sequence (pose sampling exhausted or a
    requested pose clips the frame border)."""


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    color: tuple
    symmetry_order: int = 0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        expect = SYMMETRY[self.kind]
        if self.symmetry_order == 0:
            object.__setattr__(self, "symmetry_order", expect)
        elif self.symmetry_order != expect:
            raise ValueError(
                f"{self.kind} has symmetry order {expect}, got {self.symmetry_order}"
            )
        c = tuple(float(v) for v in self.color)
        if len(c) != 3 or any(v < 0.0 or v > 1.0 for v in c):
            raise ValueError(f"color must be three values in [0,1], got {self.color}")
        object.__setattr__(self, "color", c)


@dataclass(frozen=True)
class TransitionLabel:
    kind: str
    magnitude: float

    # magnitude units: degrees/step, pixels/step, or factor/step
    def __post_init__(self):
        if self.kind not in LABEL_KINDS:
            raise ValueError(f"unknown transition kind {self.kind!r}")
        m = float(self.magnitude)
        if self.kind == "rotation" and abs(m) > 90.0:
            raise ValueError(f"rotation step {m} exceeds 90 degrees")
        if self.kind.startswith("translation") and abs(m) > 4.0:
            raise ValueError(f"translation step {m} exceeds 4 px")
        if self.kind == "scaling" and not (0.8 <= m <= 1.25):
            raise ValueError(f"scaling step {m} outside [0.8, 1.25]")
        object.__setattr__(self, "magnitude", m)


@dataclass(frozen=True)
class Pose:
    cx: float
    cy: float
    angle: float  # degrees
    scale: float  # px per canonical unit


@dataclass(frozen=True)
class SequenceRecord:
    frames: np.ndarray  # (T, H, W, C) float64 in [0,1], u8-quantized
    shape: ShapeSpec
    label: TransitionLabel
    pose0: Pose
    seed: int


@dataclass(frozen=True)
class WorldConfig:
    H: int = 32
    W: int = 32
    C: int = 3
    T: int = 8
    regime: str = "fixed"  # or "random": magnitude resampled per step
    kinds: tuple = LABEL_KINDS
    rot_band: tuple = (5.0, 30.0)      # |degrees per step|
    trans_band: tuple = (0.5, 2.0)     # |px per step|
    scale_band: tuple = (0.85, 1.18)   # factor per step
    random_rot_band: tuple = (0.0, 90.0)  # |degrees|, per-step regime
    shape_scale: tuple = (4.0, 7.0)    # px
    instances: tuple = ()              # ShapeSpecs; empty = free sampling
    max_tries: int = 100

    def __post_init__(self):
        if self.regime not in ("fixed", "random"):
            raise ValueError(f"unknown regime {self.regime!r}")
        for k in self.kinds:
            if k not in LABEL_KINDS:
                raise ValueError(f"unknown transition kind {k!r}")


# -- rendering ----------------------------------------------------------------


def _membership(kind: str, pts: np.ndarray) -> np.ndarray:
    """Boolean membership of canonical-frame points (N, 2) in the shape."""
    x, y = pts[:, 0], pts[:, 1]
    if kind == "square":
        return (np.abs(x) <= 1.0) & (np.abs(y) <= 1.0)
    if kind == "rectangle":
        return (np.abs(x) <= 1.0) & (np.abs(y) <= 0.6)
    if kind == "ellipse":
        return x * x + (y / 0.6) ** 2 <= 1.0
    if kind == "cross":
        bar_h = (np.abs(x) <= 1.0) & (np.abs(y) <= 0.35)
        bar_v = (np.abs(x) <= 0.2) & (np.abs(y) <= 1.0)
        return bar_h | bar_v
    if kind == "triangle":
        # equilateral, circumradius 1, one vertex up
        verts = np.array([[0.0, 1.0],
                          [-np.sqrt(3) / 2, -0.5],
                          [np.sqrt(3) / 2, -0.5]])
        inside = np.ones(len(pts), dtype=bool)
        for i in range(3):
            a, b = verts[i], verts[(i + 1) % 3]
            edge = b - a
            # interior lies to the left of each CCW edge
            cross = edge[0] * (y - a[1]) - edge[1] * (x - a[0])
            inside &= cross >= 0.0
        return inside
    if kind == "blob":
        # even-odd crossing test against the fixed polygon
        inside = np.zeros(len(pts), dtype=bool)
        v = _BLOB_VERTS
        n = len(v)
        for i in range(n):
            x1, y1 = v[i]
            x2, y2 = v[(i + 1) % n]
            crosses = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < xint)
        return inside
    raise ValueError(f"unknown shape kind {kind!r}")


def check_inside(kind: str, pose: Pose, H: int, W: int) -> bool:
    """Conservative test that the shape's bounding circle fits the frame."""
    r = _R_BOUND[kind] * pose.scale
    return (pose.cx - r >= 0.0 and pose.cx + r <= W
            and pose.cy - r >= 0.0 and pose.cy + r <= H)


def render_frame(shape: ShapeSpec, pose: Pose, H: int = 32, W: int = 32) -> np.ndarray:
    """Rasterize one frame, (H, W, 3) float64 in [0,1].

    Raises GenerationError if the pose would clip the border; callers
    resample instead of producing truncated shapes.
    """
    if not check_inside(shape.kind, pose, H, W):
        raise GenerationError(
            f"{shape.kind} at ({pose.cx:.2f},{pose.cy:.2f}) scale {pose.scale:.2f} "
            f"clips the {W}x{H} frame"
        )
    n = SUPERSAMPLE
    xs = (np.arange(W * n) + 0.5) / n
    ys = (np.arange(H * n) + 0.5) / n
    gx, gy = np.meshgrid(xs, ys)
    # world -> canonical: shift, rotate by -angle, unscale; image y grows
    # downward, so flip y to keep "angle" counterclockwise on screen
    dx = gx - pose.cx
    dy = pose.cy - gy
    th = np.deg2rad(pose.angle)
    c, s = np.cos(th), np.sin(th)
    u = (c * dx + s * dy) / pose.scale
    v = (-s * dx + c * dy) / pose.scale
    pts = np.stack([u.ravel(), v.ravel()], axis=1)
    mask = _membership(shape.kind, pts).reshape(H * n, W * n)
    alpha = mask.astype(np.float64).reshape(H, n, W, n).mean(axis=(1, 3))
    color = np.array(shape.color)
    return alpha[..., None] * color + (1.0 - alpha[..., None]) * BACKGROUND


def advance_pose(pose: Pose, kind: str, magnitude: float) -> Pose:
    if kind == "rotation":
        return replace(pose, angle=pose.angle + magnitude)
    if kind == "translation_h":
        return replace(pose, cx=pose.cx + magnitude)
    if kind == "translation_v":
        return replace(pose, cy=pose.cy + magnitude)
    if kind == "scaling":
        return replace(pose, scale=pose.scale * magnitude)
    raise ValueError(f"unknown transition kind {kind!r}")


def quantize(frames: np.ndarray) -> np.ndarray:
    """Snap float frames to the u8 grid the archive stores."""
    return np.round(frames * 255.0) / 255.0


# -- sequence generation ------------------------------------------------------


def sample_color(rng) -> tuple:
    """Foreground color kept at least 0.2 away from the gray background."""
    while True:
        c = rng.uniform(0.0, 1.0, 3)
        if np.max(np.abs(c - BACKGROUND)) >= 0.2:
            return tuple(float(v) for v in c)


def make_instance_pool(n: int, seed: int) -> tuple:
    """n distinct ShapeSpecs cycling through the shape kinds."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    pool = []
    for i in range(n):
        kind = SHAPE_KINDS[i % len(SHAPE_KINDS)]
        pool.append(ShapeSpec(kind, sample_color(rng)))
    return tuple(pool)


def _band_sample(rng, band, signed: bool) -> float:
    lo, hi = band
    m = rng.uniform(lo, hi)
    if signed and rng.integers(2) == 1:
        m = -m
    return float(m)


def _step_magnitudes(rng, kind: str, cfg: WorldConfig):
    """Per-step magnitudes plus the label's stored magnitude."""
    n = cfg.T - 1
    if cfg.regime == "fixed":
        if kind == "rotation":
            m = _band_sample(rng, cfg.rot_band, signed=True)
        elif kind == "scaling":
            m = float(rng.uniform(*cfg.scale_band))
        else:
            m = _band_sample(rng, cfg.trans_band, signed=True)
        return np.full(n, m), m
    # random regime: fresh magnitude every step; the label stores the
    # neutral element since no single per-step value exists
    if kind == "rotation":
        steps = rng.uniform(-cfg.random_rot_band[1], cfg.random_rot_band[1], n)
        return steps, 0.0
    if kind == "scaling":
        return rng.uniform(cfg.scale_band[0], cfg.scale_band[1], n), 1.0
    steps = rng.uniform(-cfg.trans_band[1], cfg.trans_band[1], n)
    return steps, 0.0


def generate_sequence(seed: int, cfg: WorldConfig = WorldConfig()) -> SequenceRecord:
    """Deterministically realize one labeled sequence from a seed."""
    rng = np.random.default_rng(seed)
    kind = cfg.kinds[rng.integers(len(cfg.kinds))]
    if cfg.instances:
        shape = cfg.instances[rng.integers(len(cfg.instances))]
    else:
        shape = ShapeSpec(SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))],
                          sample_color(rng))
    r = _R_BOUND[shape.kind]

    for _ in range(cfg.max_tries):
        steps, label_mag = _step_magnitudes(rng, kind, cfg)
        s0 = float(rng.uniform(*cfg.shape_scale))
        # feasible center interval given the whole trajectory's extent
        if kind == "scaling":
            scales = s0 * np.concatenate([[1.0], np.cumprod(steps)])
            rmax = r * float(scales.max())
            lo_x, hi_x = rmax, cfg.W - rmax
            lo_y, hi_y = rmax, cfg.H - rmax
        elif kind.startswith("translation"):
            disp = np.concatenate([[0.0], np.cumsum(steps)])
            rs = r * s0
            if kind == "translation_h":
                lo_x, hi_x = rs - disp.min(), cfg.W - rs - disp.max()
                lo_y, hi_y = rs, cfg.H - rs
            else:
                lo_x, hi_x = rs, cfg.W - rs
                lo_y, hi_y = rs - disp.min(), cfg.H - rs - disp.max()
        else:
            rs = r * s0
            lo_x, hi_x = rs, cfg.W - rs
            lo_y, hi_y = rs, cfg.H - rs
        if lo_x > hi_x or lo_y > hi_y:
            continue
        pose = Pose(
            cx=float(rng.uniform(lo_x, hi_x)),
            cy=float(rng.uniform(lo_y, hi_y)),
            angle=float(rng.uniform(0.0, 360.0)),
            scale=s0,
        )
        frames = np.empty((cfg.T, cfg.H, cfg.W, cfg.C))
        p = pose
        ok = True
        try:
            for t in range(cfg.T):
                frames[t] = render_frame(shape, p, cfg.H, cfg.W)
                if t < cfg.T - 1:
                    p = advance_pose(p, kind, float(steps[t]))
        except GenerationError:
            ok = False
        if not ok:
            continue
        return SequenceRecord(
            frames=quantize(frames),
            shape=shape,
            label=TransitionLabel(kind, label_mag),
            pose0=pose,
            seed=int(seed),
        )
    raise GenerationError(
        f"no valid pose for seed {seed} ({kind}, {shape.kind}) "
        f"after {cfg.max_tries} tries"
    )


def record_seeds(master_seed: int, count: int) -> np.ndarray:
    """Stable per-record u64 seeds derived from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return np.array([c.generate_state(1, np.uint64)[0] for c in children],
                    dtype=np.uint64)


def generate_archive_records(master_seed: int, count: int,
                             cfg: WorldConfig = WorldConfig()):
    return [generate_sequence(int(s), cfg)
            for s in record_seeds(master_seed, count)]


# -- archive i/o --------------------------------------------------------------

_REC_HEAD = struct.Struct("<QBd4dBB3d")


def write_archive(records, path):
    """Serialize homogeneous records; lossless against quantized frames."""
    if records:
        T, H, W, C = records[0].frames.shape
        for rec in records:
            if rec.frames.shape != (T, H, W, C):
                raise ValueError(
                    f"inhomogeneous frame dims {rec.frames.shape} vs {(T, H, W, C)}"
                )
    else:
        cfg = WorldConfig()
        T, H, W, C = cfg.T, cfg.H, cfg.W, cfg.C
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<5I", VERSION, H, W, C, T))
        f.write(struct.pack("<Q", len(records)))
        for rec in records:
            p = rec.pose0
            f.write(_REC_HEAD.pack(
                int(rec.seed) & 0xFFFFFFFFFFFFFFFF,
                _LABEL_CODE[rec.label.kind], rec.label.magnitude,
                p.cx, p.cy, p.angle, p.scale,
                _SHAPE_CODE[rec.shape.kind], rec.shape.symmetry_order,
                *rec.shape.color,
            ))
            f.write(np.round(rec.frames * 255.0).astype(np.uint8).tobytes())


def read_archive(path):
    """Load records back; raises DataFormatError with the byte offset of
    the first inconsistency."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise DataFormatError(f"bad archive magic {raw[:8]!r} at offset 0 in {path}")
    if len(raw) < 8 + 20 + 8:
        raise DataFormatError(f"archive header truncated at offset {len(raw)}")
    version, H, W, C, T = struct.unpack_from("<5I", raw, 8)
    if version != VERSION:
        raise DataFormatError(f"unsupported archive version {version} at offset 8")
    (count,) = struct.unpack_from("<Q", raw, 28)
    off = 36
    frame_bytes = T * H * W * C
    rec_size = _REC_HEAD.size + frame_bytes
    expect = off + count * rec_size
    if len(raw) != expect:
        raise DataFormatError(
            f"archive length {len(raw)} != {expect} for {count} records "
            f"(first inconsistency at offset {min(len(raw), expect)})"
        )
    records = []
    for _ in range(count):
        fields = _REC_HEAD.unpack_from(raw, off)
        seed, label_code, magnitude = fields[0], fields[1], fields[2]
        cx, cy, angle, scale = fields[3:7]
        shape_code, symmetry = fields[7], fields[8]
        color = fields[9:12]
        if label_code >= len(LABEL_KINDS):
            raise DataFormatError(f"bad label kind {label_code} at offset {off + 8}")
        if shape_code >= len(SHAPE_KINDS):
            raise DataFormatError(f"bad shape kind {shape_code} at offset {off + 49}")
        off += _REC_HEAD.size
        frames = np.frombuffer(raw[off:off + frame_bytes], dtype=np.uint8)
        frames = frames.reshape(T, H, W, C).astype(np.float64) / 255.0
        off += frame_bytes
        records.append(SequenceRecord(
            frames=frames,
            shape=ShapeSpec(SHAPE_KINDS[shape_code], color, symmetry),
            label=TransitionLabel(LABEL_KINDS[label_code], magnitude),
            pose0=Pose(cx, cy, angle, scale),
            seed=int(seed),
        ))
    return records


# -- splits -------------------------------------------------------------------


def instance_key(rec: SequenceRecord) -> tuple:
    return (rec.shape.kind,) + rec.shape.color


def dataset_split(records, fractions, seed: int):
    """Partition records by shape instance so no instance crosses splits.

    Returns one record list per fraction, in order.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions {fractions} do not sum to 1")
    keys = sorted({instance_key(r) for r in records})
    if len(keys) < len(fractions):
        raise ValueError(
            f"{len(keys)} instances cannot fill {len(fractions)} splits"
        )
    rng = np.random.default_rng(seed)
    order = [keys[i] for i in rng.permutation(len(keys))]
    counts = [int(round(f * len(keys))) for f in fractions]
    counts[-1] = len(keys) - sum(counts[:-1])
    if min(counts) < 1:
        raise ValueError(f"split counts {counts} leave an empty split")
    splits, start = [], 0
    for c in counts:
        chosen = set(order[start:start + c])
        splits.append([r for r in records if instance_key(r) in chosen])
        start += c
    return splits

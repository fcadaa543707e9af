"""Camera trajectories: stress-test patterns, RealEstate10K camera files and
training-pair synthesis from ordinary videos."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import CameraPose, Intrinsics, project_to_so3, rotation_angle, yaw_pitch

SEGMENT_LENGTH = 49
RE10K_FIELDS = 19
RE10K_ORTHO_TOL = 1e-3
KINDS = ("panoramic", "revisit", "loops", "offset")


@dataclass(frozen=True, eq=False)
class Trajectory:
    poses: tuple[CameraPose, ...]
    segment_length: int = SEGMENT_LENGTH
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    seed: Optional[int] = None
    # (frame, earlier frame it returns to), as declared by the generator
    revisits: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise ValueError("trajectory must contain at least one pose")
        if any(p.intrinsics != poses[0].intrinsics for p in poses):
            raise ValueError("all poses of a trajectory must share intrinsics")
        if self.segment_length < 1:
            raise ValueError(f"segment_length must be >= 1, got {self.segment_length}")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "revisits", tuple(tuple(map(int, p)) for p in self.revisits))

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    @property
    def intrinsics(self) -> Intrinsics:
        return self.poses[0].intrinsics

    def segments(self, start: int = 0) -> list[range]:
        """Consecutive ``segment_length`` chunks of frame indices from ``start``."""
        n, L = len(self.poses), self.segment_length
        return [range(s, min(s + L, n)) for s in range(start, n, L)]

    def chunks(self) -> list[tuple[CameraPose, ...]]:
        return [tuple(self.poses[i] for i in seg) for seg in self.segments()]

    # -- native JSON ------------------------------------------------------

    def to_dict(self) -> dict:
        k = self.intrinsics
        frames = []
        for p in self.poses:
            x, y, z, w = Rotation.from_matrix(p.rotation).as_quat()
            frames.append({"q": [w, x, y, z], "center": p.center.tolist()})
        return {
            "kind": self.kind,
            "params": self.params,
            "seed": self.seed,
            "segment_length": self.segment_length,
            "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height},
            "revisits": [list(p) for p in self.revisits],
            "frames": frames,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        k = Intrinsics(**d["intrinsics"])
        poses = []
        for f in d["frames"]:
            w, x, y, z = f["q"]
            R = Rotation.from_quat([x, y, z, w]).as_matrix()
            poses.append(CameraPose(R, f["center"], k))
        return cls(
            tuple(poses),
            segment_length=d.get("segment_length", SEGMENT_LENGTH),
            kind=d.get("kind", "custom"),
            params=d.get("params", {}),
            seed=d.get("seed"),
            revisits=tuple(tuple(p) for p in d.get("revisits", [])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# stress-test patterns


def _pose(yaw_deg, center, intrinsics, pitch_deg=0.0) -> CameraPose:
    return CameraPose(yaw_pitch(yaw_deg, pitch_deg), center, intrinsics)


def _intrinsics(params: dict) -> Intrinsics:
    return Intrinsics.from_fov(
        params.get("hfov", 90.0), params.get("width", 128), params.get("height", 128)
    )


def _frames(params: dict) -> int:
    n = int(params.get("frames", 0))
    if n < 2:
        raise ValueError(f"a pattern needs at least 2 frames, got {n}")
    return n


def panoramic(params: dict) -> tuple[list[CameraPose], list[tuple[int, int]]]:
    n = _frames(params)
    k = _intrinsics(params)
    center = np.asarray(params.get("center", [0.0, 0.0, 0.0]), dtype=np.float64)
    poses = [_pose(360.0 * i / (n - 1), center, k) for i in range(n)]
    return poses, [(n - 1, 0)]


# per-cycle knot jitter; irrational spacing keeps every non-endpoint yaw unique
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_SQRT2 = math.sqrt(2.0)


def _knots(cycle: int) -> tuple[float, float]:
    j1 = ((cycle + 1) * _GOLDEN) % 1.0
    j2 = ((cycle + 1) * _SQRT2) % 1.0
    return 0.25 + 0.08 * (j1 - 0.5), 0.75 + 0.08 * (j2 - 0.5)


def repeated_revisit(params: dict) -> tuple[list[CameraPose], list[tuple[int, int]]]:
    """Yaw swings 0 -> +amplitude -> -amplitude -> 0, ``cycles`` times.

    Every cycle ends exactly on pose 0. The turning points fall between
    frames at cycle-specific positions, so cycle endpoints are the only exact
    repeats of earlier poses, and each return reaches yaw 0 from the side
    opposite to the one it left on.
    """
    n = _frames(params)
    cycles = int(params.get("cycles", 3))
    amplitude = float(params.get("amplitude", 30.0))
    if cycles < 1 or (n - 1) < 4 * cycles:
        raise ValueError(f"cannot fit {cycles} cycles into {n} frames")
    k = _intrinsics(params)
    center = np.asarray(params.get("center", [0.0, 0.0, 0.0]), dtype=np.float64)
    ends = [round(c * (n - 1) / cycles) for c in range(cycles + 1)]
    levels = [0.0] * n
    for c in range(cycles):
        a, b = ends[c], ends[c + 1]
        f1, f2 = _knots(c)
        k1, k2 = a + (b - a) * f1, a + (b - a) * f2
        for i in range(a + 1, b):
            if i <= k1:
                levels[i] = (i - a) / (k1 - a)
            elif i <= k2:
                levels[i] = 1.0 - 2.0 * (i - k1) / (k2 - k1)
            else:
                levels[i] = -(b - i) / (b - k2)
    poses = [_pose(amplitude * lv, center, k) for lv in levels]
    return poses, [(e, 0) for e in ends[1:]]


def random_loops(params: dict, seed: int) -> tuple[list[CameraPose], list[tuple[int, int]]]:
    """Forward path with retrace loops spliced in at random frames.

    A loop of length ``l`` turns away for ``l`` frames, then retraces the
    same poses back and ends on its entry pose.
    """
    n = _frames(params)
    loops = int(params.get("loops", 3))
    lo, hi = int(params.get("min_length", 3)), int(params.get("max_length", 8))
    step = float(params.get("step", 0.04))
    if loops < 0:
        raise ValueError(f"loop count must be nonnegative, got {loops}")
    if loops and (lo < 1 or hi < lo):
        raise ValueError(f"loop lengths must be positive with min <= max, got [{lo}, {hi}]")
    k = _intrinsics(params)
    start = np.asarray(params.get("center", [0.0, 0.0, -1.5]), dtype=np.float64)
    rng = np.random.default_rng(seed)

    lengths = [int(v) for v in rng.integers(lo, hi + 1, size=loops)]
    base_len = n - 2 * sum(lengths)
    if base_len < loops + 2:
        raise ValueError(f"{n} frames cannot hold loops of total length {sum(lengths)}")
    entries = sorted(int(v) for v in rng.choice(np.arange(1, base_len - 1), size=loops, replace=False))
    turns = rng.uniform(15.0, 45.0, size=loops) * rng.choice([-1.0, 1.0], size=loops)

    base = [_pose(0.0, start + np.array([0.0, 0.0, step * i]), k) for i in range(base_len)]
    poses: list[CameraPose] = []
    revisits = []
    loop_at = dict(zip(entries, zip(lengths, turns)))
    for i, p in enumerate(base):
        poses.append(p)
        if i not in loop_at:
            continue
        length, turn = loop_at[i]
        entry_idx = len(poses) - 1
        out, yaw, c = [], 0.0, p.center.copy()
        for _ in range(length):
            yaw += turn / length
            c = c + step * yaw_pitch(yaw)[:, 2]
            out.append(_pose(yaw, c, k))
        out_idx = list(range(len(poses), len(poses) + length))
        poses.extend(out)
        for j in range(length - 2, -1, -1):
            revisits.append((len(poses), out_idx[j]))
            poses.append(out[j])
        revisits.append((len(poses), entry_idx))
        poses.append(p)
    return poses, revisits


def offset_return(params: dict) -> tuple[list[CameraPose], list[tuple[int, int]]]:
    """Forward path, then the same poses in reverse shifted along camera-right.

    Return frame ``fwd + k`` mirrors forward frame ``fwd - 2 - k``. With a
    nonzero offset no pose repeats exactly, so no revisits are declared.
    """
    n = _frames(params)
    eps = float(params.get("offset", 0.1))
    step = float(params.get("step", 0.04))
    k = _intrinsics(params)
    start = np.asarray(params.get("center", [0.0, 0.0, -1.0]), dtype=np.float64)
    fwd = n // 2 + 1
    forward = [_pose(0.0, start + np.array([0.0, 0.0, step * i]), k) for i in range(fwd)]
    poses = list(forward)
    counterparts = []
    for j in range(fwd - 2, -1, -1):
        if len(poses) == n:
            break
        p = forward[j]
        counterparts.append((len(poses), j))
        poses.append(p.with_center(p.center + eps * p.right))
    return poses, counterparts if eps == 0 else []


def gen_pattern(kind: str, params: Optional[dict] = None, seed: int = 0) -> Trajectory:
    """Generate one of the stress trajectories.

    ``kind`` is ``panoramic``, ``revisit``, ``loops`` or ``offset``. Common
    params: ``frames``, ``hfov``, ``width``, ``height``, ``center``,
    ``segment_length``. ``revisit`` takes ``cycles`` and ``amplitude`` (deg),
    ``loops`` takes ``loops``, ``min_length``, ``max_length`` and ``step``,
    ``offset`` takes ``offset`` and ``step``.
    """
    params = dict(params or {})
    if kind == "panoramic":
        poses, revisits = panoramic(params)
    elif kind == "revisit":
        poses, revisits = repeated_revisit(params)
    elif kind == "loops":
        poses, revisits = random_loops(params, seed)
    elif kind == "offset":
        poses, revisits = offset_return(params)
    else:
        raise ValueError(f"unknown pattern kind {kind!r}; expected one of {', '.join(KINDS)}")
    return Trajectory(
        tuple(poses),
        segment_length=int(params.get("segment_length", SEGMENT_LENGTH)),
        kind=kind,
        params=params,
        seed=seed,
        revisits=tuple(revisits),
    )


def forward_backward(forward: Sequence[CameraPose], segment_length: int = SEGMENT_LENGTH) -> Trajectory:
    """``forward`` followed by its exact retrace (length ``2N - 1``)."""
    forward = list(forward)
    n = len(forward)
    poses = forward + forward[-2::-1]
    revisits = [(n + i, n - 2 - i) for i in range(n - 1)]
    return Trajectory(tuple(poses), segment_length, kind="forward_backward", revisits=tuple(revisits))


def pose_close(a: CameraPose, b: CameraPose, tolerance: float) -> bool:
    return (
        rotation_angle(a.rotation, b.rotation) <= tolerance
        and float(np.linalg.norm(a.center - b.center)) <= tolerance
    )


# ---------------------------------------------------------------------------
# RealEstate10K camera files


class Re10kError(ValueError):
    pass


def import_re10k(text: str, width: int = 128, height: int = 128, segment_length: int = SEGMENT_LENGTH) -> Trajectory:
    """Parse a RealEstate10K camera file.

    Data lines are ``timestamp fx fy cx cy 0 0`` followed by a row-major 3x4
    world-to-camera matrix. It is inverted here to the world-from-camera
    convention. A leading single-token line (the source video URL) is kept.
    """
    source = None
    poses, stamps = [], []
    intr = None
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if not poses and source is None and len(fields) == 1:
            source = fields[0]
            continue
        if len(fields) != RE10K_FIELDS:
            raise Re10kError(f"line {lineno}: expected {RE10K_FIELDS} fields, got {len(fields)}")
        try:
            stamp = int(fields[0])
            vals = [float(v) for v in fields[1:]]
        except ValueError:
            raise Re10kError(f"line {lineno}: non-numeric field") from None
        fx, fy, cx, cy = vals[:4]
        m = np.array(vals[6:]).reshape(3, 4)
        R_cw, t = m[:, :3], m[:, 3]
        if np.abs(R_cw @ R_cw.T - np.eye(3)).max() > RE10K_ORTHO_TOL or abs(np.linalg.det(R_cw) - 1) > RE10K_ORTHO_TOL:
            raise Re10kError(f"line {lineno}: rotation is not orthonormal")
        if np.abs(R_cw @ R_cw.T - np.eye(3)).max() > 1e-7:
            R_cw = project_to_so3(R_cw)
        try:
            k = Intrinsics(fx, fy, cx, cy, width, height)
        except ValueError as exc:
            raise Re10kError(f"line {lineno}: {exc}") from None
        if intr is None:
            intr = k
        elif k != intr:
            raise Re10kError(f"line {lineno}: intrinsics differ from the first frame")
        # solve rather than transpose so that export reproduces t exactly
        poses.append(CameraPose(R_cw.T, -np.linalg.solve(R_cw, t), k))
        stamps.append(stamp)
    if not poses:
        raise Re10kError("no camera lines found")
    params = {"timestamps": stamps}
    if source is not None:
        params["source"] = source
    return Trajectory(tuple(poses), segment_length, kind="re10k", params=params)


def export_re10k(traj: Trajectory) -> str:
    stamps = traj.params.get("timestamps") or list(range(len(traj)))
    lines = []
    if "source" in traj.params:
        lines.append(str(traj.params["source"]))
    for stamp, p in zip(stamps, traj.poses):
        k = p.intrinsics
        m = p.world_to_camera()
        nums = [k.fx, k.fy, k.cx, k.cy, 0.0, 0.0] + m.ravel().tolist()
        lines.append(" ".join([str(int(stamp))] + [repr(float(v)) for v in nums]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# training-data synthesis


@dataclass(frozen=True)
class TrainingPair:
    history: Optional[int]
    target: int
    stride: int


def stride_partner(g: int, stride: int, n: int) -> int:
    """History frame ``stride`` frames ahead of ``g``, reflected back at the video end."""
    h = g + stride
    if h > n - 1:
        h = g - stride
    if h < 0:
        h = n - 1 if g != n - 1 else 0
    return h


def synth_pseudo_loop(n: int, stride: int, loop_kind: str = "forward_backward") -> tuple[list[int], list[TrainingPair]]:
    """Reorder an ``n``-frame video into a loop and emit stride-offset training pairs.

    Each frame on the return pass is a generation target; its history
    reference is the first-pass frame ``stride`` frames away, never the
    target itself.
    """
    if loop_kind != "forward_backward":
        raise ValueError(f"unsupported loop kind {loop_kind!r}")
    if n < 2:
        raise ValueError(f"video must have at least 2 frames, got {n}")
    if stride == 0:
        raise ValueError("stride 0 pairs every target with itself (identity mapping)")
    if not 1 <= stride < n:
        raise ValueError(f"stride must lie in [1, {n - 1}], got {stride}")
    order = list(range(n)) + list(range(n - 2, -1, -1))
    pairs = [TrainingPair(stride_partner(g, stride, n), g, stride) for g in order[n:]]
    return order, pairs


def apply_history_dropout(pairs: Sequence[TrainingPair], rate: float, seed: int = 0) -> list[TrainingPair]:
    """Drop each pair's history independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1], got {rate}")
    u = np.random.default_rng(seed).random(len(pairs))
    return [replace(p, history=None) if x < rate else p for p, x in zip(pairs, u)]

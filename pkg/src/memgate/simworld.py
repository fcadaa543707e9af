"""Desk-scale stand-in for the video backbone.

A procedural room is ray cast to give exact ground truth for any pose. The
"generator" returns that ground truth corrupted by seeded noise whose
amplitude grows with the number of frames rolled out, unless its memory gate
is open, in which case it blends in the matched stored frame. This makes the
effect of gating on revisit consistency measurable without a neural model;
it is not a model of any particular network.
"""

from __future__ import annotations

import dataclasses
import functools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import gating
from .frames import quantize, read_ppm, to_float, write_ppm
from .gating import GateDecision, GatingConfig, Reason
from .geometry import CameraPose, OverlapConfig, pixel_rays
from .membank import MemoryBank, build_hybrid, build_mask
from .trajectory import Trajectory

EPISODE_VERSION = 1

_WALL_COLORS = np.array(
    [
        [0.85, 0.45, 0.35],  # -x
        [0.35, 0.60, 0.85],  # +x
        [0.90, 0.90, 0.80],  # -y (ceiling)
        [0.55, 0.45, 0.35],  # +y (floor)
        [0.45, 0.80, 0.45],  # -z
        [0.80, 0.75, 0.40],  # +z
    ]
)
_LIGHT = np.array([0.4, 1.0, 0.3]) / np.linalg.norm([0.4, 1.0, 0.3])  # travels downwards
_AMBIENT = 0.35


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    color: tuple[float, float, float]

    @property
    def corners(self) -> np.ndarray:
        lo, hi = np.array(self.lo), np.array(self.hi)
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


@dataclass(frozen=True)
class SceneSpec:
    """A textured box room with ``num_boxes`` seeded boxes standing on the floor.

    y points down, so the floor is the ``y = +half_extents[1]`` plane.
    """

    seed: int = 0
    half_extents: tuple[float, float, float] = (4.0, 1.5, 4.0)
    num_boxes: int = 6
    cell: float = 0.2
    keep_clear: tuple[float, float] = (1.5, 2.6)  # |x|, |z| region left free for cameras

    def __post_init__(self):
        if self.seed < 0:
            raise SimError(f"scene seed must be nonnegative, got {self.seed}")
        if min(self.half_extents) <= 0 or self.cell <= 0 or self.num_boxes < 0:
            raise SimError("scene extents, cell size and box count must be positive")

    @property
    def boxes(self) -> tuple[Box, ...]:
        return _boxes(self)

    def contains(self, point) -> bool:
        return bool(np.all(np.abs(np.asarray(point)) < np.asarray(self.half_extents)))


@functools.lru_cache(maxsize=64)
def _boxes(scene: SceneSpec) -> tuple[Box, ...]:
    rng = np.random.default_rng([scene.seed, 0xB0C5])
    hx, hy, hz = scene.half_extents
    cx, cz = scene.keep_clear
    out = []
    while len(out) < scene.num_boxes:
        size = rng.uniform([0.3, 0.3, 0.3], [0.9, 1.2, 0.9])
        x = rng.uniform(-hx + size[0] / 2 + 0.05, hx - size[0] / 2 - 0.05)
        z = rng.uniform(-hz + size[2] / 2 + 0.05, hz - size[2] / 2 - 0.05)
        if abs(x) - size[0] / 2 < cx and abs(z) - size[2] / 2 < cz:
            continue
        lo = (x - size[0] / 2, hy - size[1], z - size[2] / 2)
        hi = (x + size[0] / 2, hy, z + size[2] / 2)
        color = tuple(float(v) for v in rng.uniform(0.25, 1.0, size=3))
        out.append(Box(lo, hi, color))
    return tuple(out)


def _hash01(cells: np.ndarray, salt: np.ndarray, seed: int) -> np.ndarray:
    """Per-cell pseudo-random value in [0, 1) from integer cell coordinates."""
    c = cells.astype(np.int64).astype(np.uint64)
    h = (
        c[..., 0] * np.uint64(0x9E3779B97F4A7C15)
        ^ c[..., 1] * np.uint64(0xC2B2AE3D27D4EB4F)
        ^ c[..., 2] * np.uint64(0x165667B19E3779F9)
        ^ salt.astype(np.uint64) * np.uint64(0xD6E8FEB86659FD93)
        ^ np.uint64(seed)
    )
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


@dataclass
class Hits:
    depth: np.ndarray     # ray parameter t, (H, W)
    normal: np.ndarray    # (H, W, 3)
    material: np.ndarray  # 0..5 walls, 6 + k for box k
    point: np.ndarray     # (H, W, 3)


def cast_rays(scene: SceneSpec, pose: CameraPose, height: int, width: int) -> Hits:
    """Nearest-surface hits for the rays through every pixel center."""
    if not scene.contains(pose.center):
        raise SimError(f"camera center {pose.center.tolist()} is outside the room")
    d = pixel_rays(pose, height, width)
    o = pose.center
    half = np.asarray(scene.half_extents)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        # room walls: exit distance along each axis
        t_axis = np.where(d > 0, (half - o) * inv, np.where(d < 0, (-half - o) * inv, np.inf))
        axis = np.argmin(t_axis, axis=-1)
        t = np.take_along_axis(t_axis, axis[..., None], -1)[..., 0]
        sign = np.sign(np.take_along_axis(d, axis[..., None], -1)[..., 0])
        material = (2 * axis + (sign > 0)).astype(np.int64)
        normal = np.zeros(d.shape)
        np.put_along_axis(normal, axis[..., None], -sign[..., None], -1)

        for k, box in enumerate(scene.boxes):
            t1 = (np.asarray(box.lo) - o) * inv
            t2 = (np.asarray(box.hi) - o) * inv
            tmin = np.minimum(t1, t2)
            near_axis = np.argmax(tmin, axis=-1)
            t_near = np.take_along_axis(tmin, near_axis[..., None], -1)[..., 0]
            t_far = np.max(np.maximum(t1, t2), axis=-1)
            hit = (t_near <= t_far) & (t_near > 1e-9) & (t_near < t)
            if not hit.any():
                continue
            t = np.where(hit, t_near, t)
            material = np.where(hit, 6 + k, material)
            n_box = np.zeros(d.shape)
            s = np.sign(np.take_along_axis(d, near_axis[..., None], -1))
            np.put_along_axis(n_box, near_axis[..., None], -s, -1)
            normal = np.where(hit[..., None], n_box, normal)
    point = o + t[..., None] * d
    return Hits(t, normal, material, point)


def render(scene: SceneSpec, pose: CameraPose, resolution: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Ray-cast ``scene`` from ``pose``; float RGB in [0, 1] on the 8-bit grid."""
    h, w = resolution or (pose.intrinsics.height, pose.intrinsics.width)
    hits = cast_rays(scene, pose, h, w)
    box_colors = np.array([b.color for b in scene.boxes]).reshape(-1, 3)
    base = np.concatenate([_WALL_COLORS, box_colors])[hits.material]
    cells = np.floor(hits.point / scene.cell - 0.5 * hits.normal)
    tex = _hash01(cells, hits.material, scene.seed)
    albedo = base * (0.45 + 0.55 * tex)[..., None]
    shade = _AMBIENT + (1 - _AMBIENT) * np.clip(-(hits.normal @ _LIGHT), 0.0, 1.0)
    return quantize(albedo * shade[..., None])


# ---------------------------------------------------------------------------
# generator stub


@dataclass(frozen=True)
class DriftConfig:
    """Per-step noise increment of the unconditioned generator (channel units)."""

    sigma0: float = 0.01

    def __post_init__(self):
        if not self.sigma0 >= 0:
            raise SimError(f"sigma0 must be nonnegative, got {self.sigma0}")


@dataclass
class DriftState:
    """Counters carried between segments.

    ``steps`` counts frames since the last memory-anchored frame and resets
    to 0 on every open gate. ``clock`` counts generated frames since the
    initial image and sets the noise amplitude of unconditioned frames, so
    memory use never changes a frame generated without memory.
    """

    steps: int = 0
    clock: int = 0


def drift_noise(seed: int, frame_index: int, shape) -> np.ndarray:
    """Unit-variance noise field for one frame, fixed by ``(seed, frame_index)``."""
    return np.random.default_rng([seed, frame_index]).standard_normal(shape)


def drift_field(drift: "DriftConfig", clock: int, seed: int, frame_index: int, shape) -> np.ndarray:
    """Additive error of an unconditioned frame before clamping: std ``sigma0 * clock``."""
    sigma = drift.sigma0 * clock
    if sigma == 0:
        return np.zeros(shape)
    return sigma * drift_noise(seed, frame_index, shape)


@dataclass
class SegmentResult:
    frames: list[np.ndarray]
    ground_truth: list[np.ndarray]
    steps: list[int]
    state: DriftState


def generate_segment(
    scene: SceneSpec,
    poses: Sequence[CameraPose],
    decisions: Sequence[GateDecision],
    bank: MemoryBank,
    drift: DriftConfig = DriftConfig(),
    seed: int = 0,
    *,
    indices: Optional[Sequence[int]] = None,
    state: Optional[DriftState] = None,
    resolution: Optional[tuple[int, int]] = None,
    ground_truth: Optional[Sequence[np.ndarray]] = None,
) -> SegmentResult:
    """Generate one segment and append it to ``bank``.

    Gate closed: ground truth plus noise of std ``sigma0 * clock``.
    Gate open: ``s * stored_frame + (1 - s) * ground_truth`` with ``s``
    clamped to [0, 1]; the anchor counter resets.
    """
    poses = list(poses)
    indices = list(indices) if indices is not None else [d.target for d in decisions]
    if len(decisions) != len(poses) or len(indices) != len(poses):
        raise SimError(f"{len(decisions)} decisions / {len(indices)} indices for {len(poses)} poses")
    for d, i in zip(decisions, indices):
        if d.target != i:
            raise SimError(f"decision for frame {d.target} does not match frame {i}")
        if d.gate == 1 and d.ref not in bank:
            raise SimError(f"frame {i} is gated to frame {d.ref}, which is not in the memory bank")
    if seed < 0:
        raise SimError(f"seed must be nonnegative, got {seed}")
    state = dataclasses.replace(state) if state is not None else DriftState()
    if resolution is None and poses:
        resolution = (poses[0].intrinsics.height, poses[0].intrinsics.width)
    res = resolution

    frames, gts, steps = [], [], []
    for k, (pose, d, idx) in enumerate(zip(poses, decisions, indices)):
        gt = ground_truth[k] if ground_truth is not None else render(scene, pose, res)
        state.clock += 1
        if d.gate == 1:
            stored = bank[d.ref].frame
            if stored.shape != gt.shape:
                raise SimError(f"stored frame {d.ref} has shape {stored.shape}, expected {gt.shape}")
            w = min(max(d.score, 0.0), 1.0)
            frame = quantize(w * stored + (1.0 - w) * gt)
            state.steps = 0
        else:
            frame = quantize(gt + drift_field(drift, state.clock, seed, idx, gt.shape))
            state.steps += 1
        frames.append(frame)
        gts.append(gt)
        steps.append(state.steps)
    for pose, idx, frame in zip(poses, indices, frames):
        bank.add(idx, pose, frame)
    return SegmentResult(frames, gts, steps, state)


# ---------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeRecord:
    trajectory: Trajectory
    ground_truth: list[np.ndarray]
    generated: list[np.ndarray]
    decisions: list[GateDecision]
    steps: list[int]
    bank: MemoryBank
    config: dict = field(default_factory=dict)
    segments: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.generated)

    @property
    def gates(self) -> list[int]:
        return [d.gate for d in self.decisions]

    def save(self, out_dir) -> Path:
        root = Path(out_dir)
        for sub in ("gt", "gen"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        for i, (gt, gen) in enumerate(zip(self.ground_truth, self.generated)):
            write_ppm(root / "gt" / f"{i:06d}.ppm", gt)
            write_ppm(root / "gen" / f"{i:06d}.ppm", gen)
        self.bank.save(root / "bank")
        frames = [
            {"t": d.target, "score": d.score, "ref": d.ref, "gate": d.gate, "reason": d.reason.value,
             "distance": d.distance, "steps_since_anchor": s}
            for d, s in zip(self.decisions, self.steps)
        ]
        doc = {
            "version": EPISODE_VERSION,
            "config": self.config,
            "segments": self.segments,
            "trajectory": self.trajectory.to_dict(),
            "frames": frames,
            "gate_trace": gating.format_trace(self.decisions),
        }
        (root / "episode.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        return root

    @classmethod
    def load(cls, out_dir) -> "EpisodeRecord":
        root = Path(out_dir)
        doc = json.loads((root / "episode.json").read_text(encoding="utf-8"))
        if doc.get("version") != EPISODE_VERSION:
            raise SimError(f"unsupported episode version {doc.get('version')!r}")
        traj = Trajectory.from_dict(doc["trajectory"])
        decisions, steps = [], []
        for f in doc["frames"]:
            decisions.append(GateDecision(f["t"], f["score"], f["ref"], f["gate"], Reason(f["reason"]), f["distance"]))
            steps.append(f["steps_since_anchor"])
        n = len(decisions)
        gt = [to_float(read_ppm(root / "gt" / f"{i:06d}.ppm")) for i in range(n)]
        gen = [to_float(read_ppm(root / "gen" / f"{i:06d}.ppm")) for i in range(n)]
        return cls(traj, gt, gen, decisions, steps, MemoryBank.load(root / "bank"), doc["config"], doc["segments"])


def run_episode(
    scene: SceneSpec,
    traj: Trajectory,
    gating_cfg: GatingConfig = GatingConfig(),
    drift: DriftConfig = DriftConfig(),
    seed: int = 0,
    *,
    memory: bool = True,
    initial_frame: bool = True,
    window: int = 2,
    patch: int = 16,
    resolution: Optional[tuple[int, int]] = None,
) -> EpisodeRecord:
    """Roll a trajectory out segment by segment against a growing memory bank.

    With ``initial_frame`` the first pose is the conditioning image: its
    ground-truth render is stored in the bank before generation starts and
    frames ``1..N-1`` are generated in chunks of ``traj.segment_length``.
    Without it every frame is generated, starting from an empty bank.

    Gates are computed against the bank as it stands before each segment,
    with the previous frame's decision carried across the segment boundary
    for the temporal rule. ``memory=False`` computes the same gates and then
    forces them all closed.
    """
    res = resolution or (traj.intrinsics.height, traj.intrinsics.width)
    tokens_per_frame = -(-res[0] // patch) * -(-res[1] // patch)
    bank = MemoryBank()
    gt_frames: list[np.ndarray] = []
    generated: list[np.ndarray] = []
    decisions: list[GateDecision] = []
    steps: list[int] = []
    segments: list[dict] = []
    state = DriftState()
    prev: Optional[GateDecision] = None
    start = 0

    if initial_frame:
        p0 = traj[0]
        img0 = render(scene, p0, res)
        bank.add(0, p0, img0)
        prev = gating.compute_gates([p0], [p0], gating_cfg, history_ids=[0])[0]
        decisions.append(prev if memory else prev.disabled())
        gt_frames.append(img0)
        generated.append(img0)
        steps.append(0)
        start = 1

    for seg in traj.segments(start):
        seg_poses = [traj[i] for i in seg]
        raw = gating.compute_gates(
            seg_poses, bank.poses, gating_cfg, history_ids=bank.indices, start=seg.start, prev=prev
        )
        prev = raw[-1]
        decs = raw if memory else [d.disabled() for d in raw]
        hybrid = build_hybrid(bank, decs, window, patch)
        mask = build_mask(decs, hybrid, tokens_per_frame)
        out = generate_segment(
            scene, seg_poses, decs, bank, drift, seed, indices=list(seg), state=state, resolution=res
        )
        state = out.state
        segments.append(
            {
                "start": seg.start,
                "stop": seg.stop,
                "i_pre": seg.start - 1 if seg.start > 0 else None,
                "history": len(bank) - len(seg),
                "active": sum(d.gate for d in decs),
                "memory_tokens": len(hybrid),
                "mask_shape": list(mask.shape),
                "mask_true": mask.nnz(),
            }
        )
        decisions.extend(decs)
        gt_frames.extend(out.ground_truth)
        generated.extend(out.frames)
        steps.extend(out.steps)

    config = {
        "seed": seed,
        "memory": memory,
        "initial_frame": initial_frame,
        "window": window,
        "patch": patch,
        "resolution": list(res),
        "scene": dataclasses.asdict(scene),
        "gating": dataclasses.asdict(gating_cfg),
        "drift": dataclasses.asdict(drift),
    }
    config = json.loads(json.dumps(config))  # tuples -> lists, as saved
    return EpisodeRecord(traj, gt_frames, generated, decisions, steps, bank, config, segments)


def scene_from_dict(d: dict) -> SceneSpec:
    return SceneSpec(
        seed=d["seed"],
        half_extents=tuple(d["half_extents"]),
        num_boxes=d["num_boxes"],
        cell=d["cell"],
        keep_clear=tuple(d["keep_clear"]),
    )


def gating_from_dict(d: dict) -> GatingConfig:
    return GatingConfig(
        d["score_threshold"], d["distance_threshold"], d["temporal_threshold"], OverlapConfig(**d["overlap"])
    )

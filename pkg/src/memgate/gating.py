"""Camera-aware gating: geometric relevance scores and per-frame memory gates.

For each target pose the best-matching history pose is the one maximizing

    c = overlap - distance_weight * normalized_distance

and its score ``s`` decides whether memory conditions that frame. The gate
starts open and is closed by three rules, applied in order:

1. ``s < score_threshold`` (the view is novel),
2. the matched pose's normalized distance exceeds ``distance_threshold``
   (large overlap from far away, typical of forward motion),
3. the previous target frame is gated on and matched a history index less
   than ``temporal_threshold`` away (redundant conditioning of neighbours).

Rule 3 is a single forward pass that reads the previous frame's gate after
it has itself been through rule 3.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import CameraPose, OverlapConfig, distance_matrix, overlap_matrix


class Reason(str, enum.Enum):
    NONE = "none"
    LOW_SCORE = "low_score"
    FAR_DISTANCE = "far_distance"
    TEMPORAL_REDUNDANCY = "temporal_redundancy"
    EMPTY_HISTORY = "empty_history"
    MEMORY_DISABLED = "memory_disabled"


@dataclass(frozen=True)
class GatingConfig:
    score_threshold: float = 0.3
    distance_threshold: float = 0.6
    temporal_threshold: int = 2
    overlap: OverlapConfig = field(default_factory=OverlapConfig)

    def __post_init__(self):
        if not (math.isfinite(self.score_threshold) and math.isfinite(self.distance_threshold)):
            raise ValueError("gating thresholds must be finite")
        if int(self.temporal_threshold) != self.temporal_threshold or self.temporal_threshold < 0:
            raise ValueError(f"temporal_threshold must be a nonnegative integer, got {self.temporal_threshold}")


@dataclass(frozen=True)
class GateDecision:
    """Gate outcome for one target frame.

    ``ref`` is the matched history id and is kept even when the gate is
    closed; it is ``None`` only when there was no history at all.
    """

    target: int
    score: float
    ref: Optional[int]
    gate: int
    reason: Reason = Reason.NONE
    distance: float = 0.0

    @property
    def active(self) -> bool:
        return self.gate == 1

    def disabled(self) -> "GateDecision":
        """Same decision with memory forced off."""
        return GateDecision(self.target, self.score, self.ref, 0, Reason.MEMORY_DISABLED, self.distance)


def relevance_matrix(targets: Sequence[CameraPose], history: Sequence[CameraPose], cfg: GatingConfig = GatingConfig()) -> np.ndarray:
    """Geometric relevance of every history pose to every target, shape ``(N, F)``."""
    rho = overlap_matrix(targets, history, cfg.overlap)
    d = distance_matrix(targets, history, cfg.overlap)
    return rho - cfg.overlap.distance_weight * d


def compute_gates(
    targets: Sequence[CameraPose],
    history: Sequence[CameraPose],
    cfg: GatingConfig = GatingConfig(),
    *,
    history_ids: Optional[Sequence[int]] = None,
    start: int = 0,
    prev: Optional[GateDecision] = None,
) -> list[GateDecision]:
    """Gate every target pose against the history poses.

    Args:
        targets: poses of the frames about to be generated.
        history: poses of the frames already in memory.
        cfg: thresholds and overlap estimator settings.
        history_ids: identifiers reported as ``ref`` (default: positions
            ``0..F-1``). The temporal rule compares these ids, so pass global
            frame indices when gating against a memory bank.
        start: ``target`` index assigned to ``targets[0]``.
        prev: decision of the frame immediately preceding ``targets[0]``.
            When given, the temporal rule also applies to the first target.
            ``None`` reproduces the plain per-chunk algorithm.

    Returns:
        One ``GateDecision`` per target, in order.
    """
    targets, history = list(targets), list(history)
    ids = list(range(len(history))) if history_ids is None else [int(i) for i in history_ids]
    if len(ids) != len(history):
        raise ValueError(f"{len(ids)} history ids for {len(history)} history poses")
    if not history:
        return [GateDecision(start + t, 0.0, None, 0, Reason.EMPTY_HISTORY) for t in range(len(targets))]

    c = relevance_matrix(targets, history, cfg)
    d = distance_matrix(targets, history, cfg.overlap)
    best = np.argmax(c, axis=1)  # first maximum -> smallest index on ties

    out: list[GateDecision] = []
    for t, r in enumerate(best):
        s = float(c[t, r])
        reason = Reason.NONE
        if s < cfg.score_threshold:
            reason = Reason.LOW_SCORE
        elif d[t, r] > cfg.distance_threshold:
            reason = Reason.FAR_DISTANCE
        out.append(GateDecision(start + t, s, ids[r], int(reason is Reason.NONE), reason, float(d[t, r])))

    last = prev
    for t, dec in enumerate(out):
        if (
            dec.gate == 1
            and last is not None
            and last.gate == 1
            and last.ref is not None
            and abs(dec.ref - last.ref) < cfg.temporal_threshold
        ):
            dec = GateDecision(dec.target, dec.score, dec.ref, 0, Reason.TEMPORAL_REDUNDANCY, dec.distance)
            out[t] = dec
        last = dec
    return out


def temporal_violations(decisions: Sequence[GateDecision], temporal_threshold: int, prev: Optional[GateDecision] = None) -> list[int]:
    """Targets whose gate and the previous frame's gate are both on with close refs."""
    bad = []
    seq = ([prev] if prev is not None else []) + list(decisions)
    for a, b in zip(seq, seq[1:]):
        if a.gate == 1 and b.gate == 1 and abs(a.ref - b.ref) < temporal_threshold:
            bad.append(b.target)
    return bad


# ---------------------------------------------------------------------------
# line-oriented trace records


def format_trace(decisions: Sequence[GateDecision]) -> str:
    lines = []
    for dec in decisions:
        ref = "-" if dec.ref is None else str(dec.ref)
        lines.append(f"{dec.target}, {dec.score!r}, {ref}, {dec.gate}, {dec.reason.value}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_trace(text: str) -> list[GateDecision]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 5:
            raise ValueError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        t, s, r, g, reason = parts
        try:
            out.append(GateDecision(int(t), float(s), None if r == "-" else int(r), int(g), Reason(reason)))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out

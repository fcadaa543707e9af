"""Image metrics and the revisit-consistency protocol."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .frames import to_float
from .trajectory import Trajectory

PSNR_CAP = 99.0
LUMA = np.array([0.299, 0.587, 0.114])


class MetricError(ValueError):
    pass


def _check_pair(a, b):
    a, b = to_float(a), to_float(b)
    if a.shape != b.shape:
        raise MetricError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def luma(frame: np.ndarray) -> np.ndarray:
    frame = to_float(frame)
    return frame if frame.ndim == 2 else frame @ LUMA


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with the 1-D kernel ``g`` on both axes."""
    n = g.size
    tmp = sliding_window_view(img, n, axis=0) @ g
    return sliding_window_view(tmp, n, axis=1) @ g


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over Gaussian-weighted windows of the luma channel.

    Only windows lying fully inside the image are used.
    """
    a, b = _check_pair(a, b)
    ya, yb = luma(a), luma(b)
    if min(ya.shape) < window:
        raise MetricError(f"frame {ya.shape} is smaller than the {window}x{window} window")
    g = gaussian_kernel(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(ya, g), _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a**2
    var_b = _filter_valid(yb * yb, g) - mu_b**2
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# revisit protocol


@dataclass(frozen=True)
class RevisitPairing:
    pairs: tuple[tuple[int, int], ...]  # (return frame, first-pass frame)
    tolerance: float

    def __len__(self) -> int:
        return len(self.pairs)


def pair_revisits(traj: Trajectory, tolerance: float = 1e-6) -> RevisitPairing:
    """Pair each frame with the earliest earlier frame at the same pose.

    Poses match when both the rotation geodesic angle (radians) and the
    center distance are within ``tolerance``.
    """
    R = np.stack([p.rotation for p in traj.poses])
    c = np.stack([p.center for p in traj.poses])
    pairs = []
    for t in range(1, len(traj)):
        dc = np.linalg.norm(c[:t] - c[t], axis=1)
        chord = np.linalg.norm((R[:t] - R[t]).reshape(t, 9), axis=1) / (2 * math.sqrt(2))
        ang = 2 * np.arcsin(np.minimum(chord, 1.0))
        hit = np.flatnonzero((dc <= tolerance) & (ang <= tolerance))
        if hit.size:
            pairs.append((t, int(hit[0])))
    return RevisitPairing(tuple(pairs), tolerance)


@dataclass
class PairScore:
    ret: int
    first: int
    psnr: float
    ssim: float


@dataclass
class ConsistencyReport:
    pairs: list[PairScore]
    episode: str = ""
    config: dict = field(default_factory=dict)

    @property
    def defined(self) -> bool:
        return bool(self.pairs)

    def aggregate(self) -> dict:
        if not self.pairs:
            return {"defined": False, "psnr_mean": None, "psnr_min": None, "ssim_mean": None, "ssim_min": None}
        p = [s.psnr for s in self.pairs]
        q = [s.ssim for s in self.pairs]
        return {
            "defined": True,
            "psnr_mean": float(np.mean(p)),
            "psnr_min": float(np.min(p)),
            "ssim_mean": float(np.mean(q)),
            "ssim_min": float(np.min(q)),
        }

    @property
    def psnr_mean(self) -> Optional[float]:
        return self.aggregate()["psnr_mean"]

    @property
    def ssim_mean(self) -> Optional[float]:
        return self.aggregate()["ssim_mean"]

    def to_dict(self) -> dict:
        return {
            "episode": self.episode,
            "config": self.config,
            "pairs": [asdict(s) for s in self.pairs],
            "aggregate": self.aggregate(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_table(self) -> str:
        rows = [("return", "first", "psnr_db", "ssim")]
        rows += [(str(s.ret), str(s.first), f"{s.psnr:.3f}", f"{s.ssim:.4f}") for s in self.pairs]
        agg = self.aggregate()
        if agg["defined"]:
            rows.append(("mean", "", f"{agg['psnr_mean']:.3f}", f"{agg['ssim_mean']:.4f}"))
            rows.append(("min", "", f"{agg['psnr_min']:.3f}", f"{agg['ssim_min']:.4f}"))
        else:
            rows.append(("mean", "", "undefined", "undefined"))
        return format_table(rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["return", "first", "psnr_db", "ssim"])
        for s in self.pairs:
            w.writerow([s.ret, s.first, repr(s.psnr), repr(s.ssim)])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict) -> "ConsistencyReport":
        return cls([PairScore(**p) for p in d["pairs"]], d.get("episode", ""), d.get("config", {}))


def format_table(rows) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def evaluate(episode, pairing: RevisitPairing, name: str = "") -> ConsistencyReport:
    """Score each return frame against its first-pass counterpart (generated frames)."""
    frames = episode.generated
    out = []
    for ret, first in pairing.pairs:
        if not (0 <= first < len(frames) and 0 <= ret < len(frames)):
            raise MetricError(f"pair ({ret}, {first}) is out of range for {len(frames)} frames")
        out.append(PairScore(ret, first, psnr(frames[ret], frames[first]), ssim(frames[ret], frames[first])))
    return ConsistencyReport(out, name, {"tolerance": pairing.tolerance})


def compare_reports(a: ConsistencyReport, b: ConsistencyReport) -> str:
    """Per-pair deltas ``a - b`` as an aligned text table."""
    bmap = {(s.ret, s.first): s for s in b.pairs}
    rows = [("return", "first", "psnr_a", "psnr_b", "d_psnr", "ssim_a", "ssim_b", "d_ssim")]
    dp, ds = [], []
    for s in a.pairs:
        o = bmap.get((s.ret, s.first))
        if o is None:
            continue
        dp.append(s.psnr - o.psnr)
        ds.append(s.ssim - o.ssim)
        rows.append((str(s.ret), str(s.first), f"{s.psnr:.3f}", f"{o.psnr:.3f}", f"{dp[-1]:+.3f}",
                     f"{s.ssim:.4f}", f"{o.ssim:.4f}", f"{ds[-1]:+.4f}"))
    if dp:
        rows.append(("mean", "", "", "", f"{np.mean(dp):+.3f}", "", "", f"{np.mean(ds):+.4f}"))
    return format_table(rows)


"""Append-only memory of generated frames, hybrid token assembly and attention masks.

Frames are held as 8-bit RGB so that a saved bank reloads bit-identically.
Tokens are mean-RGB descriptors of ``patch x patch`` tiles (edge tiles are
smaller), standing in for the video encoder's features.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .frames import decode_ppm, encode_ppm, fnv1a64, to_float, to_uint8
from .gating import GateDecision
from .geometry import CameraPose, pose_from_dict, pose_to_dict

MANIFEST_VERSION = 1


class BankError(ValueError):
    pass


class ChecksumError(BankError):
    pass


@dataclass(frozen=True, eq=False)
class MemoryEntry:
    index: int
    pose: CameraPose
    pixels: np.ndarray  # (H, W, 3) uint8, read-only

    def __post_init__(self):
        px = to_uint8(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise BankError(f"frame must be H x W x 3, got {px.shape}")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "index", int(self.index))

    @property
    def frame(self) -> np.ndarray:
        """Frame as float64 in [0, 1]."""
        return to_float(self.pixels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


class MemoryBank:
    """Insert-only store of ``MemoryEntry`` keyed by increasing frame index.

    Inserts publish a new immutable snapshot under a lock, so concurrent
    readers see either the old or the new contents, never a partial insert.
    """

    def __init__(self, entries: Iterable[MemoryEntry] = ()):
        self._lock = threading.Lock()
        self._entries: tuple[MemoryEntry, ...] = ()
        self._by_index: dict[int, MemoryEntry] = {}
        for e in entries:
            self.insert(e)

    def insert(self, entry: MemoryEntry) -> "MemoryBank":
        with self._lock:
            if self._entries:
                last = self._entries[-1]
                if entry.index <= last.index:
                    raise BankError(f"frame index {entry.index} is not after last stored index {last.index}")
                if entry.shape != last.shape:
                    raise BankError(f"frame size {entry.shape} differs from bank size {last.shape}")
            by_index = dict(self._by_index)
            by_index[entry.index] = entry
            self._entries, self._by_index = self._entries + (entry,), by_index
        return self

    def add(self, index: int, pose: CameraPose, frame: np.ndarray) -> "MemoryBank":
        return self.insert(MemoryEntry(index, pose, frame))

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __contains__(self, index) -> bool:
        return index in self._by_index

    def __getitem__(self, index: int) -> MemoryEntry:
        try:
            return self._by_index[index]
        except KeyError:
            raise KeyError(f"frame {index} not in memory bank") from None

    @property
    def entries(self) -> tuple[MemoryEntry, ...]:
        return self._entries

    @property
    def indices(self) -> list[int]:
        return [e.index for e in self._entries]

    @property
    def poses(self) -> list[CameraPose]:
        return [e.pose for e in self._entries]

    @property
    def frame_shape(self) -> Optional[tuple[int, int]]:
        return self._entries[0].shape if self._entries else None

    def window(self, center: int, radius: int) -> list[int]:
        """Stored indices within ``[center - radius, center + radius]``."""
        return [i for i in self.indices if center - radius <= i <= center + radius]

    # -- persistence ------------------------------------------------------

    def save(self, path) -> Path:
        root = Path(path)
        (root / "frames").mkdir(parents=True, exist_ok=True)
        records = []
        for e in self._entries:
            name = f"frames/{e.index:06d}.ppm"
            data = encode_ppm(e.pixels)
            (root / name).write_bytes(data)
            records.append(
                {"index": e.index, "pose": pose_to_dict(e.pose), "file": name, "fnv1a64": f"{fnv1a64(data):016x}"}
            )
        manifest = {"version": MANIFEST_VERSION, "entries": records}
        (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
        return root

    @classmethod
    def load(cls, path) -> "MemoryBank":
        root = Path(path)
        try:
            manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
            if manifest.get("version") != MANIFEST_VERSION:
                raise BankError(f"unsupported manifest version {manifest.get('version')!r}")
            records = manifest["entries"]
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise BankError(f"malformed manifest in {root}: {exc}") from None
        bank = cls()
        for rec in records:
            try:
                data = (root / rec["file"]).read_bytes()
                expected = rec["fnv1a64"]
                index, pose = rec["index"], pose_from_dict(rec["pose"])
            except (KeyError, TypeError) as exc:
                raise BankError(f"malformed manifest entry {rec!r}: {exc}") from None
            if f"{fnv1a64(data):016x}" != expected:
                raise ChecksumError(f"checksum mismatch for {rec['file']}")
            bank.insert(MemoryEntry(index, pose, decode_ppm(data)))
        return bank


def save(bank: MemoryBank, path) -> Path:
    return bank.save(path)


def load(path) -> MemoryBank:
    return MemoryBank.load(path)


# ---------------------------------------------------------------------------
# hybrid memory


def patch_tokens(pixels: np.ndarray, patch: int) -> np.ndarray:
    """Mean RGB of each ``patch x patch`` tile, row-major, shape ``(ceil(H/p)*ceil(W/p), 3)``."""
    frame = to_float(pixels)
    h, w, _ = frame.shape
    ny, nx = math.ceil(h / patch), math.ceil(w / patch)
    tokens = np.empty((ny * nx, 3))
    k = 0
    for by in range(ny):
        for bx in range(nx):
            tile = frame[by * patch : (by + 1) * patch, bx * patch : (bx + 1) * patch]
            tokens[k] = tile.reshape(-1, 3).mean(axis=0)
            k += 1
    return tokens


@dataclass(frozen=True)
class TokenBlock:
    kind: str  # "spatial" or "temporal"
    ref: int
    frames: tuple[int, ...]
    start: int
    stop: int


@dataclass(frozen=True, eq=False)
class HybridMemory:
    """Spatial and temporal token blocks with per-token source frames.

    For each matched reference (ascending) a spatial block holding that
    frame's tokens is followed by a temporal block holding the tokens of the
    stored frames in its window. Windows of different references may
    overlap; their tokens are duplicated per block.
    """

    tokens: np.ndarray
    source: np.ndarray
    blocks: tuple[TokenBlock, ...]
    tokens_per_frame: int

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def blocks_for(self, ref: int) -> list[TokenBlock]:
        return [b for b in self.blocks if b.ref == ref]

    @property
    def refs(self) -> list[int]:
        return sorted({b.ref for b in self.blocks})

    @property
    def owner(self) -> np.ndarray:
        """Reference index owning each token column."""
        out = np.empty(len(self), dtype=np.int64)
        for b in self.blocks:
            out[b.start : b.stop] = b.ref
        return out


def build_hybrid(bank: MemoryBank, decisions: Sequence[GateDecision], window: int = 2, patch: int = 16) -> HybridMemory:
    if window < 0 or patch < 1:
        raise ValueError(f"window must be >= 0 and patch >= 1, got {window}, {patch}")
    refs = sorted({d.ref for d in decisions if d.gate == 1})
    missing = [r for r in refs if r not in bank]
    if missing:
        raise BankError(f"matched frames {missing} are not in the memory bank")
    shape = bank.frame_shape
    per_frame = math.ceil(shape[0] / patch) * math.ceil(shape[1] / patch) if shape else 0

    cache: dict[int, np.ndarray] = {}

    def toks(i):
        if i not in cache:
            cache[i] = patch_tokens(bank[i].pixels, patch)
        return cache[i]

    chunks, sources, blocks = [], [], []
    pos = 0
    for r in refs:
        for kind, frames in (("spatial", [r]), ("temporal", bank.window(r, window))):
            for f in frames:
                chunks.append(toks(f))
                sources.append(np.full(per_frame, f, dtype=np.int64))
            n = per_frame * len(frames)
            blocks.append(TokenBlock(kind, r, tuple(frames), pos, pos + n))
            pos += n
    tokens = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    source = np.concatenate(sources) if sources else np.zeros(0, dtype=np.int64)
    return HybridMemory(tokens, source, tuple(blocks), per_frame)


# ---------------------------------------------------------------------------
# attention mask


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """Boolean (query token x memory token) mask.

    ``row_groups[i] = (target, start, stop)`` gives the query rows of the
    i-th decision; column groups are the ``HybridMemory`` blocks.
    """

    matrix: np.ndarray
    row_groups: tuple[tuple[int, int, int], ...]
    col_groups: tuple[TokenBlock, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def nnz(self) -> int:
        return int(np.count_nonzero(self.matrix))


def build_mask(decisions: Sequence[GateDecision], hybrid: HybridMemory, tokens_per_query_frame: int) -> AttentionMask:
    """Route each gated frame's queries to the blocks of its matched reference only."""
    q = int(tokens_per_query_frame)
    if q < 1:
        raise ValueError(f"tokens_per_query_frame must be >= 1, got {tokens_per_query_frame}")
    owner = hybrid.owner
    known = set(hybrid.refs)
    mat = np.zeros((len(decisions) * q, len(hybrid)), dtype=bool)
    rows = []
    for i, d in enumerate(decisions):
        rows.append((d.target, i * q, (i + 1) * q))
        if d.gate != 1:
            continue
        if d.ref not in known:
            raise BankError(f"frame {d.target} matches frame {d.ref}, which has no tokens in the hybrid memory")
        mat[i * q : (i + 1) * q] = owner == d.ref
    return AttentionMask(mat, tuple(rows), hybrid.blocks)


def expected_nnz(decisions: Sequence[GateDecision], hybrid: HybridMemory, tokens_per_query_frame: int) -> int:
    """Closed-form true-entry count: queries per active frame times its reference's token count."""
    per_ref = {}
    for b in hybrid.blocks:
        per_ref[b.ref] = per_ref.get(b.ref, 0) + (b.stop - b.start)
    return sum(tokens_per_query_frame * per_ref[d.ref] for d in decisions if d.gate == 1)

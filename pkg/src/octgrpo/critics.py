"""Reward critics: the physical-coherence critic, deterministic stand-ins for
the learned critics, an external-process adapter, and weighted aggregation."""
from __future__ import annotations

import hashlib
import json
import math
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import CriticError
from .geometry import (
    TriMesh,
    center_of_mass,
    connected_components,
    convex_hull_2d,
    extract_surface,
    intersecting_pairs,
    point_hull_distance,
    support_footprint,
    write_obj,
)
from .voxel import VoxelGrid, iou, write_grid

SLOTS = ("h", "v", "x", "p")
DEFAULT_CELL_SIZE = 1.0 / 64


def _normalized(values, what: str) -> tuple[float, ...]:
    vals = tuple(float(v) for v in values)
    if any(v < 0 or not math.isfinite(v) for v in vals):
        raise CriticError(f"{what} must be finite and nonnegative, got {vals}")
    total = sum(vals)
    if total <= 0:
        raise CriticError(f"{what} sum to zero")
    return tuple(v / total for v in vals)


@dataclass(frozen=True)
class CriticWeights:
    w_h: float = 0.25
    w_v: float = 0.25
    w_x: float = 0.25
    w_p: float = 0.25

    def __post_init__(self):
        for name, v in zip(("w_h", "w_v", "w_x", "w_p"), _normalized(self.as_tuple(), "critic weights")):
            object.__setattr__(self, name, v)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w_h, self.w_v, self.w_x, self.w_p)


@dataclass(frozen=True)
class PhysicalWeights:
    stab: float = 1 / 3
    rig: float = 1 / 3
    inter: float = 1 / 3

    def __post_init__(self):
        for name, v in zip(("stab", "rig", "inter"), _normalized((self.stab, self.rig, self.inter), "physical weights")):
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class RewardBreakdown:
    r_h: float
    r_v: float
    r_x: float
    r_p: float
    aggregate: float

    def as_dict(self) -> dict:
        return {"r_h": self.r_h, "r_v": self.r_v, "r_x": self.r_x, "r_p": self.r_p, "aggregate": self.aggregate}


def aggregate(components, weights: CriticWeights = CriticWeights()) -> float:
    comps = tuple(float(c) for c in components)
    if len(comps) != 4:
        raise CriticError(f"expected 4 critic components, got {len(comps)}")
    for c in comps:
        if not (0.0 <= c <= 1.0):
            raise CriticError(f"critic component {c} outside [0, 1]")
    return float(sum(w * c for w, c in zip(weights.as_tuple(), comps)))


# -- physical coherence ------------------------------------------------------

def r_stab(mesh: TriMesh, cell_size: float = DEFAULT_CELL_SIZE, com=None, tol_fraction: float = 0.02) -> float:
    """1 when the center of mass projects into the support hull, else a linear
    falloff over the footprint's bounding-box diagonal."""
    if mesh.n_faces == 0:
        raise CriticError("stability of an empty mesh")
    com = center_of_mass(mesh) if com is None else np.asarray(com, float)
    foot = support_footprint(mesh, tol_fraction)
    d = point_hull_distance(com[:2], convex_hull_2d(foot))
    if d <= 0:
        return 1.0
    diag = float(np.hypot(*np.ptp(foot, axis=0)))
    if diag == 0:
        diag = cell_size
    return max(0.0, 1.0 - d / diag)


def r_rig(mesh: TriMesh) -> float:
    comps = connected_components(mesh)
    if not comps:
        raise CriticError("rigidity of an empty mesh")
    return comps[0] / mesh.n_faces


def r_int(mesh: TriMesh, pairs: int | None = None) -> float:
    if mesh.n_faces == 0:
        return 1.0
    p = intersecting_pairs(mesh) if pairs is None else pairs
    return 1.0 - min(1.0, 2.0 * p / mesh.n_faces)


def r_int_repair_delta(faces_before: int, faces_after: int) -> float:
    """Alternate self-intersection score from an external repair tool's face
    counts before and after repair."""
    if faces_before <= 0:
        return 1.0
    return 1.0 - min(1.0, abs(faces_before - faces_after) / faces_before)


def physical_terms(mesh: TriMesh, cell_size: float = DEFAULT_CELL_SIZE, com=None) -> tuple[float, float, float]:
    return r_stab(mesh, cell_size, com), r_rig(mesh), r_int(mesh)


def physical_score(mesh: TriMesh, weights: PhysicalWeights = PhysicalWeights(),
                   cell_size: float = DEFAULT_CELL_SIZE, com=None) -> float:
    s, r, i = physical_terms(mesh, cell_size, com)
    return weights.stab * s + weights.rig * r + weights.inter * i


# -- critic interface --------------------------------------------------------

@dataclass
class Artifact:
    """What a critic sees: a decoded grid, its surface mesh, and the prompt id."""

    grid: VoxelGrid | None
    prompt_id: int = 0
    imported_mesh: TriMesh | None = field(default=None, repr=False)

    @cached_property
    def mesh(self) -> TriMesh:
        if self.imported_mesh is not None:
            return self.imported_mesh
        if self.grid is None:
            raise CriticError("artifact has neither grid nor mesh")
        return extract_surface(self.grid)

    def require_grid(self, critic: str) -> VoxelGrid:
        if self.grid is None:
            raise CriticError(f"critic {critic!r} needs a voxel grid")
        return self.grid


class Critic:
    name = "critic"

    def score(self, artifact: Artifact) -> float:
        raise NotImplementedError


class PhysicalCritic(Critic):
    name = "physical"

    def __init__(self, weights: PhysicalWeights = PhysicalWeights()):
        self.weights = weights

    def score(self, artifact):
        mesh = artifact.mesh
        if mesh.n_faces == 0:
            return 0.0
        cell = artifact.grid.cell_size if artifact.grid is not None else DEFAULT_CELL_SIZE
        return physical_score(mesh, self.weights, cell)


class OracleAlignmentCritic(Critic):
    """IoU against a per-prompt template grid."""

    name = "oracle_iou"

    def __init__(self, templates):
        self.templates = templates if isinstance(templates, dict) else {None: templates}

    def score(self, artifact):
        grid = artifact.require_grid(self.name)
        tpl = self.templates.get(artifact.prompt_id, self.templates.get(None))
        if tpl is None:
            raise CriticError(f"no template for prompt {artifact.prompt_id}")
        return iou(grid, tpl)


def oracle_alignment_critic(template) -> OracleAlignmentCritic:
    return OracleAlignmentCritic(template)


class ConstantCritic(Critic):
    name = "constant"

    def __init__(self, c: float):
        if not 0.0 <= c <= 1.0:
            raise CriticError(f"constant critic value {c} outside [0, 1]")
        self.c = float(c)

    def score(self, artifact):
        return self.c


class OccupancyBandCritic(Critic):
    """1 inside the fill-fraction band, falling linearly to 0 at empty and full."""

    name = "occupancy_band"

    def __init__(self, lo: float, hi: float):
        if not 0.0 <= lo <= hi <= 1.0:
            raise CriticError(f"bad occupancy band [{lo}, {hi}]")
        self.lo, self.hi = float(lo), float(hi)

    def score(self, artifact):
        f = artifact.require_grid(self.name).fill_fraction
        if f < self.lo:
            return f / self.lo
        if f > self.hi:
            return (1.0 - f) / (1.0 - self.hi)
        return 1.0


class HashNoiseCritic(Critic):
    """Deterministic pseudo-random score keyed on the grid bits and prompt."""

    name = "seeded_hash_noise"

    def __init__(self, sigma: float, seed: int = 0):
        self.sigma, self.seed = float(sigma), int(seed)

    def score(self, artifact):
        h = hashlib.blake2b(digest_size=8)
        h.update(artifact.require_grid(self.name).packed())
        h.update(f"{artifact.prompt_id}:{self.seed}".encode())
        rng = np.random.default_rng(int.from_bytes(h.digest(), "little"))
        return float(np.clip(0.5 + self.sigma * rng.standard_normal(), 0.0, 1.0))


class ExternalProcessCritic(Critic):
    """Scores through a child process speaking line-delimited JSON.

    Request: ``{"grid": path | null, "mesh": path, "prompt_id": int}``;
    response: ``{"score": float}``. Requests to one child are serialized.
    """

    name = "external"

    def __init__(self, command: list[str], timeout: float = 60.0):
        self.command = list(command)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self._tmp = tempfile.TemporaryDirectory(prefix="octgrpo-critic-")
        self._n = 0

    def _child(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          text=True, bufsize=1)
        return self._proc

    def score(self, artifact):
        with self._lock:
            self._n += 1
            tmp = Path(self._tmp.name)
            grid_path = None
            if artifact.grid is not None:
                grid_path = tmp / f"a{self._n}.crvx"
                write_grid(grid_path, artifact.grid)
            mesh_path = tmp / f"a{self._n}.obj"
            write_obj(mesh_path, artifact.mesh)
            req = {"grid": None if grid_path is None else str(grid_path), "mesh": str(mesh_path),
                   "prompt_id": artifact.prompt_id}
            proc = self._child()
            try:
                proc.stdin.write(json.dumps(req) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise CriticError(f"external critic {self.command} died: {exc}") from exc
            if not line:
                raise CriticError(f"external critic {self.command} closed its output")
            try:
                return float(json.loads(line)["score"])
            except (ValueError, KeyError, TypeError) as exc:
                raise CriticError(f"bad response from external critic: {line!r}") from exc

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._tmp.cleanup()


def builtin_stub_critics(config) -> list[Critic]:
    """Stub critics from ``{"type": ..., ...}`` mappings (or a list of them)."""
    configs = config if isinstance(config, list) else [config]
    out = []
    for c in configs:
        kind = c.get("type")
        if kind == "constant":
            out.append(ConstantCritic(c["c"]))
        elif kind == "occupancy_band":
            out.append(OccupancyBandCritic(c["lo"], c["hi"]))
        elif kind == "seeded_hash_noise":
            out.append(HashNoiseCritic(c["sigma"], c.get("seed", 0)))
        else:
            raise CriticError(f"unknown stub critic {kind!r}")
    return out


class CriticStack:
    """Four critic slots (human preference, understanding, alignment, physical)
    plus aggregation weights. An empty slot scores 0."""

    def __init__(self, critics: dict, weights: CriticWeights = CriticWeights()):
        unknown = set(critics) - set(SLOTS)
        if unknown:
            raise CriticError(f"unknown critic slots {sorted(unknown)}")
        self.critics = {s: critics.get(s) for s in SLOTS}
        self.weights = weights

    def _score(self, slot: str, artifact: Artifact) -> float:
        critic = self.critics[slot]
        if critic is None:
            return 0.0
        try:
            value = float(critic.score(artifact))
        except CriticError:
            raise
        except Exception as exc:
            raise CriticError(f"critic {critic.name!r} in slot {slot!r} failed: {exc}") from exc
        if not math.isfinite(value):
            raise CriticError(f"critic {critic.name!r} returned {value}")
        return min(1.0, max(0.0, value))

    def evaluate(self, artifact: Artifact) -> RewardBreakdown:
        comps = [self._score(s, artifact) for s in SLOTS]
        return RewardBreakdown(*comps, aggregate=aggregate(comps, self.weights))

    def close(self):
        for c in self.critics.values():
            if hasattr(c, "close"):
                c.close()

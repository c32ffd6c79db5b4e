"""Modular microphone array geometry.

The full array is a gap-free tiling of identical panels. Each panel tiles a
fixed four-board pattern (four unique PCB designs of 0.25 m x 0.5 m, 50
sensors each) twice in both directions, giving 16 PCBs / 800 sensors per
2 m x 1 m panel. Sub-arrays are sampled from the full sensor pool by greedy
nearest-sensor matching against an optimal target layout (Fermat spiral).

Coordinate frame: x downstream, y from the model toward the array plane,
z vertical. The array plane sits at y = 3.39 m by default.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError

# PCB geometry (meters)
PCB_SHORT = 0.250
PCB_LONG = 0.500
SENSORS_PER_PCB = 50
EDGE_CLEARANCE = 0.005  # each sensor centers a 5 mm free circle
MIN_SENSOR_SPACING = 0.010

PCBS_PER_PANEL = 16
SENSORS_PER_PANEL = 800
PANEL_X = 2.0  # panel extent along x (two blocks of the 1.0 m pattern)
PANEL_Z = 1.0

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))  # ~137.5078 deg

DEFAULT_PLANE_DISTANCE = 3.39
DEFAULT_CENTER_X = 3.0
DEFAULT_CENTER_Z = -0.5


@dataclass(frozen=True)
class PcbLayout:
    """One PCB design: 50 sensor positions local to the board origin."""

    design_id: int
    positions: np.ndarray  # (50, 2) in meters, (short-side, long-side) coords
    extent: tuple[float, float] = (PCB_SHORT, PCB_LONG)

    def validate(self):
        p = self.positions
        if p.shape != (SENSORS_PER_PCB, 2):
            raise ConstraintError(f"expected {SENSORS_PER_PCB} sensor positions, got {p.shape}")
        lo = EDGE_CLEARANCE - 1e-12
        hi_u = self.extent[0] - EDGE_CLEARANCE + 1e-12
        hi_v = self.extent[1] - EDGE_CLEARANCE + 1e-12
        if (p[:, 0] < lo).any() or (p[:, 0] > hi_u).any() or (p[:, 1] < lo).any() or (p[:, 1] > hi_v).any():
            raise ConstraintError("sensor outside PCB clearance region")
        d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        if d.min() < MIN_SENSOR_SPACING - 1e-12:
            raise ConstraintError(f"sensor spacing {d.min():.4f} m below {MIN_SENSOR_SPACING} m")


@dataclass(frozen=True)
class ArrayPlane:
    origin: np.ndarray  # (3,)
    normal: np.ndarray  # (3,), unit, pointing from array toward the model


@dataclass(frozen=True)
class ArrayGeometry:
    """Full hierarchical sensor layout in the tunnel frame."""

    positions: np.ndarray  # (N, 3)
    panel_id: np.ndarray  # (N,) int
    pcb_id: np.ndarray  # (N,) int, 0..15 within panel
    design_id: np.ndarray  # (N,) int, 0..3
    local_index: np.ndarray  # (N,) int, 0..49 within PCB
    plane: ArrayPlane
    extent: tuple[float, float]  # (x width, z height) of the panel tiling
    seed: int | None = None

    @property
    def sensor_count(self) -> int:
        return len(self.positions)

    def bounding_box(self):
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def to_dict(self) -> dict:
        sensors = [
            {
                "id": i,
                "x": float(self.positions[i, 0]),
                "y": float(self.positions[i, 1]),
                "z": float(self.positions[i, 2]),
                "panel": int(self.panel_id[i]),
                "pcb": int(self.pcb_id[i]),
                "design": int(self.design_id[i]),
            }
            for i in range(self.sensor_count)
        ]
        return {
            "sensors": sensors,
            "plane": {
                "origin": [float(v) for v in self.plane.origin],
                "normal": [float(v) for v in self.plane.normal],
            },
            "meta": {"extent": list(self.extent), "seed": self.seed},
        }

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    def save_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y", "z"])
            for i, p in enumerate(self.positions):
                w.writerow([i, repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))])

    @classmethod
    def from_dict(cls, data: dict) -> "ArrayGeometry":
        sensors = sorted(data["sensors"], key=lambda s: s["id"])
        pos = np.array([[s["x"], s["y"], s["z"]] for s in sensors], dtype=float)
        plane = ArrayPlane(
            origin=np.array(data["plane"]["origin"], dtype=float),
            normal=np.array(data["plane"]["normal"], dtype=float),
        )
        meta = data.get("meta", {})
        extent = tuple(meta.get("extent", (0.0, 0.0)))
        lo, hi = pos.min(axis=0), pos.max(axis=0)
        if extent == (0.0, 0.0):
            extent = (float(hi[0] - lo[0]), float(hi[2] - lo[2]))
        return cls(
            positions=pos,
            panel_id=np.array([s.get("panel", 0) for s in sensors], dtype=int),
            pcb_id=np.array([s.get("pcb", 0) for s in sensors], dtype=int),
            design_id=np.array([s.get("design", 0) for s in sensors], dtype=int),
            local_index=np.array([s.get("local", i % SENSORS_PER_PCB) for i, s in enumerate(sensors)], dtype=int),
            plane=plane,
            extent=extent,
            seed=meta.get("seed"),
        )

    @classmethod
    def load_json(cls, path) -> "ArrayGeometry":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class SubArray:
    """Index subset of an ArrayGeometry with sampling provenance."""

    parent: ArrayGeometry
    indices: np.ndarray  # (K,) unique sensor indices
    target_positions: np.ndarray  # (T, 3) the optimal design points
    match_distances: np.ndarray  # (K,) sensor-to-target distance
    nominal_center: np.ndarray  # (3,)
    epsilon: float
    discarded: int = 0  # targets without a sensor within epsilon

    def __post_init__(self):
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("sub-array reuses a sensor index")
        if len(self.indices) > len(self.target_positions):
            raise ValueError("more matched sensors than targets")
        if len(self.match_distances) and self.match_distances.max() > self.epsilon + 1e-12:
            raise ValueError("match distance exceeds epsilon")

    @property
    def positions(self) -> np.ndarray:
        return self.parent.positions[self.indices]

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class ObservationAngles:
    """Pitch/roll observation angles (degrees) with angular spreads."""

    theta: float
    phi: float
    theta_std: float = 0.0
    phi_std: float = 0.0


def generate_pcb_layout(design_id: int, seed: int, max_candidates: int = 50_000) -> PcbLayout:
    """Generate one of the four PCB sensor layouts.

    Placement uses a seeded Cranley-Patterson shift of a 2D Halton sequence,
    greedily filtered so every sensor keeps a 5 mm free radius (10 mm pairwise
    spacing, 5 mm edge clearance). Identical (design_id, seed) pairs always
    produce identical layouts.
    """
    if design_id not in (0, 1, 2, 3):
        raise ValueError(f"design_id must be 0..3, got {design_id}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, design_id, 0x9CB]))
    shift = rng.random(2)
    span_u = PCB_SHORT - 2 * EDGE_CLEARANCE
    span_v = PCB_LONG - 2 * EDGE_CLEARANCE
    accepted: list[np.ndarray] = []
    batch = 2_000
    offset = 0
    while len(accepted) < SENSORS_PER_PCB:
        if offset >= max_candidates:
            raise ConstraintError(
                f"could not place {SENSORS_PER_PCB} sensors after {offset} candidates"
            )
        u = (_halton_range(offset, batch, 2) + shift[0]) % 1.0
        v = (_halton_range(offset, batch, 3) + shift[1]) % 1.0
        offset += batch
        for cu, cv in zip(EDGE_CLEARANCE + u * span_u, EDGE_CLEARANCE + v * span_v):
            cand = np.array([cu, cv])
            if all(np.hypot(*(cand - q)) >= MIN_SENSOR_SPACING for q in accepted):
                accepted.append(cand)
                if len(accepted) == SENSORS_PER_PCB:
                    break
    layout = PcbLayout(design_id=design_id, positions=np.array(accepted))
    layout.validate()
    return layout


def _halton_range(start: int, count: int, base: int) -> np.ndarray:
    """Radical-inverse (van der Corput) values for indices start+1 .. start+count."""
    out = np.empty(count)
    for i in range(count):
        f = 1.0
        r = 0.0
        k = start + i + 1
        while k > 0:
            f /= base
            r += f * (k % base)
            k //= base
        out[i] = r
    return out


def assemble_full_array(
    panels_x: int,
    panels_z: int,
    seed: int,
    plane_distance: float = DEFAULT_PLANE_DISTANCE,
    center_x: float = DEFAULT_CENTER_X,
    center_z: float = DEFAULT_CENTER_Z,
) -> ArrayGeometry:
    """Tile panels into the full array.

    Each panel is a 2 x 2 repetition of the fixed four-PCB pattern (designs
    laid out [[0, 1], [2, 3]] over 1.0 m x 0.5 m), so a panel spans
    2 m x 1 m with 800 sensors. Panels tile gap-free around
    (center_x, center_z) in the plane y = plane_distance.
    """
    if panels_x < 1 or panels_z < 1:
        raise ValueError("panel counts must be >= 1")
    layouts = [generate_pcb_layout(d, seed) for d in range(4)]

    n_total = SENSORS_PER_PANEL * panels_x * panels_z
    positions = np.empty((n_total, 3))
    panel_id = np.empty(n_total, dtype=int)
    pcb_id = np.empty(n_total, dtype=int)
    design_arr = np.empty(n_total, dtype=int)
    local_index = np.empty(n_total, dtype=int)

    array_x0 = center_x - panels_x * PANEL_X / 2.0
    array_z0 = center_z - panels_z * PANEL_Z / 2.0
    i = 0
    for pz in range(panels_z):
        for px in range(panels_x):
            pid = pz * panels_x + px
            panel_x0 = array_x0 + px * PANEL_X
            panel_z0 = array_z0 + pz * PANEL_Z
            pcb = 0
            # two pattern blocks per direction; within a block, 2 x 2 PCBs
            for bz in range(2):
                for bx in range(2):
                    for dz in range(2):
                        for dx in range(2):
                            d_id = dz * 2 + dx
                            # PCB long side lies along x
                            ox = panel_x0 + bx * 1.0 + dx * PCB_LONG
                            oz = panel_z0 + bz * 0.5 + dz * PCB_SHORT
                            pts = layouts[d_id].positions
                            n = len(pts)
                            positions[i : i + n, 0] = ox + pts[:, 1]
                            positions[i : i + n, 1] = plane_distance
                            positions[i : i + n, 2] = oz + pts[:, 0]
                            panel_id[i : i + n] = pid
                            pcb_id[i : i + n] = pcb
                            design_arr[i : i + n] = d_id
                            local_index[i : i + n] = np.arange(n)
                            i += n
                            pcb += 1
    plane = ArrayPlane(
        origin=np.array([center_x, plane_distance, center_z]),
        normal=np.array([0.0, -1.0, 0.0]),
    )
    return ArrayGeometry(
        positions=positions,
        panel_id=panel_id,
        pcb_id=pcb_id,
        design_id=design_arr,
        local_index=local_index,
        plane=plane,
        extent=(panels_x * PANEL_X, panels_z * PANEL_Z),
        seed=int(seed),
    )


def fermat_spiral(count: int, aperture: float, center=(0.0, 0.0)) -> np.ndarray:
    """Fermat (sunflower) spiral of `count` points within `aperture` diameter.

    Point n sits at radius (aperture/2) * sqrt(n / (count - 1)) and azimuth
    n * golden angle; point 0 is the center.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if aperture <= 0:
        raise ValueError("aperture must be > 0")
    n = np.arange(count, dtype=float)
    if count == 1:
        radius = np.zeros(1)
    else:
        radius = (aperture / 2.0) * np.sqrt(n / (count - 1))
    angle = n * GOLDEN_ANGLE
    return np.stack(
        [center[0] + radius * np.cos(angle), center[1] + radius * np.sin(angle)], axis=1
    )


def _lift_targets(geometry: ArrayGeometry, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 2 or targets.shape[1] not in (2, 3):
        raise ValueError("targets must be (N, 2) in-plane or (N, 3) points")
    if targets.shape[1] == 2:
        y = float(geometry.plane.origin[1])
        lifted = np.empty((len(targets), 3))
        lifted[:, 0] = targets[:, 0]
        lifted[:, 1] = y
        lifted[:, 2] = targets[:, 1]
        return lifted
    return targets


def sample_subarray(
    geometry: ArrayGeometry,
    targets: np.ndarray,
    epsilon: float,
    nominal_center=None,
) -> SubArray:
    """Greedily match targets to the nearest unused sensors.

    Targets are visited in order; a target is discarded when no unused sensor
    lies within `epsilon` (ties broken by lowest sensor index). 2D targets are
    interpreted as (x, z) in the array plane.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    lifted = _lift_targets(geometry, targets)
    pos = geometry.positions
    available = np.ones(len(pos), dtype=bool)
    indices: list[int] = []
    dists: list[float] = []
    for t in lifted:
        d = np.linalg.norm(pos - t[None, :], axis=1)
        d[~available] = np.inf
        j = int(np.argmin(d))
        if d[j] <= epsilon:
            indices.append(j)
            dists.append(float(d[j]))
            available[j] = False
    if nominal_center is None:
        nominal_center = lifted.mean(axis=0) if len(lifted) else np.zeros(3)
    return SubArray(
        parent=geometry,
        indices=np.array(indices, dtype=int),
        target_positions=lifted,
        match_distances=np.array(dists),
        nominal_center=np.asarray(nominal_center, dtype=float),
        epsilon=float(epsilon),
        discarded=len(lifted) - len(indices),
    )


def subarray_stats(sub: SubArray):
    """Geometric mean (average sensor location) and per-axis population std."""
    if sub.size < 1:
        raise ValueError("sub-array is empty")
    p = sub.positions
    return p.mean(axis=0), p.std(axis=0)


def observation_angles(observer, reference, spread=None) -> ObservationAngles:
    """Pitch/roll angles of an observer relative to a reference point.

    theta = 90 deg + atan(dx / d_perp) (90 deg is broadside, x downstream),
    phi = atan(dz / d_perp), with d_perp the distance along y. An optional
    positional spread (3-vector of stds) is mapped through the same relation.
    """
    observer = np.asarray(observer, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if np.allclose(observer, reference):
        raise ValueError("observer coincides with reference")
    d_perp = abs(observer[1] - reference[1])
    if d_perp <= 0:
        raise ValueError("zero perpendicular distance between observer and reference")
    dx = observer[0] - reference[0]
    dz = observer[2] - reference[2]
    theta = 90.0 + math.degrees(math.atan(dx / d_perp))
    phi = math.degrees(math.atan(dz / d_perp))
    theta_std = 0.0
    phi_std = 0.0
    if spread is not None:
        spread = np.asarray(spread, dtype=float)
        if (spread < 0).any():
            raise ValueError("spread components must be >= 0")
        th_hi = math.degrees(math.atan((dx + spread[0]) / d_perp))
        th_lo = math.degrees(math.atan((dx - spread[0]) / d_perp))
        theta_std = (th_hi - th_lo) / 2.0
        ph_hi = math.degrees(math.atan((dz + spread[2]) / d_perp))
        ph_lo = math.degrees(math.atan((dz - spread[2]) / d_perp))
        phi_std = (ph_hi - ph_lo) / 2.0
    return ObservationAngles(theta=theta, phi=phi, theta_std=theta_std, phi_std=phi_std)


def subarray_observation(sub: SubArray, reference) -> ObservationAngles:
    """Observation angles of a sub-array's geometric mean, with spreads."""
    mean, std = subarray_stats(sub)
    return observation_angles(mean, reference, spread=std)


def pitch_subarray_series(
    geometry: ArrayGeometry,
    count: int,
    aperture: float,
    mics: int,
    epsilon: float,
) -> list[SubArray]:
    """Sub-arrays at spiral centers equally spaced along the array's long axis.

    Edge sub-arrays lose the targets that fall outside the sensor pool, so
    they contain fewer sensors than `mics`.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = geometry.bounding_box()
    z_center = geometry.plane.origin[2]
    if count == 1:
        centers = np.array([geometry.plane.origin[0]])
    else:
        centers = np.linspace(lo[0], hi[0], count)
    subs = []
    for cx in centers:
        targets = fermat_spiral(mics, aperture, center=(cx, z_center))
        center3 = np.array([cx, geometry.plane.origin[1], z_center])
        subs.append(sample_subarray(geometry, targets, epsilon, nominal_center=center3))
    return subs


def frequency_dependent_aperture(frequency: float, d_ref: float, f_ref: float, f_max: float = 16_000.0) -> float:
    """Aperture scaled as d_ref * f_ref / f, clamped below f_ref and above f_max."""
    f = min(max(float(frequency), f_ref), f_max)
    return d_ref * f_ref / f


def freq_dependent_subarrays(
    geometry: ArrayGeometry,
    center,
    d_ref: float,
    f_ref: float,
    mics: int,
    bands,
    epsilon: float,
    f_max: float = 16_000.0,
) -> dict[float, SubArray]:
    """One sampled sub-array per frequency band, aperture shrinking with f."""
    if d_ref <= 0 or f_ref <= 0:
        raise ValueError("d_ref and f_ref must be > 0")
    center = np.asarray(center, dtype=float)
    out: dict[float, SubArray] = {}
    for f in bands:
        aperture = frequency_dependent_aperture(f, d_ref, f_ref, f_max)
        targets = fermat_spiral(mics, aperture, center=(center[0], center[1]))
        center3 = np.array([center[0], geometry.plane.origin[1], center[1]])
        out[float(f)] = sample_subarray(geometry, targets, epsilon, nominal_center=center3)
    return out


def dnw_like_subarray(
    geometry: ArrayGeometry,
    mics: int = 140,
    aperture: float = 1.5,
    epsilon: float = 0.1,
    center=None,
) -> SubArray:
    """Stand-in for a conventional mid-size spiral array sampled from the panel."""
    if center is None:
        center = (geometry.plane.origin[0], geometry.plane.origin[2])
    targets = fermat_spiral(mics, aperture, center=center)
    center3 = np.array([center[0], geometry.plane.origin[1], center[1]])
    return sample_subarray(geometry, targets, epsilon, nominal_center=center3)

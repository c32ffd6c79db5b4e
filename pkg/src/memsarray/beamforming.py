"""Frequency-domain beamforming on planar focus grids.

Steering vectors follow the level-true normalization of Sarradj's
formulation III,

    h_m = exp(-j 2 pi f (tau_m - tau_0)) / (r_m * r_0 * sum_l r_l^-2),

with travel times from the propagation module (convected Green's function,
optionally the Amiet shear-layer path) and r = c0 * tau the effective
distances. Map values are re-referenced to the source power a monopole would
show at 1 m, so a matched rank-1 CSM reproduces its injected power exactly.

CLEAN-SC deconvolution follows Sijtsma's formulation: per iteration the CSM
component spatially coherent with the dirty-map peak is estimated (with a
fixed-point inner iteration when the diagonal is removed) and subtracted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .geometry import SubArray, subarray_stats
from .propagation import REFERENCE_DISTANCE, MediumModel, atmospheric_absorption, path_delays


@dataclass(frozen=True)
class FocusGrid:
    """Planar focus grid, optionally rotated in space.

    `local` holds the in-plane (x, z) coordinates the grid was built from;
    ROIs are defined in these coordinates so rotations do not affect them.
    """

    points: np.ndarray  # (N, 3) world coordinates
    local: np.ndarray  # (N, 2) in-plane coordinates before rotation
    shape: tuple[int, int]  # (nx, nz)
    spacing: float

    @property
    def size(self) -> int:
        return len(self.points)

    def index_of(self, point) -> int:
        """Grid index nearest to a world point."""
        d = np.linalg.norm(self.points - np.asarray(point, dtype=float)[None, :], axis=1)
        return int(np.argmin(d))


@dataclass(frozen=True)
class SteeringSet:
    """Formulation III steering vectors for one frequency over a grid."""

    frequency: float
    matrix: np.ndarray  # (M, N) complex, columns are grid points
    reference_distance: np.ndarray  # (N,) r_0 per grid point (to the array reference)
    reference_point: np.ndarray  # (3,) the sub-array geometric mean
    grid: FocusGrid
    corrections: dict

    @property
    def n_channels(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_points(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class BeamformingMap:
    """Source auto-powers over a grid, referenced to 1 m from the source."""

    frequency: float
    values: np.ndarray  # (N,) clamped at 0 for display/integration
    grid: FocusGrid
    kind: str = "conventional"  # conventional | clean_sc
    raw_values: np.ndarray | None = None  # signed values before clamping
    components: tuple[tuple[int, float], ...] = ()  # CLEAN-SC (grid index, power)
    diagonal_removed: bool = False
    n_negative: int = 0
    iterations: int = 0
    n_channels: int = 0  # sub-array size the map was formed with

    def peak(self) -> tuple[int, float]:
        i = int(np.argmax(self.values))
        return i, float(self.values[i])

    def component_power(self) -> float:
        return float(sum(p for _, p in self.components))


def _rotation_y(angle_deg: float) -> np.ndarray:
    a = np.radians(angle_deg)
    return np.array([[np.cos(a), 0.0, np.sin(a)], [0.0, 1.0, 0.0], [-np.sin(a), 0.0, np.cos(a)]])


def _rotation_x(angle_deg: float) -> np.ndarray:
    a = np.radians(angle_deg)
    return np.array([[1.0, 0.0, 0.0], [0.0, np.cos(a), -np.sin(a)], [0.0, np.sin(a), np.cos(a)]])


def make_focus_grid(
    x_range: tuple[float, float],
    z_range: tuple[float, float],
    spacing: float,
    y_plane: float = 0.0,
    delta_angle: float = 0.0,
    aoa: float = 0.0,
    pivot=None,
) -> FocusGrid:
    """Regular planar grid in y = y_plane, rotated about y (wing delta angle)
    then x (angle of attack) around `pivot` (defaults to the grid center).

    Endpoints are inclusive: n = round(span / spacing) + 1 per axis.
    """
    if spacing <= 0:
        raise ValueError("spacing must be > 0")
    if x_range[1] < x_range[0] or z_range[1] < z_range[0]:
        raise ValueError("ranges must be increasing")
    nx = int(round((x_range[1] - x_range[0]) / spacing)) + 1
    nz = int(round((z_range[1] - z_range[0]) / spacing)) + 1
    xs = x_range[0] + spacing * np.arange(nx)
    zs = z_range[0] + spacing * np.arange(nz)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    local = np.stack([gx.ravel(), gz.ravel()], axis=1)
    pts = np.stack([gx.ravel(), np.full(gx.size, float(y_plane)), gz.ravel()], axis=1)
    if delta_angle != 0.0 or aoa != 0.0:
        if pivot is None:
            pivot = np.array(
                [(x_range[0] + x_range[1]) / 2.0, y_plane, (z_range[0] + z_range[1]) / 2.0]
            )
        pivot = np.asarray(pivot, dtype=float)
        rot = _rotation_x(aoa) @ _rotation_y(delta_angle)
        pts = (pts - pivot) @ rot.T + pivot
    return FocusGrid(points=pts, local=local, shape=(nx, nz), spacing=float(spacing))


def steering_formulation_iii(
    grid: FocusGrid,
    subarray: SubArray | np.ndarray,
    frequency: float,
    medium: MediumModel | None = None,
    reference_point=None,
    use_shear: bool | None = None,
    include_absorption: bool = False,
) -> SteeringSet:
    """Level-true steering vectors for every grid point.

    The amplitude reference r_0 is taken to the sub-array geometric mean.
    With `include_absorption` the per-channel effective distances are inflated
    by the atmospheric damping, which keeps the level-true property when the
    synthesized field carries absorption too.
    """
    if frequency <= 0:
        raise ValueError("frequency must be > 0")
    medium = medium or MediumModel()
    if isinstance(subarray, SubArray):
        mics = subarray.positions
        ref = subarray_stats(subarray)[0] if reference_point is None else np.asarray(reference_point, dtype=float)
    else:
        mics = np.asarray(subarray, dtype=float)
        ref = mics.mean(axis=0) if reference_point is None else np.asarray(reference_point, dtype=float)

    c0 = medium.speed_of_sound
    # (N, M) travel times focus -> sensor, and focus -> reference
    tau = path_delays(grid.points[:, None, :], mics[None, :, :], medium, use_shear=use_shear)
    tau0 = path_delays(grid.points, ref[None, :], medium, use_shear=use_shear)
    r = c0 * tau
    r0 = c0 * tau0
    if (r < 1e-9).any() or (r0 < 1e-9).any():
        raise ValueError("focus point coincides with a sensor or the array reference")
    if include_absorption:
        alpha = atmospheric_absorption(frequency, medium)
        r = r * 10.0 ** (alpha * r / 20.0)
        r0 = r0 * 10.0 ** (alpha * r0 / 20.0)
    inv_sq_sum = np.sum(r**-2.0, axis=1)  # (N,)
    amp = 1.0 / (r * r0[:, None] * inv_sq_sum[:, None])
    h = amp * np.exp(-2j * np.pi * frequency * (tau - tau0[:, None]))
    return SteeringSet(
        frequency=float(frequency),
        matrix=np.ascontiguousarray(h.T),
        reference_distance=r0,
        reference_point=np.asarray(ref, dtype=float),
        grid=grid,
        corrections={
            "convection": bool(medium.mach > 0),
            "absorption": bool(include_absorption),
            "amiet": bool(use_shear if use_shear is not None else medium.shear_layer is not None),
        },
    )


def _raw_map(csm_values: np.ndarray, h: np.ndarray) -> np.ndarray:
    """b_t = h_t^H C h_t for all columns at once."""
    return np.einsum("mn,mk,kn->n", h.conj(), csm_values, h, optimize=True).real


def conventional_beamform(csm, steering: SteeringSet, diagonal_removal: bool = False) -> BeamformingMap:
    """Delay-and-sum map; values referenced to the source power at 1 m.

    With diagonal removal the CSM diagonal is zeroed first, which makes the
    output exactly invariant to any per-channel (incoherent) auto-power.
    Negative values are clamped for display but kept in `raw_values`.
    """
    values = np.asarray(csm.values) if hasattr(csm, "values") else np.asarray(csm)
    if values.shape[0] != steering.n_channels:
        raise ValueError(
            f"CSM has {values.shape[0]} channels but steering expects {steering.n_channels}"
        )
    if diagonal_removal:
        values = values.copy()
        np.fill_diagonal(values, 0.0)
    raw = _raw_map(values, steering.matrix)
    ref_scale = (steering.reference_distance / REFERENCE_DISTANCE) ** 2
    raw = raw * ref_scale
    clamped = np.maximum(raw, 0.0)
    freq = getattr(csm, "frequency", steering.frequency)
    return BeamformingMap(
        frequency=float(freq),
        values=clamped,
        grid=steering.grid,
        kind="conventional",
        raw_values=raw,
        diagonal_removed=diagonal_removal,
        n_negative=int((raw < 0).sum()),
        n_channels=steering.n_channels,
    )


def clean_sc(
    csm,
    steering: SteeringSet,
    grid: FocusGrid | None = None,
    loop_gain: float = 1.0,
    max_iterations: int = 100,
    stop_threshold: float = 1e-3,
    diagonal_removal: bool = True,
    inner_iterations: int = 20,
) -> BeamformingMap:
    """CLEAN-SC deconvolution.

    Per iteration: find the dirty-map peak, estimate the source component
    vector from the degraded CSM column space at the peak (fixed-point inner
    iterations when the diagonal is removed), subtract loop_gain times the
    induced CSM, and accumulate the clean component. Stops at max_iterations,
    when the peak drops below stop_threshold times the initial peak, or when
    the degraded CSM 1-norm would increase.
    """
    if not 0.0 < loop_gain <= 1.0:
        raise ValueError("loop gain must be in (0, 1]")
    if grid is None:
        grid = steering.grid
    values = np.asarray(csm.values) if hasattr(csm, "values") else np.asarray(csm)
    if not np.isfinite(values).all():
        raise ValueError("CSM contains non-finite entries")
    if values.shape[0] != steering.n_channels:
        raise ValueError("CSM/steering dimension mismatch")
    h = steering.matrix
    ref_scale = (steering.reference_distance / REFERENCE_DISTANCE) ** 2

    degraded = values.copy()
    if diagonal_removal:
        np.fill_diagonal(degraded, 0.0)
    dirty = _raw_map(degraded, h)
    initial_peak = dirty.max() if dirty.size else 0.0
    prev_norm = np.linalg.norm(degraded, 1)
    components: dict[int, float] = {}
    iterations = 0

    if initial_peak > 0.0:
        for _ in range(max_iterations):
            t = int(np.argmax(dirty))
            peak = dirty[t]
            if peak <= 0.0 or peak <= stop_threshold * initial_peak:
                break
            w = h[:, t]
            comp = degraded @ w / peak
            if diagonal_removal:
                base = degraded @ w / peak
                for _ in range(inner_iterations):
                    diag = np.abs(comp) ** 2
                    comp = (base + diag * w) / np.sqrt(1.0 + np.real(np.vdot(w, diag * w)))
            induced = peak * np.outer(comp, comp.conj())
            if diagonal_removal:
                np.fill_diagonal(induced, 0.0)
            trial = degraded - loop_gain * induced
            norm = np.linalg.norm(trial, 1)
            if norm > prev_norm:
                break
            degraded = trial
            prev_norm = norm
            components[t] = components.get(t, 0.0) + loop_gain * peak
            dirty = _raw_map(degraded, h)
            iterations += 1

    comp_list = tuple((t, p * float(ref_scale[t])) for t, p in sorted(components.items()))
    clean_map = np.zeros(steering.n_points)
    for t, p in comp_list:
        clean_map[t] += p
    residual = _raw_map(degraded, h) * ref_scale
    freq = getattr(csm, "frequency", steering.frequency)
    return BeamformingMap(
        frequency=float(freq),
        values=clean_map,
        grid=grid,
        kind="clean_sc",
        raw_values=residual,
        components=comp_list,
        diagonal_removed=diagonal_removal,
        iterations=iterations,
        n_channels=steering.n_channels,
    )


def gaussian_render(map_: BeamformingMap, sigma_cells: float = 1.0) -> np.ndarray:
    """Clean components convolved with a Gaussian kernel, for map export only."""
    nx, nz = map_.grid.shape
    img = map_.values.reshape(nx, nz).copy()
    if not map_.components:
        return img
    half = max(int(np.ceil(3 * sigma_cells)), 1)
    ax = np.arange(-half, half + 1)
    kern = np.exp(-0.5 * (ax / sigma_cells) ** 2)
    kern2 = np.outer(kern, kern)
    kern2 /= kern2.sum()
    comp = np.zeros_like(img)
    for t, p in map_.components:
        comp[np.unravel_index(t, (nx, nz))] += p
    return convolve2d(comp, kern2, mode="same")


def lobe_width_db(map_values: np.ndarray, coords: np.ndarray, drop_db: float = 3.0) -> float:
    """Width of the main lobe `drop_db` below the peak along a 1D cut."""
    v = np.asarray(map_values, dtype=float)
    peak = int(np.argmax(v))
    level = 10.0 * np.log10(np.maximum(v / v[peak], 1e-300))
    target = -abs(drop_db)

    def crossing(direction: int) -> float:
        i = peak
        while 0 <= i + direction < len(v):
            j = i + direction
            if level[j] < target:
                # linear interpolation in dB
                frac = (target - level[i]) / (level[j] - level[i])
                return coords[i] + frac * (coords[j] - coords[i])
            i = j
        return coords[i]

    return crossing(+1) - crossing(-1)

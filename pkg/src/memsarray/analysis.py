"""Map integration, directivity surfaces, and far-field projection.

Directivity follows the subtract-the-angle-average convention: for each
frequency, Gamma(theta, f) = PSD(theta, f) - <PSD(theta, f)>_theta in dB, so
Gamma = 0 means the source radiates its angle-average power toward that
angle. Because beamforming maps are referenced to the 1 m source power, the
spherical-spreading difference between sub-array positions is already
removed before Gamma is formed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .beamforming import (
    BeamformingMap,
    clean_sc,
    make_focus_grid,
    steering_formulation_iii,
)
from .geometry import ArrayGeometry, SubArray, pitch_subarray_series, subarray_observation
from .spectral import Spectrum, band_centers, band_edges, to_db
from .synthesis import Scene, synthesize_csm


@dataclass(frozen=True)
class RegionOfInterest:
    """Box or polygon in the focus grid's in-plane coordinates."""

    x_range: tuple[float, float] | None = None
    z_range: tuple[float, float] | None = None
    polygon: np.ndarray | None = None  # (K, 2) vertices
    label: str = "roi"

    def __post_init__(self):
        if self.polygon is None:
            if self.x_range is None or self.z_range is None:
                raise ValueError("ROI needs either a box or a polygon")
            if self.x_range[1] <= self.x_range[0] or self.z_range[1] <= self.z_range[0]:
                raise ValueError("ROI box is degenerate")
        else:
            poly = np.asarray(self.polygon, dtype=float)
            if poly.ndim != 2 or len(poly) < 3:
                raise ValueError("ROI polygon needs at least 3 vertices")
            object.__setattr__(self, "polygon", poly)

    def contains(self, local_points: np.ndarray) -> np.ndarray:
        pts = np.asarray(local_points, dtype=float)
        if self.polygon is None:
            return (
                (pts[:, 0] >= self.x_range[0])
                & (pts[:, 0] <= self.x_range[1])
                & (pts[:, 1] >= self.z_range[0])
                & (pts[:, 1] <= self.z_range[1])
            )
        # even-odd rule
        poly = self.polygon
        inside = np.zeros(len(pts), dtype=bool)
        j = len(poly) - 1
        for i in range(len(poly)):
            xi, zi = poly[i]
            xj, zj = poly[j]
            crosses = (zi > pts[:, 1]) != (zj > pts[:, 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                x_at = (xj - xi) * (pts[:, 1] - zi) / (zj - zi) + xi
            inside ^= crosses & (pts[:, 0] < x_at)
            j = i
        return inside


@dataclass(frozen=True)
class DirectivitySurface:
    """PSD(theta, f) and Gamma(theta, f) over observation angles."""

    angles: np.ndarray  # (A,) degrees, geometric-mean based
    angle_spreads: np.ndarray  # (A,)
    nominal_angles: np.ndarray  # (A,)
    frequencies: np.ndarray  # (F,)
    psd_db: np.ndarray  # (A, F), NaN where masked
    gamma_db: np.ndarray  # (A, F)

    def save_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["theta_deg"] + [repr(float(f)) for f in self.frequencies])
            for a, row in zip(self.angles, self.gamma_db):
                w.writerow([repr(float(a))] + [repr(float(v)) for v in row])

    def save_meta(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "angles_deg": [float(a) for a in self.angles],
                    "angle_spreads_deg": [float(a) for a in self.angle_spreads],
                    "nominal_angles_deg": [float(a) for a in self.nominal_angles],
                    "frequencies_hz": [float(f) for f in self.frequencies],
                },
                fh,
                sort_keys=True,
            )


@dataclass(frozen=True)
class FarFieldComparison:
    """Distance-normalized mic average against ROI-integrated beamforming."""

    frequencies: np.ndarray
    integrated_db: np.ndarray
    mic_average_db: np.ndarray
    delta_psd_db: np.ndarray  # integrated - mic average
    resampled: bool = False


def integrate_map(map_: BeamformingMap, roi: RegionOfInterest) -> float:
    """ROI power: CLEAN-SC sums component powers, conventional sums map cells.

    Conventional integration carries the point-spread-function bias and is
    reported as-is.
    """
    mask = roi.contains(map_.grid.local)
    if not mask.any():
        raise ValueError("ROI does not overlap the focus grid")
    if map_.kind == "clean_sc":
        return float(sum(p for t, p in map_.components if mask[t]))
    return float(map_.values[mask].sum())


def maps_to_spectrum(maps: list[BeamformingMap], roi: RegionOfInterest, units: str = "Pa^2") -> Spectrum:
    """ROI-integrated power per map frequency."""
    maps = sorted(maps, key=lambda m: m.frequency)
    f = np.array([m.frequency for m in maps])
    p = np.array([integrate_map(m, roi) for m in maps])
    return Spectrum(frequencies=f, psd=p, units=units)


def directivity(spectra: list[tuple], db_domain: bool = True) -> DirectivitySurface:
    """Build a directivity surface from per-angle spectra.

    `spectra` is a list of (angles, spectrum) where `angles` is an
    ObservationAngles (or a bare theta in degrees). All spectra must share one
    frequency axis; missing bins (NaN or non-positive power) stay masked.
    The angle average is taken over dB values by default.
    """
    if len(spectra) < 2:
        raise ValueError("directivity needs spectra from at least 2 angles")
    thetas = []
    spreads = []
    nominals = []
    rows = []
    freqs = None
    for ang, spec in spectra:
        if hasattr(ang, "theta"):
            thetas.append(ang.theta)
            spreads.append(ang.theta_std)
        else:
            thetas.append(float(ang))
            spreads.append(0.0)
        nominals.append(thetas[-1])
        if freqs is None:
            freqs = np.asarray(spec.frequencies, dtype=float)
        elif len(spec.frequencies) != len(freqs) or not np.allclose(spec.frequencies, freqs):
            raise ValueError("all spectra must share one frequency axis")
        p = np.asarray(spec.psd, dtype=float)
        row = np.where(p > 0, p, np.nan)
        rows.append(row)
    order = np.argsort(thetas)
    power = np.array(rows)[order]
    psd_db = np.full(power.shape, np.nan)
    ok = np.isfinite(power)
    psd_db[ok] = to_db(power[ok])
    if db_domain:
        mean = np.nanmean(psd_db, axis=0, keepdims=True)
    else:
        mean = to_db(np.nanmean(np.where(ok, power, np.nan), axis=0, keepdims=True))
    gamma = psd_db - mean
    return DirectivitySurface(
        angles=np.array(thetas)[order],
        angle_spreads=np.array(spreads)[order],
        nominal_angles=np.array(nominals)[order],
        frequencies=freqs,
        psd_db=psd_db,
        gamma_db=gamma,
    )


def octave_polar(surface: DirectivitySurface, band_type: str = "octave") -> dict:
    """Band-integrate the surface per angle, then re-center Gamma per band.

    Returns {"centers": [...], "angles": [...], "gamma_db": (A, B) array}.
    """
    f = surface.frequencies
    if len(f) < 2:
        raise ValueError("octave integration needs a narrowband surface")
    df = np.median(np.diff(f))
    centers = band_centers(band_type, max(f[0], df), f[-1])
    power = np.where(np.isfinite(surface.psd_db), 10.0 ** (surface.psd_db / 10.0), 0.0)
    bands = []
    kept = []
    for c in centers:
        lo, hi = band_edges(c, band_type)
        mask = (f >= lo) & (f < hi)
        if not mask.any():
            continue
        kept.append(c)
        bands.append(power[:, mask].sum(axis=1))
    if not kept:
        raise ValueError("no band overlaps the surface's frequency axis")
    band_db = to_db(np.array(bands).T, reference=1.0)  # (A, B), relative units
    gamma = band_db - band_db.mean(axis=0, keepdims=True)
    return {"centers": np.array(kept), "angles": surface.angles, "gamma_db": gamma}


def distance_normalize(spectrum: Spectrum, distance: float, reference: float = 1.0) -> Spectrum:
    """Project a spectrum measured at `distance` to the reference distance.

    Monopole spreading: +20 log10(d / d0) in dB, i.e. (d / d0)^2 in power.
    """
    if distance <= 0 or reference <= 0:
        raise ValueError("distances must be > 0")
    return Spectrum(
        frequencies=spectrum.frequencies,
        psd=spectrum.psd * (distance / reference) ** 2,
        units=spectrum.units,
        band_type=spectrum.band_type,
    )


def farfield_compare(integrated: Spectrum, mics: list[tuple[Spectrum, float]]) -> FarFieldComparison:
    """Compare ROI-integrated beamforming against far-field microphones.

    Every mic spectrum is normalized to 1 m, averaged in linear power, and
    subtracted from the integrated spectrum in dB. Disjoint frequency axes
    are resampled onto the coarser axis.
    """
    if not mics:
        raise ValueError("need at least one far-field microphone")
    normalized = [distance_normalize(s, d, 1.0) for s, d in mics]
    axes = [integrated.frequencies] + [s.frequencies for s in normalized]
    same = all(len(a) == len(axes[0]) and np.allclose(a, axes[0]) for a in axes[1:])
    if same:
        f = np.asarray(integrated.frequencies, dtype=float)
        resampled = False
        integ_p = integrated.psd
        mic_p = np.mean([s.psd for s in normalized], axis=0)
    else:
        f = min(axes, key=len)
        lo = max(a[0] for a in axes)
        hi = min(a[-1] for a in axes)
        f = f[(f >= lo) & (f <= hi)]
        if len(f) == 0:
            raise ValueError("spectra share no frequency overlap")
        resampled = True
        integ_p = np.interp(f, integrated.frequencies, integrated.psd)
        mic_p = np.mean([np.interp(f, s.frequencies, s.psd) for s in normalized], axis=0)
    integ_db = to_db(integ_p)
    mic_db = to_db(mic_p)
    return FarFieldComparison(
        frequencies=f,
        integrated_db=integ_db,
        mic_average_db=mic_db,
        delta_psd_db=integ_db - mic_db,
        resampled=resampled,
    )


def directivity_pipeline(
    scene: Scene,
    geometry: ArrayGeometry,
    reference_point,
    roi: RegionOfInterest,
    frequencies,
    count: int = 13,
    aperture: float = 2.0,
    mics: int = 150,
    epsilon: float = 0.1,
    grid_spec: dict | None = None,
    diagonal_removal: bool = True,
    subarrays: list[SubArray] | None = None,
    csms_by_subarray: list[list] | None = None,
) -> DirectivitySurface:
    """End-to-end directivity: pitch sub-array series, CLEAN-SC per band,
    ROI integration, then the angle-average subtraction.

    Pre-sampled sub-arrays and/or per-sub-array CSM lists can be injected;
    by default both come from the scene.
    """
    reference_point = np.asarray(reference_point, dtype=float)
    freqs = np.atleast_1d(np.asarray(frequencies, dtype=float))
    if subarrays is None:
        subarrays = pitch_subarray_series(geometry, count, aperture, mics, epsilon)
    if len(subarrays) < 2:
        raise ValueError("directivity needs at least 2 sub-arrays")
    if grid_spec is None:
        grid_spec = {}
    if roi.polygon is not None:
        (x_lo, z_lo), (x_hi, z_hi) = roi.polygon.min(axis=0), roi.polygon.max(axis=0)
    else:
        (x_lo, x_hi), (z_lo, z_hi) = roi.x_range, roi.z_range
    x_rng = grid_spec.get("x_range", (x_lo - 0.1, x_hi + 0.1))
    z_rng = grid_spec.get("z_range", (z_lo - 0.1, z_hi + 0.1))
    spacing = grid_spec.get("spacing", 0.02)
    grid = make_focus_grid(x_rng, z_rng, spacing, y_plane=grid_spec.get("y_plane", 0.0))

    per_angle = []
    for si, sub in enumerate(subarrays):
        if sub.size < 2:
            continue
        angles = subarray_observation(sub, reference_point)
        if csms_by_subarray is not None:
            csms = csms_by_subarray[si]
        else:
            csms = synthesize_csm(scene, sub.positions, freqs)
        maps = []
        for c in csms:
            steer = steering_formulation_iii(grid, sub, c.frequency, scene.medium)
            maps.append(clean_sc(c, steer, grid, diagonal_removal=diagonal_removal))
        per_angle.append((angles, maps_to_spectrum(maps, roi)))
    return directivity(per_angle)

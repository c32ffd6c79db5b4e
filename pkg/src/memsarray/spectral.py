"""Cross-spectral estimation and spectrum bookkeeping.

Welch-averaged cross-spectral matrices (one-sided PSD scaling with window
power compensation), CSM population statistics, and third-octave/octave band
integration.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

P_REF = 20e-6  # Pa
P_REF_SQ = P_REF * P_REF
DB_FLOOR = -400.0

THIRD_OCTAVE_RATIO = 2.0 ** (1.0 / 6.0)
OCTAVE_RATIO = 2.0 ** 0.5


def to_db(values, reference: float = P_REF_SQ, floor_db: float = DB_FLOOR) -> np.ndarray:
    """Power quantity to dB re `reference`, with a finite floor for zeros."""
    v = np.asarray(values, dtype=float)
    out = np.full(v.shape, floor_db)
    pos = v > 0
    out[pos] = 10.0 * np.log10(v[pos] / reference)
    return np.maximum(out, floor_db)


@dataclass(frozen=True)
class CrossSpectralMatrix:
    """Hermitian cross-power matrix at one frequency."""

    frequency: float
    values: np.ndarray  # (M, M) complex
    n_averages: int = 1
    window: str = "exact"
    block_size: int = 0
    overlap: float = 0.0
    units: str = "Pa^2/Hz"

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("CSM must be square")
        herm_err = np.abs(v - v.conj().T).max()
        scale = max(np.abs(v).max(), 1.0e-300)
        if herm_err > 1e-9 * scale:
            raise ValueError(f"CSM is not Hermitian (max asymmetry {herm_err:.3e})")
        d = np.diag(v)
        if (d.real < -1e-12 * scale).any():
            raise ValueError("CSM diagonal must be non-negative")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    def diagonal_removed(self) -> np.ndarray:
        out = self.values.copy()
        np.fill_diagonal(out, 0.0)
        return out

    def min_eigenvalue_ratio(self) -> float:
        """Most negative eigenvalue relative to the trace (PSD check)."""
        w = np.linalg.eigvalsh(self.values)
        tr = float(np.trace(self.values).real)
        return float(w.min() / tr) if tr > 0 else float(w.min())


@dataclass(frozen=True)
class Spectrum:
    """Frequency series of a power quantity (narrowband PSD or band power)."""

    frequencies: np.ndarray
    psd: np.ndarray  # linear, units given below
    units: str = "Pa^2/Hz"
    band_type: str = "narrowband"  # narrowband | third_octave | octave

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        if len(f) > 1 and not (np.diff(f) > 0).all():
            raise ValueError("frequencies must be strictly increasing")

    def db(self, floor_db: float = DB_FLOOR) -> np.ndarray:
        return to_db(self.psd, floor_db=floor_db)

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("frequency,psd_db\n")
            for f, v in zip(self.frequencies, self.db()):
                fh.write(f"{f!r},{v!r}\n")


@dataclass(frozen=True)
class CsmStats:
    """Per-frequency statistics over CSM auto- and cross-powers."""

    frequency: float
    auto_mean: float
    auto_std: float
    auto_min: float
    auto_max: float
    cross_mean: float
    cross_std: float
    cross_min: float
    cross_max: float


def welch_csm(
    signals: np.ndarray,
    rate: float,
    block: int = 1024,
    overlap: float = 0.5,
    window: str = "hann",
    freq_range=None,
) -> list[CrossSpectralMatrix]:
    """Welch-averaged CSMs, one per FFT bin up to Nyquist.

    `signals` is (n_samples, n_channels). The per-channel mean is removed over
    the full record; blocks are not detrended individually. One-sided PSD
    normalization: 2 / (fs * sum(w**2)), halved at DC and Nyquist.
    `freq_range=(lo, hi)` restricts the output bins (memory relief for large
    channel counts).
    """
    x = np.asarray(signals, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, m = x.shape
    if n < block:
        raise ValueError(f"signal of {n} samples is shorter than one block ({block})")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    hop = int(round(block * (1.0 - overlap)))
    if hop < 1:
        raise ValueError("overlap leaves an empty hop")
    n_avg = (n - block) // hop + 1
    w = get_window(window, block, fftbins=True)
    x = x - x.mean(axis=0, keepdims=True)

    freqs = np.fft.rfftfreq(block, d=1.0 / rate)
    if freq_range is not None:
        sel = (freqs >= freq_range[0]) & (freqs <= freq_range[1])
    else:
        sel = np.ones(len(freqs), dtype=bool)
    fsel = freqs[sel]
    acc = np.zeros((len(fsel), m, m), dtype=complex)
    for b in range(n_avg):
        seg = x[b * hop : b * hop + block] * w[:, None]
        spec = np.fft.rfft(seg, axis=0)[sel]
        acc += spec[:, :, None] * spec.conj()[:, None, :]
    scale = 2.0 / (rate * np.sum(w * w) * n_avg)
    acc *= scale
    # DC and Nyquist carry no one-sided doubling
    edge = (fsel == 0.0) | np.isclose(fsel, rate / 2.0)
    acc[edge] *= 0.5

    out = []
    for i, f in enumerate(fsel):
        v = acc[i]
        v = 0.5 * (v + v.conj().T)  # enforce Hermitian symmetry exactly
        out.append(
            CrossSpectralMatrix(
                frequency=float(f),
                values=v,
                n_averages=n_avg,
                window=window,
                block_size=block,
                overlap=overlap,
            )
        )
    return out


def csm_stats(csm: CrossSpectralMatrix) -> CsmStats:
    """Mean/std/min/max of auto-spectra and cross-spectrum magnitudes."""
    if csm.n_channels < 2:
        raise ValueError("CSM statistics need at least 2 channels")
    auto = np.diag(csm.values).real
    iu = np.triu_indices(csm.n_channels, k=1)
    cross = np.abs(csm.values[iu])
    return CsmStats(
        frequency=csm.frequency,
        auto_mean=float(auto.mean()),
        auto_std=float(auto.std()),
        auto_min=float(auto.min()),
        auto_max=float(auto.max()),
        cross_mean=float(cross.mean()),
        cross_std=float(cross.std()),
        cross_min=float(cross.min()),
        cross_max=float(cross.max()),
    )


def auto_spectrum(csms: list[CrossSpectralMatrix], channel: int = 0) -> Spectrum:
    """One channel's PSD across a CSM list."""
    f = np.array([c.frequency for c in csms])
    p = np.array([c.values[channel, channel].real for c in csms])
    return Spectrum(frequencies=f, psd=p, units=csms[0].units)


def band_centers(band_type: str, f_min: float, f_max: float) -> np.ndarray:
    """Base-2 standard band centers covering [f_min, f_max]."""
    if band_type == "third_octave":
        step = 1.0 / 3.0
    elif band_type == "octave":
        step = 1.0
    else:
        raise ValueError(f"unknown band type {band_type!r}")
    n_lo = int(np.floor(np.log2(f_min / 1000.0) / step))
    n_hi = int(np.ceil(np.log2(f_max / 1000.0) / step))
    centers = 1000.0 * 2.0 ** (step * np.arange(n_lo, n_hi + 1))
    return centers[(centers >= f_min) & (centers <= f_max)]


def band_edges(center: float, band_type: str) -> tuple[float, float]:
    ratio = THIRD_OCTAVE_RATIO if band_type == "third_octave" else OCTAVE_RATIO
    return center / ratio, center * ratio


def band_integrate(spectrum: Spectrum, band_type: str = "third_octave", centers=None) -> Spectrum:
    """Integrate a narrowband PSD into band powers (sum of PSD * df).

    Bands that contain no narrowband bins are dropped from the output rather
    than reported as zero.
    """
    if spectrum.band_type != "narrowband":
        raise ValueError("band integration needs a narrowband input")
    f = np.asarray(spectrum.frequencies, dtype=float)
    if len(f) < 2:
        raise ValueError("narrowband spectrum must have at least 2 bins")
    df = float(np.median(np.diff(f)))
    if centers is None:
        centers = band_centers(band_type, max(f[0], df), f[-1])
    out_c = []
    out_p = []
    for c in centers:
        lo, hi = band_edges(c, band_type)
        mask = (f >= lo) & (f < hi)
        if not mask.any():
            continue
        out_c.append(c)
        out_p.append(float(np.sum(spectrum.psd[mask]) * df))
    return Spectrum(
        frequencies=np.array(out_c),
        psd=np.array(out_p),
        units="Pa^2" if spectrum.units == "Pa^2/Hz" else spectrum.units,
        band_type=band_type,
    )


def save_csm_set(path, csms: list[CrossSpectralMatrix], geometry_hash: str = ""):
    """Binary CSM container: JSON header + upper-triangle-packed complex values."""
    m = csms[0].n_channels
    header = {
        "frequencies": [c.frequency for c in csms],
        "n_channels": m,
        "n_averages": csms[0].n_averages,
        "window": csms[0].window,
        "block_size": csms[0].block_size,
        "overlap": csms[0].overlap,
        "units": csms[0].units,
        "geometry_hash": geometry_hash,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    iu = np.triu_indices(m)
    with open(path, "wb") as fh:
        fh.write(b"CSMF")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for c in csms:
            packed = np.ascontiguousarray(c.values[iu], dtype="<c16")
            fh.write(packed.tobytes())


def load_csm_set(path) -> list[CrossSpectralMatrix]:
    with open(path, "rb") as fh:
        if fh.read(4) != b"CSMF":
            raise ValueError("not a CSM container")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        m = header["n_channels"]
        iu = np.triu_indices(m)
        n_vals = len(iu[0])
        out = []
        for f in header["frequencies"]:
            flat = np.frombuffer(fh.read(16 * n_vals), dtype="<c16")
            v = np.zeros((m, m), dtype=complex)
            v[iu] = flat
            v = v + np.triu(v, k=1).conj().T
            out.append(
                CrossSpectralMatrix(
                    frequency=float(f),
                    values=v,
                    n_averages=header["n_averages"],
                    window=header["window"],
                    block_size=header["block_size"],
                    overlap=header["overlap"],
                    units=header["units"],
                )
            )
    return out

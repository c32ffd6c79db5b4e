"""Ground-truth scene synthesis.

Generates multichannel time series (fractional-delay sum of sources plus
seeded incoherent noise) and exact rank-per-source cross-spectral matrices
for a configured scene, so every downstream estimator can be validated
against a closed-form reference.

Source strengths are referenced to the pressure a monopole would produce at
1 m; a channel at effective distance r receives amplitude * (1 m / r) with
optional atmospheric damping and dipole directivity weighting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .propagation import (
    REFERENCE_DISTANCE,
    MediumModel,
    atmospheric_absorption,
    convected_delays,
    path_delays,
)
from .spectral import CrossSpectralMatrix

SINC_TAPS = 64
SINC_BETA = 8.0


@dataclass(frozen=True)
class Source:
    """Point source: position, monopole/dipole kind, and a spectrum spec.

    Spectrum spec forms:
      {"type": "tone", "frequency": f_hz, "power": q2}        q2 in Pa^2 at 1 m
      {"type": "broadband", "psd": s}                          flat Pa^2/Hz at 1 m
      {"type": "broadband", "frequencies": [...], "psd": [...]}  shaped
    """

    position: np.ndarray
    spectrum: dict
    kind: str = "monopole"  # monopole | dipole
    axis: np.ndarray | None = None  # dipole axis, unit length

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.kind not in ("monopole", "dipole"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "dipole":
            if self.axis is None:
                raise ValueError("dipole source needs an axis")
            a = np.asarray(self.axis, dtype=float)
            object.__setattr__(self, "axis", a / np.linalg.norm(a))

    def directivity_gain(self, receivers: np.ndarray) -> np.ndarray:
        """Power gain toward each receiver (cos^2 of the angle to the axis)."""
        if self.kind == "monopole":
            return np.ones(len(receivers))
        d = receivers - self.position[None, :]
        cosang = (d @ self.axis) / np.linalg.norm(d, axis=1)
        return cosang**2

    def power_at(self, frequency: float, bin_width: float | None = None) -> float:
        """Auto-power (Pa^2 at 1 m) seen in a narrowband bin at `frequency`.

        Tones contribute only inside the bin that contains them (or exactly at
        their frequency when no bin width is given); broadband sources return
        PSD (Pa^2/Hz).
        """
        spec = self.spectrum
        if spec["type"] == "tone":
            f0 = spec["frequency"]
            if bin_width is None:
                return float(spec["power"]) if np.isclose(frequency, f0) else 0.0
            return float(spec["power"]) if abs(frequency - f0) <= bin_width / 2 else 0.0
        if spec["type"] == "broadband":
            if "frequencies" in spec:
                return float(np.interp(frequency, spec["frequencies"], spec["psd"]))
            return float(spec["psd"])
        raise ValueError(f"unknown spectrum type {spec['type']!r}")

    def to_dict(self) -> dict:
        d = {"position": [float(v) for v in self.position], "kind": self.kind, "spectrum": self.spectrum}
        if self.axis is not None:
            d["axis"] = [float(v) for v in self.axis]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Source":
        return cls(
            position=np.array(d["position"], dtype=float),
            spectrum=d["spectrum"],
            kind=d.get("kind", "monopole"),
            axis=np.array(d["axis"], dtype=float) if d.get("axis") is not None else None,
        )


@dataclass(frozen=True)
class Scene:
    """Sources, medium, per-channel noise spec, and the master seed."""

    sources: tuple[Source, ...] = ()
    medium: MediumModel = field(default_factory=MediumModel)
    noise: dict | None = None  # {"psd": x} or {"frequencies": [...], "psd": [...]}
    seed: int = 0

    def noise_psd(self, frequency) -> np.ndarray:
        f = np.atleast_1d(np.asarray(frequency, dtype=float))
        if self.noise is None:
            return np.zeros(len(f))
        if "frequencies" in self.noise:
            return np.interp(f, self.noise["frequencies"], self.noise["psd"])
        return np.full(len(f), float(self.noise["psd"]))

    def to_dict(self) -> dict:
        return {
            "sources": [s.to_dict() for s in self.sources],
            "medium": self.medium.to_dict(),
            "noise": self.noise,
            "seed": self.seed,
        }

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        try:
            return cls(
                sources=tuple(Source.from_dict(s) for s in d.get("sources", [])),
                medium=MediumModel.from_dict(d.get("medium", {})),
                noise=d.get("noise"),
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError("scene", f"malformed scene config: {exc}") from exc

    @classmethod
    def load_json(cls, path) -> "Scene":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fractional_delay_kernel(frac: float, taps: int = SINC_TAPS, beta: float = SINC_BETA) -> np.ndarray:
    """Kaiser-windowed sinc interpolation kernel for a 0..1 sample delay."""
    n = np.arange(taps)
    center = taps / 2.0 - 1.0 + frac
    k = np.sinc(n - center)
    # Kaiser taper sampled around the shifted center keeps the kernel symmetric
    arg = np.clip((n - center) / (taps / 2.0), -1.0, 1.0)
    w = np.i0(beta * np.sqrt(1.0 - arg**2)) / np.i0(beta)
    return k * w


def apply_fractional_delay(x: np.ndarray, delay_samples: float) -> np.ndarray:
    """Delay a signal by a non-integer number of samples (same length out)."""
    n_int = int(np.floor(delay_samples))
    frac = delay_samples - n_int
    kernel = fractional_delay_kernel(frac)
    y = np.convolve(x, kernel)[SINC_TAPS // 2 - 1 : SINC_TAPS // 2 - 1 + len(x)]
    out = np.zeros_like(x)
    if n_int >= len(x):
        return out
    if n_int >= 0:
        out[n_int:] = y[: len(x) - n_int]
    else:
        out[: len(x) + n_int] = y[-n_int:]
    return out


def _source_signal(source: Source, rate: float, n: int, rng) -> np.ndarray:
    """Time signal of the source as heard at the 1 m reference distance."""
    spec = source.spectrum
    t = np.arange(n) / rate
    if spec["type"] == "tone":
        amp = np.sqrt(2.0 * spec["power"])  # power = amp^2 / 2
        return amp * np.sin(2.0 * np.pi * spec["frequency"] * t + spec.get("phase", 0.0))
    if spec["type"] == "broadband":
        x = rng.standard_normal(n)
        if "frequencies" in spec:
            spec_f = np.fft.rfftfreq(n, d=1.0 / rate)
            target = np.interp(spec_f, spec["frequencies"], spec["psd"])
            base_psd = 1.0 / (rate / 2.0)  # white unit-variance PSD
            shaping = np.sqrt(target / base_psd)
            return np.fft.irfft(np.fft.rfft(x) * shaping, n=n)
        sigma = np.sqrt(float(spec["psd"]) * rate / 2.0)
        return sigma * x
    raise ValueError(f"unknown spectrum type {spec['type']!r}")


def synthesize_timeseries(
    scene: Scene,
    positions: np.ndarray,
    rate: float = 48_000.0,
    duration: float = 1.0,
    include_absorption: bool = True,
) -> tuple[np.ndarray, dict]:
    """Multichannel pressure time series for the scene.

    `positions` is (M, 3) receiver coordinates (pass `geometry.positions` or
    `subarray.positions`). Returns (signals (n, M), metadata).
    """
    pos = np.asarray(positions, dtype=float)
    n = int(round(rate * duration))
    m = len(pos)
    out = np.zeros((n, m))
    warnings: list[str] = []
    root = np.random.SeedSequence([scene.seed & 0xFFFFFFFF, 0x515E])
    src_seeds, noise_seed = root.spawn(2)
    src_streams = src_seeds.spawn(max(len(scene.sources), 1))

    for si, src in enumerate(scene.sources):
        rng = np.random.default_rng(src_streams[si])
        base = _source_signal(src, rate, n, rng)
        if src.spectrum["type"] == "tone" and src.spectrum["frequency"] > 0.45 * rate:
            warnings.append(
                f"source {si}: tone at {src.spectrum['frequency']:.0f} Hz is close to "
                f"Nyquist; fractional-delay interpolation is inaccurate there"
            )
        delays = path_delays(src.position[None, :], pos, scene.medium)
        r_eff = scene.medium.speed_of_sound * delays
        gains = (REFERENCE_DISTANCE / r_eff) * np.sqrt(src.directivity_gain(pos))
        absorb = None
        if include_absorption:
            if src.spectrum["type"] == "tone":
                alpha = atmospheric_absorption(src.spectrum["frequency"], scene.medium)
                gains = gains * 10.0 ** (-alpha * r_eff / 20.0)
            else:
                spec_f = np.fft.rfftfreq(n, d=1.0 / rate)
                absorb = atmospheric_absorption(spec_f, scene.medium)
        for mi in range(m):
            sigch = apply_fractional_delay(base, delays[mi] * rate) * gains[mi]
            if absorb is not None:
                att = 10.0 ** (-absorb * r_eff[mi] / 20.0)
                sigch = np.fft.irfft(np.fft.rfft(sigch) * att, n=n)
            out[:, mi] += sigch

    if scene.noise is not None:
        noise_streams = noise_seed.spawn(m)
        spec_f = np.fft.rfftfreq(n, d=1.0 / rate)
        target = scene.noise_psd(spec_f)
        base_psd = 1.0 / (rate / 2.0)
        shaping = np.sqrt(np.maximum(target, 0.0) / base_psd)
        flat = "frequencies" not in scene.noise
        for mi in range(m):
            rng = np.random.default_rng(noise_streams[mi])
            w = rng.standard_normal(n)
            if flat:
                out[:, mi] += np.sqrt(float(scene.noise["psd"]) * rate / 2.0) * w
            else:
                out[:, mi] += np.fft.irfft(np.fft.rfft(w) * shaping, n=n)

    meta = {"rate": rate, "duration": duration, "channels": m, "warnings": warnings}
    return out, meta


def transfer_vectors(
    source: Source,
    positions: np.ndarray,
    frequency: float,
    medium: MediumModel,
    include_absorption: bool = True,
) -> np.ndarray:
    """Complex transfer from a unit source (1 m reference) to each receiver."""
    pos = np.asarray(positions, dtype=float)
    delays = path_delays(source.position[None, :], pos, medium)
    r_eff = medium.speed_of_sound * delays
    amp = (REFERENCE_DISTANCE / r_eff) * np.sqrt(source.directivity_gain(pos))
    if include_absorption:
        alpha = atmospheric_absorption(frequency, medium)
        amp = amp * 10.0 ** (-alpha * r_eff / 20.0)
    return amp * np.exp(-2j * np.pi * frequency * delays)


def synthesize_csm(
    scene: Scene,
    positions: np.ndarray,
    frequencies,
    bin_width: float | None = None,
    include_absorption: bool = True,
) -> list[CrossSpectralMatrix]:
    """Exact CSMs: sum over sources of q^2 g g^H plus a diagonal noise term."""
    pos = np.asarray(positions, dtype=float)
    out = []
    for f in np.atleast_1d(np.asarray(frequencies, dtype=float)):
        if f <= 0:
            raise ValueError("CSM frequencies must be > 0")
        m = len(pos)
        c = np.zeros((m, m), dtype=complex)
        units = "Pa^2/Hz"
        for src in scene.sources:
            q2 = src.power_at(f, bin_width)
            if src.spectrum["type"] == "tone":
                units = "Pa^2"
            if q2 == 0.0:
                continue
            g = transfer_vectors(src, pos, f, scene.medium, include_absorption)
            c += q2 * np.outer(g, g.conj())
        c[np.diag_indices(m)] += scene.noise_psd(f)[0]
        out.append(
            CrossSpectralMatrix(
                frequency=float(f),
                values=0.5 * (c + c.conj().T),
                n_averages=1,
                window="exact",
                units=units,
            )
        )
    return out

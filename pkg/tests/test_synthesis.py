import numpy as np
import pytest

from memsarray import synthesis as syn
from memsarray import welch_csm
from memsarray.propagation import MediumModel, atmospheric_absorption, green_convected


def tone_source(pos, freq=4000.0, power=1e-4):
    return syn.Source(position=pos, spectrum={"type": "tone", "frequency": freq, "power": power})


def broadband_source(pos, psd=1e-6):
    return syn.Source(position=pos, spectrum={"type": "broadband", "psd": psd})


class TestFractionalDelay:
    @pytest.mark.parametrize("delay", [0.25, 1.5, 7.875, 20.0])
    def test_sine_phase(self, delay):
        rate = 48_000.0
        f0 = 3000.0
        t = np.arange(4096) / rate
        x = np.sin(2 * np.pi * f0 * t)
        y = syn.apply_fractional_delay(x, delay)
        expected = np.sin(2 * np.pi * f0 * (t - delay / rate))
        seg = slice(200, -200)
        assert np.allclose(y[seg], expected[seg], atol=2e-4)

    def test_flatness_in_band(self):
        rate = 48_000.0
        t = np.arange(8192) / rate
        for f0 in (1000.0, 10_000.0, 19_000.0):
            x = np.sin(2 * np.pi * f0 * t)
            y = syn.apply_fractional_delay(x, 0.5)
            gain = y[500:-500].std() / x[500:-500].std()
            assert abs(20 * np.log10(gain)) < 0.02


class TestTimeseries:
    def test_symmetric_mics_identical(self):
        scene = syn.Scene(sources=(tone_source([0.0, 0.0, 0.0]),), seed=5)
        mics = np.array([[1.0, 2.0, 0.0], [-1.0, 2.0, 0.0]])
        sig, _ = ma_synth(scene, mics)
        assert np.allclose(sig[:, 0], sig[:, 1], atol=1e-12)

    def test_tone_rms_level(self):
        power = 4e-4
        f0 = 4000.0
        scene = syn.Scene(sources=(tone_source([0.0, 0.0, 0.0], f0, power),), seed=5)
        mic = np.array([[0.0, 3.0, 0.0]])
        sig, _ = ma_synth(scene, mic, absorption=True)
        medium = scene.medium
        r = green_convected([0, 0, 0], mic[0], medium).effective_distance
        alpha = atmospheric_absorption(f0, medium)
        expected_rms = np.sqrt(power) * (1.0 / r) * 10 ** (-alpha * r / 20.0)
        measured = sig[500:-500, 0].std()
        assert abs(20 * np.log10(measured / expected_rms)) <= 0.1

    def test_noise_only_low_coherence(self):
        scene = syn.Scene(sources=(), noise={"psd": 1e-6}, seed=9)
        mics = np.array([[0.0, 3.0, 0.0], [0.5, 3.0, 0.0], [1.0, 3.0, 0.2]])
        sig, _ = ma_synth(scene, mics, duration=1.0)
        csms = welch_csm(sig, 48_000.0, freq_range=(500.0, 4000.0))
        msc = []
        for c in csms:
            for i in range(3):
                for j in range(i + 1, 3):
                    msc.append(abs(c.values[i, j]) ** 2 / (c.values[i, i].real * c.values[j, j].real))
        assert np.mean(msc) < 0.05

    def test_zero_sources_noise_level(self):
        scene = syn.Scene(sources=(), noise={"psd": 2e-6}, seed=9)
        sig, _ = ma_synth(scene, np.array([[0.0, 3.0, 0.0]]), duration=0.5)
        measured_psd = sig[:, 0].var() / (48_000.0 / 2.0)
        assert measured_psd == pytest.approx(2e-6, rel=0.1)

    def test_seeded_reproducibility(self):
        scene = syn.Scene(sources=(broadband_source([0, 0, 0]),), noise={"psd": 1e-8}, seed=3)
        mics = np.array([[0.0, 3.0, 0.0], [1.0, 3.0, 0.0]])
        a, _ = ma_synth(scene, mics)
        b, _ = ma_synth(scene, mics)
        assert np.array_equal(a, b)

    def test_nyquist_warning(self):
        scene = syn.Scene(sources=(tone_source([0, 0, 0], freq=23_000.0),), seed=1)
        _, meta = ma_synth(scene, np.array([[0.0, 3.0, 0.0]]), duration=0.1)
        assert meta["warnings"]

    def test_energy_conservation(self):
        # received power scales exactly with the squared propagation amplitude
        scene = syn.Scene(sources=(tone_source([0, 0, 0], 2000.0, 1e-4),), seed=2)
        near, _ = ma_synth(scene, np.array([[0.0, 2.0, 0.0]]))
        far, _ = ma_synth(scene, np.array([[0.0, 4.0, 0.0]]))
        ratio = near[500:-500, 0].var() / far[500:-500, 0].var()
        assert ratio == pytest.approx(4.0, rel=0.01)


def ma_synth(scene, mics, duration=0.25, absorption=False):
    return syn.synthesize_timeseries(
        scene, mics, rate=48_000.0, duration=duration, include_absorption=absorption
    )


class TestExactCsm:
    MICS = np.array([[0.0, 3.0, 0.0], [0.4, 3.0, 0.1], [-0.3, 3.0, -0.2], [0.1, 3.0, 0.4]])

    def test_rank_one_monopole(self):
        scene = syn.Scene(sources=(tone_source([0, 0, 0]),), seed=1)
        csm = syn.synthesize_csm(scene, self.MICS, [4000.0])[0]
        w = np.linalg.eigvalsh(csm.values)
        assert w[-1] > 0
        assert np.allclose(w[:-1], 0.0, atol=1e-12 * w[-1])

    def test_noise_only_diagonal(self):
        scene = syn.Scene(sources=(), noise={"psd": 1e-6}, seed=1)
        csm = syn.synthesize_csm(scene, self.MICS, [1000.0])[0]
        off = csm.values - np.diag(np.diag(csm.values))
        assert np.allclose(off, 0.0)
        assert np.allclose(np.diag(csm.values).real, 1e-6)

    def test_noise_leaves_cross_terms(self):
        src = tone_source([0, 0, 0])
        clean = syn.synthesize_csm(syn.Scene(sources=(src,), seed=1), self.MICS, [4000.0])[0]
        noisy = syn.synthesize_csm(
            syn.Scene(sources=(src,), noise={"psd": 1e-5}, seed=1), self.MICS, [4000.0]
        )[0]
        mask = ~np.eye(4, dtype=bool)
        assert np.array_equal(clean.values[mask], noisy.values[mask])

    def test_positive_frequency_required(self):
        scene = syn.Scene(sources=(), seed=1)
        with pytest.raises(ValueError):
            syn.synthesize_csm(scene, self.MICS, [0.0])

    def test_welch_converges_to_exact(self):
        # off-diagonal Frobenius error <= 15 % at 92 averages
        scene = syn.Scene(sources=(broadband_source([0, 0, -0.2], psd=4e-6),), seed=12)
        mics = self.MICS
        sig, _ = syn.synthesize_timeseries(scene, mics, rate=48_000.0, duration=1.0, include_absorption=False)
        csms = welch_csm(sig, 48_000.0, freq_range=(2000.0, 6000.0))
        mask = ~np.eye(len(mics), dtype=bool)
        errs = []
        for c in csms[:: max(len(csms) // 12, 1)]:
            exact = syn.synthesize_csm(scene, mics, [c.frequency], include_absorption=False)[0]
            err = np.linalg.norm((c.values - exact.values)[mask]) / np.linalg.norm(exact.values[mask])
            errs.append(err)
        assert np.median(errs) <= 0.15

    def test_dipole_directivity_weighting(self):
        axis = np.array([0.0, 1.0, 0.0])
        dip = syn.Source(
            position=[0, 0, 0], spectrum={"type": "tone", "frequency": 2000.0, "power": 1e-4},
            kind="dipole", axis=axis,
        )
        broadside = np.array([[0.0, 3.0, 0.0]])
        oblique = np.array([[3.0, 3.0, 0.0]])
        c_b = syn.synthesize_csm(syn.Scene(sources=(dip,), seed=1), broadside, [2000.0], include_absorption=False)[0]
        c_o = syn.synthesize_csm(syn.Scene(sources=(dip,), seed=1), oblique, [2000.0], include_absorption=False)[0]
        gain_b = c_b.values[0, 0].real * np.linalg.norm(broadside[0]) ** 2
        gain_o = c_o.values[0, 0].real * np.linalg.norm(oblique[0]) ** 2
        # cos^2 of 45 degrees halves the power
        assert gain_o / gain_b == pytest.approx(0.5, rel=1e-6)

    def test_dipole_needs_axis(self):
        with pytest.raises(ValueError):
            syn.Source(position=[0, 0, 0], spectrum={"type": "tone", "frequency": 1e3, "power": 1.0}, kind="dipole")


class TestSceneIO:
    def test_round_trip(self, tmp_path):
        scene = syn.Scene(
            sources=(
                tone_source([1.0, 0.0, -0.5]),
                syn.Source(
                    position=[2.0, 0.0, 0.0],
                    spectrum={"type": "broadband", "psd": 1e-6},
                    kind="dipole",
                    axis=[0.0, 1.0, 0.0],
                ),
            ),
            medium=MediumModel(mach_vector=[0.1, 0.0, 0.0]),
            noise={"psd": 1e-8},
            seed=77,
        )
        path = tmp_path / "scene.json"
        scene.save_json(path)
        back = syn.Scene.load_json(path)
        assert back.seed == 77
        assert len(back.sources) == 2
        assert back.sources[1].kind == "dipole"
        assert np.allclose(back.medium.mach_vector, [0.1, 0.0, 0.0])
        assert back.noise == {"psd": 1e-8}

    def test_malformed_scene(self):
        from memsarray.errors import ConfigError

        with pytest.raises(ConfigError):
            syn.Scene.from_dict({"sources": [{"nope": 1}]})

import json

import numpy as np
import pytest

from memsarray import cli
from memsarray.errors import ConfigError
from memsarray.geometry import ArrayGeometry
from memsarray.synthesis import Scene, Source


@pytest.fixture()
def scene_file(tmp_path):
    scene = Scene(
        sources=(Source(position=[3.0, 0.0, -0.5], spectrum={"type": "broadband", "psd": 1e-6}),),
        seed=4,
    )
    path = tmp_path / "scene.json"
    scene.save_json(path)
    return str(path)


@pytest.fixture()
def geometry_file(tmp_path):
    rc = cli.main(["geometry", "--panels", "1x1", "--seed", "42", "--out", str(tmp_path / "geo")])
    assert rc == 0
    return str(tmp_path / "geo" / "geometry.json")


class TestGeometryCommand:
    def test_outputs(self, tmp_path):
        out = tmp_path / "g"
        rc = cli.main(["geometry", "--panels", "1x1", "--seed", "7", "--out", str(out)])
        assert rc == 0
        geo = ArrayGeometry.load_json(out / "geometry.json")
        assert geo.sensor_count == 800
        assert (out / "geometry.csv").exists()
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["command"] == "geometry"
        assert "geometry.json" in manifest["outputs"]

    def test_full_panel_build(self, tmp_path):
        out = tmp_path / "g3"
        rc = cli.main(["geometry", "--panels", "3x3", "--seed", "42", "--format", "json", "--out", str(out)])
        assert rc == 0
        geo = ArrayGeometry.load_json(out / "geometry.json")
        assert geo.sensor_count == 7200


class TestConfigValidation:
    def test_unknown_key_rejected(self):
        cfg = json.loads(json.dumps(cli.bundled_config("single_monopole")))
        cfg["beamforming"]["typo_key"] = 1
        with pytest.raises(ConfigError) as err:
            cli.validate_pipeline_config(cfg)
        assert "typo_key" in err.value.field

    def test_missing_section_rejected(self):
        cfg = json.loads(json.dumps(cli.bundled_config("single_monopole")))
        del cfg["beamforming"]
        with pytest.raises(ConfigError):
            cli.validate_pipeline_config(cfg)

    def test_exit_code_two(self, tmp_path):
        cfg = cli.bundled_config("single_monopole")
        cfg["unknown_section"] = {}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        rc = cli.main(["pipeline", "--config", str(path), "--out", str(tmp_path / "run")])
        assert rc == 2

    def test_bundled_config_is_valid(self):
        cli.validate_pipeline_config(cli.bundled_config("single_monopole"))


class TestAcquireCommand:
    def test_drop_and_shuffle(self, tmp_path):
        out = tmp_path / "acq"
        rc = cli.main(
            [
                "acquire",
                "--duration", "0.004",
                "--drop", "1",
                "--shuffle",
                "--out", str(out),
            ]
        )
        assert rc == 0
        gaps = json.loads((out / "gaps.json").read_text())
        assert len(gaps) == 1
        assert gaps[0]["sequences"] == [1, 1]
        sidecar = json.loads((out / "pcm.json").read_text())
        assert sidecar["channels"] == 200
        assert sidecar["rate"] == 48_000


class TestBeamformCommand:
    def test_map_outputs(self, tmp_path, scene_file, geometry_file):
        out = tmp_path / "bf"
        rc = cli.main(
            [
                "beamform",
                "--scene", scene_file,
                "--geometry", geometry_file,
                "--freqs", "2000",
                "--grid", "2.6,3.4,-0.9,-0.1,0.04",
                "--clean-sc",
                "--out", str(out),
            ]
        )
        assert rc == 0
        meta = json.loads((out / "map_2000Hz.json").read_text())
        assert meta["kind"] == "clean_sc"
        assert meta["components"]
        lines = (out / "map_2000Hz.csv").read_text().splitlines()
        assert lines[0] == "x,z,psd_db"
        assert len(lines) == 21 * 21 + 1

    def test_dnw_like_runs_140_sensors(self, tmp_path, scene_file):
        gout = tmp_path / "geo3"
        cli.main(["geometry", "--panels", "3x3", "--seed", "42", "--format", "json", "--out", str(gout)])
        out = tmp_path / "bf140"
        rc = cli.main(
            [
                "beamform",
                "--scene", scene_file,
                "--geometry", str(gout / "geometry.json"),
                "--subarray", "dnw_like",
                "--freqs", "4000",
                "--grid", "2.7,3.3,-0.8,-0.2,0.05",
                "--out", str(out),
            ]
        )
        assert rc == 0
        meta = json.loads((out / "map_4000Hz.json").read_text())
        assert meta["n_sensors"] == 140


class TestPipelineCommand:
    def test_bundled_run_and_rerun_identical(self, tmp_path):
        out1 = tmp_path / "r1"
        out2 = tmp_path / "r2"
        for out in (out1, out2):
            rc = cli.main(["pipeline", "--config", "bundled:single-monopole", "--out", str(out)])
            assert rc == 0
        files1 = sorted(p.relative_to(out1) for p in out1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(out2) for p in out2.rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel

    def test_manifest_contents(self, tmp_path):
        out = tmp_path / "run"
        cli.main(["pipeline", "--config", "bundled:single-monopole", "--out", str(out)])
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["command"] == "pipeline"
        assert manifest["seed"] == 7
        assert manifest["package"]["memsarray"]
        assert any(k.startswith("beamforming/map_") for k in manifest["outputs"])
        assert "analysis/roi_spectrum.csv" in manifest["outputs"]

    def test_jobs_parallel_same_result(self, tmp_path):
        out1 = tmp_path / "serial"
        out2 = tmp_path / "parallel"
        cli.main(["pipeline", "--config", "bundled:single-monopole", "--out", str(out1)])
        cli.main(["pipeline", "--config", "bundled:single-monopole", "--jobs", "2", "--out", str(out2)])
        a = (out1 / "analysis" / "roi_spectrum.csv").read_bytes()
        b = (out2 / "analysis" / "roi_spectrum.csv").read_bytes()
        assert a == b


class TestDirectivityCommand:
    def test_surface_outputs(self, tmp_path, geometry_file):
        # 3x1 panels would be slow through the full series; a small run suffices
        scene = Scene(
            sources=(Source(position=[3.0, 0.0, -0.5], spectrum={"type": "broadband", "psd": 1e-6}),),
            seed=4,
        )
        spath = tmp_path / "scene.json"
        scene.save_json(spath)
        out = tmp_path / "direc"
        rc = cli.main(
            [
                "directivity",
                "--scene", str(spath),
                "--geometry", geometry_file,
                "--roi", "2.8,3.2,-0.7,-0.3",
                "--reference", "3.0,0.0,-0.5",
                "--freqs", "2000",
                "--count", "3",
                "--mics", "60",
                "--aperture", "0.8",
                "--out", str(out),
            ]
        )
        assert rc == 0
        lines = (out / "directivity.csv").read_text().splitlines()
        assert len(lines) == 4  # header + 3 angles
        meta = json.loads((out / "directivity_meta.json").read_text())
        assert len(meta["angles_deg"]) == 3


class TestFarfieldCommand:
    def test_comparison_output(self, tmp_path, scene_file, geometry_file):
        out = tmp_path / "ff"
        rc = cli.main(
            [
                "farfield",
                "--scene", scene_file,
                "--geometry", geometry_file,
                "--roi", "2.8,3.2,-0.7,-0.3",
                "--grid", "2.6,3.4,-0.9,-0.1,0.04",
                "--freqs", "1000,2000",
                "--mics", "3.0,6.0,-0.5;3.0,8.0,-0.5",
                "--reference", "3.0,0.0,-0.5",
                "--out", str(out),
            ]
        )
        assert rc == 0
        lines = (out / "farfield_comparison.csv").read_text().splitlines()
        assert lines[0] == "frequency,integrated_db,mic_average_db,delta_db"
        assert len(lines) == 3
        deltas = [abs(float(l.split(",")[3])) for l in lines[1:]]
        assert max(deltas) < 1.0

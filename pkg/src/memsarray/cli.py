"""Command-line front end.

One executable with subcommands for each pipeline stage plus a config-driven
full run. All commands are deterministic for fixed seeds and write a run
manifest (input hashes, package versions, output hashes) next to their
outputs, so every artifact can be reproduced byte for byte.

Exit codes: 0 success, 2 configuration/schema error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources

import numpy as np
import scipy

from . import __version__, acquisition, analysis, beamforming, geometry, spectral, synthesis
from .errors import ConfigError, NumericalError

OUTPUT_ROOT_ENV = "MEMSARRAY_OUTPUT_ROOT"


# ---------------------------------------------------------------- config


_SCENE_SCHEMA = {
    "sources": list,
    "medium": dict,
    "noise": (dict, type(None)),
    "seed": int,
}

_PIPELINE_SCHEMA = {
    "name": str,
    "seed": int,
    "geometry": dict,
    "scene": dict,
    "subarray": dict,
    "spectral": dict,
    "beamforming": dict,
    "analysis": dict,
    "outputs": dict,
}

_SUB_SCHEMAS = {
    "geometry": {"generate": dict, "load": str},
    "geometry.generate": {"panels_x": int, "panels_z": int, "seed": int},
    "subarray": {
        "strategy": str,
        "mics": int,
        "aperture": (int, float),
        "epsilon": (int, float),
        "count": int,
        "center": list,
        "d_ref": (int, float),
        "f_ref": (int, float),
        "indices": list,
    },
    "spectral": {"block": int, "overlap": (int, float), "window": str, "duration": (int, float), "rate": (int, float)},
    "beamforming": {
        "frequencies": list,
        "grid": dict,
        "diagonal_removal": bool,
        "clean_sc": bool,
        "loop_gain": (int, float),
        "max_iterations": int,
        "stop_threshold": (int, float),
        "estimator": str,
        "include_absorption": bool,
    },
    "beamforming.grid": {"x_range": list, "z_range": list, "spacing": (int, float), "y_plane": (int, float), "delta_angle": (int, float), "aoa": (int, float)},
    "analysis": {"roi": dict, "band": (str, type(None)), "reference_point": list, "farfield_mics": list},
    "analysis.roi": {"x_range": list, "z_range": list, "label": str},
    "outputs": {"formats": list},
}


def _check_keys(cfg: dict, schema: dict, path: str):
    for key, value in cfg.items():
        if key not in schema:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
        expected = schema[key]
        if isinstance(expected, tuple):
            if not isinstance(value, expected):
                raise ConfigError(f"{path}.{key}" if path else key, f"expected {expected}, got {type(value).__name__}")
        elif expected is not None and not isinstance(value, expected):
            if expected is float and isinstance(value, int):
                continue
            raise ConfigError(f"{path}.{key}" if path else key, f"expected {expected.__name__}, got {type(value).__name__}")


def validate_pipeline_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("", "pipeline config must be a JSON object")
    _check_keys(cfg, _PIPELINE_SCHEMA, "")
    for section, schema in _SUB_SCHEMAS.items():
        head, _, tail = section.partition(".")
        node = cfg.get(head)
        if tail and isinstance(node, dict):
            node = node.get(tail)
        if isinstance(node, dict):
            _check_keys(node, schema, section)
    for required in ("geometry", "scene", "beamforming"):
        if required not in cfg:
            raise ConfigError(required, "missing required section")
    if "generate" not in cfg["geometry"] and "load" not in cfg["geometry"]:
        raise ConfigError("geometry", "needs either 'generate' or 'load'")
    if "frequencies" not in cfg["beamforming"]:
        raise ConfigError("beamforming.frequencies", "missing")
    return cfg


def bundled_config(name: str) -> dict:
    with resources.files("memsarray.data").joinpath(f"{name}.json").open("r") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- manifest


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _sha256_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


def write_manifest(out_dir, command: str, inputs: dict, outputs: list, seed=None):
    manifest = {
        "command": command,
        "package": {"memsarray": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "seed": seed,
        "inputs": inputs,
        "outputs": {os.path.relpath(p, out_dir): _sha256(p) for p in sorted(map(str, outputs))},
    }
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return path


def _out_dir(args) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV, ".")
    out = args.out if os.path.isabs(args.out) else os.path.join(root, args.out)
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------- stages


def _load_geometry(spec, seed) -> geometry.ArrayGeometry:
    if "load" in spec:
        return geometry.ArrayGeometry.load_json(spec["load"])
    gen = spec.get("generate", {})
    return geometry.assemble_full_array(
        gen.get("panels_x", 3), gen.get("panels_z", 3), gen.get("seed", seed)
    )


def _build_subarray(geo, spec, frequencies):
    """Returns {frequency: SubArray}; a strategy-independent view for the runner."""
    strategy = spec.get("strategy", "dnw_like")
    eps = spec.get("epsilon", 0.1)
    if strategy == "dnw_like":
        sub = geometry.dnw_like_subarray(
            geo, mics=spec.get("mics", 140), aperture=spec.get("aperture", 1.5), epsilon=eps
        )
        return {float(f): sub for f in frequencies}
    if strategy == "freq_dependent":
        center = spec.get("center", [geo.plane.origin[0], geo.plane.origin[2]])
        return geometry.freq_dependent_subarrays(
            geo,
            center,
            d_ref=spec.get("d_ref", 5.5),
            f_ref=spec.get("f_ref", 1000.0),
            mics=spec.get("mics", 200),
            bands=frequencies,
            epsilon=eps,
        )
    if strategy == "explicit":
        idx = np.asarray(spec["indices"], dtype=int)
        sub = geometry.SubArray(
            parent=geo,
            indices=idx,
            target_positions=geo.positions[idx],
            match_distances=np.zeros(len(idx)),
            nominal_center=geo.positions[idx].mean(axis=0),
            epsilon=eps,
        )
        return {float(f): sub for f in frequencies}
    raise ConfigError("subarray.strategy", f"unknown strategy {strategy!r}")


def _beamform_work(item):
    """Worker for per-frequency beamforming (picklable)."""
    (freq, csm_values, units, mic_positions, ref_point, grid, medium_dict, bf) = item
    medium = synthesis.MediumModel.from_dict(medium_dict)
    csm = spectral.CrossSpectralMatrix(frequency=freq, values=csm_values, units=units)
    steer = beamforming.steering_formulation_iii(
        grid,
        mic_positions,
        freq,
        medium,
        reference_point=ref_point,
        include_absorption=bf.get("include_absorption", False),
    )
    if bf.get("clean_sc", True):
        bmap = beamforming.clean_sc(
            csm,
            steer,
            grid,
            loop_gain=bf.get("loop_gain", 1.0),
            max_iterations=bf.get("max_iterations", 100),
            stop_threshold=bf.get("stop_threshold", 1e-3),
            diagonal_removal=bf.get("diagonal_removal", True),
        )
    else:
        bmap = beamforming.conventional_beamform(csm, steer, bf.get("diagonal_removal", True))
    return freq, bmap


def run_beamforming(cfg: dict, geo, scene, jobs: int = 1):
    """Shared by `beamform`, `directivity` paths and `pipeline`. Returns maps."""
    bf = cfg["beamforming"]
    freqs = [float(f) for f in bf["frequencies"]]
    grid_spec = bf.get("grid", {})
    grid = beamforming.make_focus_grid(
        tuple(grid_spec.get("x_range", [2.0, 4.0])),
        tuple(grid_spec.get("z_range", [-1.5, 0.5])),
        grid_spec.get("spacing", 0.02),
        y_plane=grid_spec.get("y_plane", 0.0),
        delta_angle=grid_spec.get("delta_angle", 0.0),
        aoa=grid_spec.get("aoa", 0.0),
    )
    subs = _build_subarray(geo, cfg.get("subarray", {}), freqs)
    estimator = bf.get("estimator", "exact")

    csm_by_freq = {}
    if estimator == "welch":
        sp = cfg.get("spectral", {})
        rate = sp.get("rate", 48_000.0)
        block = sp.get("block", 1024)
        # one synthesis per distinct sub-array
        unique = {}
        for f, sub in subs.items():
            unique.setdefault(id(sub), (sub, []))[1].append(f)
        for sub, flist in unique.values():
            sig, _ = synthesis.synthesize_timeseries(
                scene, sub.positions, rate=rate, duration=sp.get("duration", 1.0)
            )
            csms = spectral.welch_csm(
                sig, rate, block=block, overlap=sp.get("overlap", 0.5), window=sp.get("window", "hann"),
                freq_range=(min(flist) - 2 * rate / block, max(flist) + 2 * rate / block),
            )
            for f in flist:
                csm_by_freq[f] = min(csms, key=lambda c: abs(c.frequency - f))
    else:
        for f, sub in subs.items():
            csm_by_freq[f] = synthesis.synthesize_csm(scene, sub.positions, [f])[0]

    work = []
    for f in freqs:
        sub = subs[f]
        csm = csm_by_freq[f]
        mean = sub.positions.mean(axis=0)
        work.append((csm.frequency, csm.values, csm.units, sub.positions, mean, grid, scene.medium.to_dict(), bf))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_beamform_work, work))
    else:
        results = [_beamform_work(w) for w in work]
    results.sort(key=lambda fr: fr[0])
    return grid, subs, [bmap for _, bmap in results]


def save_map(out_dir, bmap, formats=("csv", "json")):
    base = os.path.join(out_dir, f"map_{bmap.frequency:.0f}Hz")
    written = []
    if "csv" in formats:
        path = base + ".csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,z,psd_db\n")
            db = spectral.to_db(bmap.values)
            for (x, z), v in zip(bmap.grid.local, db):
                fh.write(f"{x!r},{z!r},{v!r}\n")
        written.append(path)
    if "json" in formats:
        path = base + ".json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "frequency": bmap.frequency,
                    "kind": bmap.kind,
                    "diagonal_removal": bmap.diagonal_removed,
                    "reference": "source power at 1 m, dB re 20 uPa",
                    "shape": list(bmap.grid.shape),
                    "spacing": bmap.grid.spacing,
                    "n_sensors": bmap.n_channels,
                    "components": [[int(t), float(p)] for t, p in bmap.components],
                    "n_negative": bmap.n_negative,
                },
                fh,
                sort_keys=True,
            )
        written.append(path)
    if "bin" in formats:
        path = base + ".raw"
        bmap.values.astype("<f4").tofile(path)
        written.append(path)
    return written


# ---------------------------------------------------------------- commands


def cmd_geometry(args) -> int:
    out = _out_dir(args)
    px, _, pz = args.panels.partition("x")
    geo = geometry.assemble_full_array(int(px), int(pz), args.seed)
    outputs = []
    jpath = os.path.join(out, "geometry.json")
    geo.save_json(jpath)
    outputs.append(jpath)
    if "csv" in args.format:
        cpath = os.path.join(out, "geometry.csv")
        geo.save_csv(cpath)
        outputs.append(cpath)
    write_manifest(out, "geometry", {"panels": args.panels}, outputs, seed=args.seed)
    print(f"geometry: {geo.sensor_count} sensors, extent {geo.extent[0]} m x {geo.extent[1]} m")
    return 0


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    scene = synthesis.Scene.load_json(args.scene)
    geo = geometry.ArrayGeometry.load_json(args.geometry)
    positions = geo.positions
    if args.channels and args.channels < len(positions):
        positions = positions[: args.channels]
    outputs = []
    if args.mode == "timeseries":
        sig, meta = synthesis.synthesize_timeseries(scene, positions, rate=args.rate, duration=args.duration)
        npy = os.path.join(out, "timeseries.npy")
        np.save(npy, sig)
        side = os.path.join(out, "timeseries.json")
        with open(side, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, sort_keys=True)
        outputs += [npy, side]
    else:
        freqs = [float(f) for f in args.freqs.split(",")]
        csms = synthesis.synthesize_csm(scene, positions, freqs)
        path = os.path.join(out, "exact_csm.bin")
        spectral.save_csm_set(path, csms, geometry_hash=_sha256(args.geometry))
        outputs.append(path)
    write_manifest(
        out, "simulate", {"scene": _sha256(args.scene), "geometry": _sha256(args.geometry)}, outputs, seed=scene.seed
    )
    return 0


def cmd_acquire(args) -> int:
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    n_bits = int(acquisition.PDM_RATE * args.duration)
    streams = []
    for ch in range(acquisition.CHANNELS_PER_FPGA):
        t = np.arange(n_bits) / acquisition.PDM_RATE
        wave = args.amplitude * np.sin(2 * np.pi * args.tone * t + 2 * np.pi * ch / acquisition.CHANNELS_PER_FPGA)
        streams.append(acquisition.pdm_modulate(wave))
    packets = acquisition.packetize(streams, fpga_id=args.fpga_id)
    if args.drop:
        dropped = set(int(s) for s in args.drop.split(","))
        packets = [p for p in packets if p.sequence not in dropped]
    if args.shuffle:
        rng.shuffle(packets)
    cap = os.path.join(out, "capture.bin")
    acquisition.write_capture(cap, packets)

    streams_by_fpga, gaps = acquisition.depacketize(acquisition.read_capture(cap), allow_gaps=True)
    blocks = [acquisition.pdm_decimate(s) for s in streams_by_fpga[args.fpga_id]]
    pcm = acquisition.write_pcm_raw(os.path.join(out, "pcm"), blocks)
    gap_path = os.path.join(out, "gaps.json")
    with open(gap_path, "w", encoding="utf-8") as fh:
        json.dump(
            [
                {
                    "fpga": g.fpga_id,
                    "sequences": [g.first_sequence, g.last_sequence],
                    "samples": [g.start_sample, g.end_sample],
                }
                for g in gaps
            ],
            fh,
            sort_keys=True,
        )
    outputs = [cap, pcm, os.path.join(out, "pcm.json"), gap_path]
    write_manifest(out, "acquire", {"tone": args.tone, "duration": args.duration}, outputs, seed=args.seed)
    print(f"acquire: {len(packets)} packets, {len(gaps)} gaps, group delay "
          f"{acquisition.decimation_group_delay()} samples")
    return 0


def _scene_from_args(args) -> synthesis.Scene:
    return synthesis.Scene.load_json(args.scene)


def cmd_beamform(args) -> int:
    out = _out_dir(args)
    scene = _scene_from_args(args)
    geo = geometry.ArrayGeometry.load_json(args.geometry)
    if args.band:
        lo, hi = (float(v) for v in args.band_range.split(","))
        freqs = [float(f) for f in spectral.band_centers(args.band, lo, hi)]
    else:
        freqs = [float(f) for f in args.freqs.split(",")]
    cfg = {
        "beamforming": {
            "frequencies": freqs,
            "grid": _parse_grid(args.grid),
            "diagonal_removal": args.dr == "on",
            "clean_sc": args.clean_sc,
            "loop_gain": args.loop_gain,
            "max_iterations": args.max_iter,
            "estimator": args.estimator,
        },
        "subarray": {"strategy": args.subarray, "epsilon": args.epsilon},
        "spectral": {"block": args.block, "overlap": args.overlap, "duration": args.duration},
    }
    grid, subs, maps = run_beamforming(cfg, geo, scene, jobs=args.jobs)
    outputs = []
    for bmap in maps:
        outputs += save_map(out, bmap, formats=args.format.split(","))
    write_manifest(
        out,
        "beamform",
        {"scene": _sha256(args.scene), "geometry": _sha256(args.geometry), "config": _sha256_obj(cfg)},
        outputs,
        seed=scene.seed,
    )
    return 0


def _parse_grid(spec: str) -> dict:
    x0, x1, z0, z1, dx = (float(v) for v in spec.split(","))
    return {"x_range": [x0, x1], "z_range": [z0, z1], "spacing": dx}


def _parse_roi(spec: str) -> analysis.RegionOfInterest:
    x0, x1, z0, z1 = (float(v) for v in spec.split(","))
    return analysis.RegionOfInterest(x_range=(x0, x1), z_range=(z0, z1))


def cmd_directivity(args) -> int:
    out = _out_dir(args)
    scene = _scene_from_args(args)
    geo = geometry.ArrayGeometry.load_json(args.geometry)
    roi = _parse_roi(args.roi)
    reference = [float(v) for v in args.reference.split(",")]
    surface = analysis.directivity_pipeline(
        scene,
        geo,
        reference,
        roi,
        [float(f) for f in args.freqs.split(",")],
        count=args.count,
        aperture=args.aperture,
        mics=args.mics,
        epsilon=args.epsilon,
    )
    gpath = os.path.join(out, "directivity.csv")
    surface.save_csv(gpath)
    mpath = os.path.join(out, "directivity_meta.json")
    surface.save_meta(mpath)
    polar = analysis.octave_polar(surface) if args.octave_polar else None
    outputs = [gpath, mpath]
    if polar is not None:
        ppath = os.path.join(out, "octave_polar.csv")
        with open(ppath, "w", encoding="utf-8") as fh:
            fh.write("theta_deg," + ",".join(repr(float(c)) for c in polar["centers"]) + "\n")
            for a, row in zip(polar["angles"], polar["gamma_db"]):
                fh.write(repr(float(a)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
        outputs.append(ppath)
    write_manifest(
        out, "directivity", {"scene": _sha256(args.scene), "geometry": _sha256(args.geometry)}, outputs, seed=scene.seed
    )
    return 0


def cmd_farfield(args) -> int:
    out = _out_dir(args)
    scene = _scene_from_args(args)
    geo = geometry.ArrayGeometry.load_json(args.geometry)
    roi = _parse_roi(args.roi)
    freqs = [float(f) for f in args.freqs.split(",")]
    cfg = {
        "beamforming": {
            "frequencies": freqs,
            "grid": _parse_grid(args.grid),
            "clean_sc": True,
            "diagonal_removal": args.dr == "on",
        },
        "subarray": {"strategy": args.subarray},
    }
    _, _, maps = run_beamforming(cfg, geo, scene, jobs=args.jobs)
    integrated = analysis.maps_to_spectrum(maps, roi)

    mic_specs = []
    for mic in args.mics.split(";"):
        pos = np.array([float(v) for v in mic.split(",")])
        spec = _virtual_mic_spectrum(scene, pos, freqs)
        dist = float(np.linalg.norm(pos - np.array([float(v) for v in args.reference.split(",")])))
        mic_specs.append((spec, dist))
    comparison = analysis.farfield_compare(integrated, mic_specs)
    path = os.path.join(out, "farfield_comparison.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frequency,integrated_db,mic_average_db,delta_db\n")
        for row in zip(comparison.frequencies, comparison.integrated_db, comparison.mic_average_db, comparison.delta_psd_db):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    write_manifest(
        out, "farfield", {"scene": _sha256(args.scene), "geometry": _sha256(args.geometry)}, [path], seed=scene.seed
    )
    return 0


def _virtual_mic_spectrum(scene, position, freqs) -> spectral.Spectrum:
    csm = synthesis.synthesize_csm(scene, position[None, :], freqs)
    p = np.array([c.values[0, 0].real for c in csm])
    return spectral.Spectrum(frequencies=np.asarray(freqs, dtype=float), psd=p, units=csm[0].units)


def cmd_pipeline(args) -> int:
    if args.config.startswith("bundled:"):
        cfg = bundled_config(args.config.split(":", 1)[1].replace("-", "_"))
        cfg_hash = _sha256_obj(cfg)
    else:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        cfg_hash = _sha256(args.config)
    cfg = validate_pipeline_config(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _out_dir(args)
    seed = cfg.get("seed", 0)

    stage = "geometry"
    try:
        geo = _load_geometry(cfg["geometry"], seed)
        geo_dir = os.path.join(out, "geometry")
        os.makedirs(geo_dir, exist_ok=True)
        gpath = os.path.join(geo_dir, "geometry.json")
        geo.save_json(gpath)
        outputs = [gpath]

        stage = "scene"
        scene_spec = cfg["scene"]
        if "load" in scene_spec:
            scene = synthesis.Scene.load_json(scene_spec["load"])
        else:
            scene = synthesis.Scene.from_dict(scene_spec)

        stage = "beamforming"
        grid, subs, maps = run_beamforming(cfg, geo, scene, jobs=args.jobs)
        bf_dir = os.path.join(out, "beamforming")
        os.makedirs(bf_dir, exist_ok=True)
        formats = cfg.get("outputs", {}).get("formats", ["csv", "json"])
        for bmap in maps:
            outputs += save_map(bf_dir, bmap, formats=formats)

        stage = "analysis"
        an = cfg.get("analysis", {})
        if "roi" in an:
            roi = analysis.RegionOfInterest(
                x_range=tuple(an["roi"]["x_range"]), z_range=tuple(an["roi"]["z_range"]),
                label=an["roi"].get("label", "roi"),
            )
            spectrum = analysis.maps_to_spectrum(maps, roi)
            if an.get("band"):
                spectrum = spectral.band_integrate(spectrum, an["band"])
            an_dir = os.path.join(out, "analysis")
            os.makedirs(an_dir, exist_ok=True)
            spath = os.path.join(an_dir, "roi_spectrum.csv")
            spectrum.save_csv(spath)
            outputs.append(spath)
    except ConfigError:
        raise
    except Exception as exc:
        raise NumericalError(f"stage {stage!r} failed: {exc}") from exc

    write_manifest(out, "pipeline", {"config": cfg_hash}, outputs, seed=seed)
    print(f"pipeline: {len(outputs)} artifacts in {out}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memsarray", description=__doc__)
    p.add_argument("--version", action="version", version=f"memsarray {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geometry", help="generate the panel tiling")
    g.add_argument("--panels", default="3x3", help="PXxPZ, e.g. 3x3")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--format", default="json,csv")
    g.add_argument("--out", default="run")
    g.set_defaults(func=cmd_geometry)

    s = sub.add_parser("simulate", help="synthesize time series or exact CSMs")
    s.add_argument("--scene", required=True)
    s.add_argument("--geometry", required=True)
    s.add_argument("--mode", choices=["timeseries", "csm"], default="timeseries")
    s.add_argument("--rate", type=float, default=48_000.0)
    s.add_argument("--duration", type=float, default=1.0)
    s.add_argument("--freqs", default="1000")
    s.add_argument("--channels", type=int, default=0)
    s.add_argument("--out", default="run")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("acquire", help="simulate the PDM/packet/PCM chain")
    a.add_argument("--tone", type=float, default=1000.0)
    a.add_argument("--amplitude", type=float, default=0.5)
    a.add_argument("--duration", type=float, default=0.02)
    a.add_argument("--fpga-id", type=int, default=0)
    a.add_argument("--drop", default="", help="comma-separated sequence numbers to drop")
    a.add_argument("--shuffle", action="store_true", help="randomize packet order")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default="run")
    a.set_defaults(func=cmd_acquire)

    b = sub.add_parser("beamform", help="beamforming maps from a scene")
    b.add_argument("--scene", required=True)
    b.add_argument("--geometry", required=True)
    b.add_argument("--subarray", default="dnw_like", choices=["dnw_like", "freq_dependent"])
    b.add_argument("--epsilon", type=float, default=0.1)
    b.add_argument("--freqs", default="4000")
    b.add_argument("--band", choices=["third_octave", "octave"], default=None,
                   help="run at standard band centers instead of --freqs")
    b.add_argument("--band-range", default="1000,8000")
    b.add_argument("--grid", default="2.0,4.0,-1.5,0.5,0.02")
    b.add_argument("--dr", choices=["on", "off"], default="on")
    b.add_argument("--clean-sc", action="store_true")
    b.add_argument("--loop-gain", type=float, default=1.0)
    b.add_argument("--max-iter", type=int, default=100)
    b.add_argument("--estimator", choices=["exact", "welch"], default="exact")
    b.add_argument("--block", type=int, default=1024)
    b.add_argument("--overlap", type=float, default=0.5)
    b.add_argument("--duration", type=float, default=1.0)
    b.add_argument("--format", default="csv,json")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", default="run")
    b.set_defaults(func=cmd_beamform)

    d = sub.add_parser("directivity", help="pitch sub-array directivity surface")
    d.add_argument("--scene", required=True)
    d.add_argument("--geometry", required=True)
    d.add_argument("--roi", required=True, help="x0,x1,z0,z1")
    d.add_argument("--reference", default="2.4,0.0,0.0")
    d.add_argument("--freqs", default="2000,4000")
    d.add_argument("--count", type=int, default=13)
    d.add_argument("--aperture", type=float, default=2.0)
    d.add_argument("--mics", type=int, default=150)
    d.add_argument("--epsilon", type=float, default=0.1)
    d.add_argument("--octave-polar", action="store_true")
    d.add_argument("--out", default="run")
    d.set_defaults(func=cmd_directivity)

    f = sub.add_parser("farfield", help="beamforming vs far-field projection")
    f.add_argument("--scene", required=True)
    f.add_argument("--geometry", required=True)
    f.add_argument("--roi", required=True)
    f.add_argument("--grid", default="2.0,4.0,-1.5,0.5,0.02")
    f.add_argument("--freqs", default="1000,2000,4000")
    f.add_argument("--mics", required=True, help="semicolon-separated x,y,z positions")
    f.add_argument("--reference", default="2.4,0.0,0.0")
    f.add_argument("--subarray", default="dnw_like")
    f.add_argument("--dr", choices=["on", "off"], default="on")
    f.add_argument("--jobs", type=int, default=1)
    f.add_argument("--out", default="run")
    f.set_defaults(func=cmd_farfield)

    pl = sub.add_parser("pipeline", help="config-driven full run")
    pl.add_argument("--config", required=True, help="path or bundled:<name>")
    pl.add_argument("--seed", type=int, default=None)
    pl.add_argument("--jobs", type=int, default=1)
    pl.add_argument("--out", default="run")
    pl.set_defaults(func=cmd_pipeline)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error at {exc.field or '<root>'}: {exc.message}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

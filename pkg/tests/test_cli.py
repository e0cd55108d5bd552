"""End-to-end tests for the command-line interface."""

from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from cloudtrack import raster, synth, tracker, trajectory
from cloudtrack.cli import main
from cloudtrack.tracker import BoxPathRow

import helpers

T0 = datetime(2021, 6, 20, 12, 0, tzinfo=timezone.utc)
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def make_scene(tmp_path, name="scene", u=0.5, v=0.0, seed=3, n_frames=8, **kw):
    spec, cx, cy = helpers.uniform_scene(u, v, seed=seed, n_frames=n_frames, **kw)
    out = synth.generate(spec, tmp_path / name)
    return out, cx, cy


def scene_json(tmp_path, **overrides) -> str:
    description = {
        "width": 64,
        "height": 64,
        "n_frames": 3,
        "start_time": "2021-06-20T12:00:00Z",
        "lat0": 44.5,
        "lon0": -128.25,
        "dlat": -0.01,
        "dlon": 0.01,
        "flow": {"kind": "uniform", "u": 1.0, "v": 0.0},
        "texture": {"seed": 4, "contrast": 0.2},
    }
    description.update(overrides)
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(description))
    return str(path)


class TestParser:
    def test_version_exits_cleanly(self, capsys) -> None:
        with pytest.raises(SystemExit) as exit_info:
            main(["--version"])
        assert exit_info.value.code == 0
        assert "cloudtrack" in capsys.readouterr().out

    def test_missing_subcommand_is_usage_error(self) -> None:
        with pytest.raises(SystemExit) as exit_info:
            main([])
        assert exit_info.value.code == 2


class TestPreprocess:
    def test_writes_equalized_differences(self, tmp_path, capsys) -> None:
        band_a, _, _ = make_scene(tmp_path, "band_a", u=0.0, seed=1, n_frames=3)
        band_b, _, _ = make_scene(tmp_path, "band_b", u=0.0, seed=2, n_frames=3)
        out = tmp_path / "eq"
        code = main(
            [
                "preprocess",
                "--manifest",
                str(band_a.manifest_path),
                "--manifest",
                str(band_b.manifest_path),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert "wrote 3" in capsys.readouterr().out
        names = (out / "manifest.txt").read_text().split()
        assert names == ["eq_0000.pgm", "eq_0001.pgm", "eq_0002.pgm"]
        manifest = raster.load_manifest(out / "manifest.txt")
        frame = raster.load_frame(*manifest.entries[0])
        assert frame.values.max() == 65535.0
        assert frame.timestamp == helpers.POLAR_DAY_START

    def test_single_band_is_usage_error(self, tmp_path, capsys) -> None:
        band_a, _, _ = make_scene(tmp_path, "band_a", u=0.0, seed=1, n_frames=2)
        code = main(["preprocess", "--manifest", str(band_a.manifest_path), "--out", str(tmp_path / "eq")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_length_mismatch_is_usage_error(self, tmp_path, capsys) -> None:
        band_a, _, _ = make_scene(tmp_path, "band_a", u=0.0, seed=1, n_frames=3)
        band_b, _, _ = make_scene(tmp_path, "band_b", u=0.0, seed=2, n_frames=2)
        code = main(
            [
                "preprocess",
                "--manifest",
                str(band_a.manifest_path),
                "--manifest",
                str(band_b.manifest_path),
                "--out",
                str(tmp_path / "eq"),
            ]
        )
        assert code == 2


class TestTrack:
    def run_track(self, scene, cx, cy, out) -> int:
        return main(
            [
                "track",
                "--manifest",
                str(scene.manifest_path),
                "--box",
                f"{cx},{cy},25,25",
                "--out",
                str(out),
            ]
        )

    def test_full_run_writes_all_artifacts(self, tmp_path, capsys) -> None:
        scene, cx, cy = make_scene(tmp_path)
        out = tmp_path / "run"
        assert self.run_track(scene, cx, cy, out) == 0
        assert "ended EndOfData" in capsys.readouterr().out
        report = json.loads((out / "report.json").read_text())
        assert report["end_reason"] == "EndOfData"
        rows = tracker.read_box_path_csv(out / "box_path.csv")
        assert len(rows) == 8
        lines = (out / "events.ndjson").read_text().splitlines()
        assert json.loads(lines[0])["kind"] == "Initialized"
        assert (out / "track_report.png").read_bytes()[:8] == PNG_MAGIC

    def test_reruns_are_byte_identical(self, tmp_path) -> None:
        scene, cx, cy = make_scene(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert self.run_track(scene, cx, cy, out_a) == 0
        assert self.run_track(scene, cx, cy, out_b) == 0
        for name in ("box_path.csv", "events.ndjson", "report.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_terminated_track_exits_nonzero(self, tmp_path) -> None:
        scene, cx, cy = make_scene(tmp_path, n_frames=20)
        names = scene.manifest_path.read_text().split()
        scene.manifest_path.write_text("".join(n + "\n" for n in names[:3] + names[-2:]))
        code = self.run_track(scene, cx, cy, tmp_path / "run")
        assert code == 1
        report = json.loads((tmp_path / "run/report.json").read_text())
        assert report["end_reason"] == "GapTooLarge"

    def test_malformed_box_is_usage_error(self, tmp_path, capsys) -> None:
        scene, cx, cy = make_scene(tmp_path, n_frames=2)
        code = main(
            ["track", "--manifest", str(scene.manifest_path), "--box", "banana", "--out", str(tmp_path / "run")]
        )
        assert code == 2
        assert "--box" in capsys.readouterr().err


class TestCompare:
    def write_track_csv(self, tmp_path, hours=6):
        rows = []
        n = int(hours * 3600 / 300) + 1
        for k in range(n):
            rows.append(
                BoxPathRow(
                    timestamp=T0 + timedelta(seconds=300 * k),
                    center_x=70.0,
                    center_y=70.0,
                    lat=44.5,
                    lon=-128.25,
                    mode="tracking",
                    n_features=50,
                    visibility=2.0,
                )
            )
        path = tmp_path / "box_path.csv"
        tracker.write_box_path_csv(rows, path)
        return path

    def write_wind(self, tmp_path, u=0.0, v=0.0):
        lats = np.array([44.0, 45.0])
        lons = np.array([-129.0, -128.0])
        heights = np.array([0.0, 200.0])
        times = [T0 + timedelta(hours=3 * i) for i in range(4)]
        shape = (len(times), heights.size, lats.size, lons.size)
        field = trajectory.WindField(
            lats=lats,
            lons=lons,
            heights=heights,
            times=times,
            u=np.full(shape, u),
            v=np.full(shape, v),
        )
        path = tmp_path / "wind.json"
        trajectory.save_windfield(field, path)
        return path

    def test_compare_writes_divergence_artifacts(self, tmp_path, capsys) -> None:
        track = self.write_track_csv(tmp_path)
        wind = self.write_wind(tmp_path)
        out = tmp_path / "cmp"
        code = main(
            [
                "compare",
                "--track",
                str(track),
                "--wind",
                str(wind),
                "--heights",
                "0,200",
                "--out",
                str(out),
                "--duration-hours",
                "6",
            ]
        )
        assert code == 0
        assert "best matching height: 0 m" in capsys.readouterr().out
        assert (out / "trajectory_0000m.csv").exists()
        assert (out / "trajectory_0200m.csv").exists()
        lines = (out / "divergence.csv").read_text().splitlines()
        assert lines[0] == "height_m,hour,timestamp,distance_km"
        assert len(lines) == 1 + 2 * 7  # two heights, hourly samples over six hours
        summary = json.loads((out / "summary.json").read_text())
        assert summary["best_height_m"] == 0.0
        assert {entry["height_m"] for entry in summary["per_height"]} == {0.0, 200.0}
        assert all(entry["max_km"] == 0.0 for entry in summary["per_height"])
        assert (out / "divergence.png").read_bytes()[:8] == PNG_MAGIC

    def test_empty_heights_is_usage_error(self, tmp_path, capsys) -> None:
        track = self.write_track_csv(tmp_path)
        wind = self.write_wind(tmp_path)
        code = main(
            ["compare", "--track", str(track), "--wind", str(wind), "--heights", ",", "--out", str(tmp_path / "cmp")]
        )
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestSynth:
    def test_generates_scene_from_json(self, tmp_path, capsys) -> None:
        out = tmp_path / "scene"
        code = main(["synth", "--scene", scene_json(tmp_path), "--out", str(out)])
        assert code == 0
        assert "wrote 3 frames" in capsys.readouterr().out
        assert (out / "manifest.txt").exists()
        assert (out / "ground_truth.csv").exists()
        assert len(list(out.glob("frame_*.pgm"))) == 3

    def test_seed_override_changes_texture_only(self, tmp_path) -> None:
        scene = scene_json(tmp_path, texture={"seed": 4, "contrast": 0.2, "octave_decay": 1.3})
        main(["synth", "--scene", scene, "--out", str(tmp_path / "a")])
        main(["synth", "--scene", scene, "--out", str(tmp_path / "b"), "--seed", "9"])
        frame_a = (tmp_path / "a/frame_0000.pgm").read_bytes()
        frame_b = (tmp_path / "b/frame_0000.pgm").read_bytes()
        assert frame_a != frame_b

        spec = synth.scene_from_dict(json.loads((tmp_path / "scene.json").read_text()))
        spec.texture = synth.TextureSpec(seed=9, correlation_px=5.0, octaves=3, contrast=0.2, octave_decay=1.3)
        direct = synth.generate(spec, tmp_path / "c")
        assert frame_b == direct.frame_paths[0].read_bytes()

    def test_bad_json_is_usage_error(self, tmp_path, capsys) -> None:
        bad = tmp_path / "scene.json"
        bad.write_text("{not json")
        assert main(["synth", "--scene", str(bad), "--out", str(tmp_path / "x")]) == 2
        assert main(["synth", "--scene", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 2
        capsys.readouterr()

    def test_unknown_flow_kind_is_usage_error(self, tmp_path, capsys) -> None:
        scene = scene_json(tmp_path, flow={"kind": "vortex"})
        assert main(["synth", "--scene", scene, "--out", str(tmp_path / "x")]) == 2
        capsys.readouterr()


class TestMatch:
    def write_ais(self, tmp_path):
        path = tmp_path / "ais.csv"
        path.write_text(
            "vessel_id,timestamp,lat,lon\n"
            "IMO9000001,2021-06-20T12:05:00Z,44.52,-128.22\n"
            "IMO9000002,2021-06-20T12:05:00Z,45.9,-127.0\n"
        )
        return path

    def test_match_prints_json(self, tmp_path, capsys) -> None:
        code = main(
            [
                "match",
                "--ais",
                str(self.write_ais(tmp_path)),
                "--point",
                "44.5,-128.25",
                "--time",
                "2021-06-20T12:00:00Z",
            ]
        )
        assert code == 0
        record = json.loads(capsys.readouterr().out)
        assert record["vessel_id"] == "IMO9000001"
        assert record["timestamp"] == "2021-06-20T12:05:00Z"
        assert 0.0 < record["distance_km"] < 50.0

    def test_no_match_prints_null(self, tmp_path, capsys) -> None:
        code = main(
            [
                "match",
                "--ais",
                str(self.write_ais(tmp_path)),
                "--point",
                "44.5,-128.25",
                "--time",
                "2021-06-20T18:00:00Z",
            ]
        )
        assert code == 0
        assert capsys.readouterr().out.strip() == "null"

    def test_bad_point_is_usage_error(self, tmp_path, capsys) -> None:
        code = main(
            ["match", "--ais", str(self.write_ais(tmp_path)), "--point", "44.5", "--time", "2021-06-20T12:00:00Z"]
        )
        assert code == 2
        assert "--point" in capsys.readouterr().err


class TestRender:
    def test_annotates_frames_with_box(self, tmp_path, capsys) -> None:
        scene, cx, cy = make_scene(tmp_path, u=0.0, n_frames=3)
        run = tmp_path / "run"
        assert main(
            ["track", "--manifest", str(scene.manifest_path), "--box", f"{cx},{cy},25,25", "--out", str(run)]
        ) == 0
        out = tmp_path / "annotated"
        code = main(
            [
                "render",
                "--manifest",
                str(scene.manifest_path),
                "--track",
                str(run / "box_path.csv"),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert "rendered 3 frames (0 without box rows)" in capsys.readouterr().out
        annotated = sorted(out.glob("annotated_*.pgm"))
        assert len(annotated) == 3
        grid = raster.read_pgm(annotated[0])
        assert grid.max() == 255
        rows = tracker.read_box_path_csv(run / "box_path.csv")
        top = int(round(rows[0].center_y - 25.0))
        left = int(round(rows[0].center_x - 25.0))
        right = int(round(rows[0].center_x + 25.0))
        assert (grid[top, left : right + 1] == 255).all()

    def test_missing_rows_warned_not_fatal(self, tmp_path, capsys) -> None:
        scene, cx, cy = make_scene(tmp_path, u=0.0, n_frames=3)
        run = tmp_path / "run"
        main(["track", "--manifest", str(scene.manifest_path), "--box", f"{cx},{cy},25,25", "--out", str(run)])
        csv_path = run / "box_path.csv"
        lines = csv_path.read_text().splitlines()
        csv_path.write_text("\n".join(lines[:-1]) + "\n")
        code = main(
            [
                "render",
                "--manifest",
                str(scene.manifest_path),
                "--track",
                str(csv_path),
                "--out",
                str(tmp_path / "annotated"),
            ]
        )
        captured = capsys.readouterr()
        assert code == 0
        assert "1 without box rows" in captured.out
        assert "warning: no box-path row" in captured.err

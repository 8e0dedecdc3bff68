import json
import subprocess
import sys

import pytest

from netresp.cli import main

TINY_CONFIG = {
    "seed": 5,
    "threads": 2,
    "synth": {
        "grid": [8, 8, 6],
        "n_components": 6,
        "n_domains": 3,
        "timepoints": 40,
        "class_counts": {"AD": 8, "MS": 8, "NR": 4},
        "informative_components": 3,
        "spatial_effect": 1.2,
        "fnc_effect": 0.8,
        "seed": 5,
    },
    "selection": {"beam_width": 3, "inner_folds": 2, "inner_repeats": 2, "seed": 5},
    "evaluation": {"outer_folds": 2, "repeats": 3, "seed": 5},
}


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """Run the full pipeline once; several tests inspect its artifacts."""
    root = tmp_path_factory.mktemp("pipeline")
    config = root / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    out = root / "run"
    for command in ("simulate", "extract", "fnc"):
        assert main([command, "--config", str(config), "--out", str(out)]) == 0
    assert (
        main(["select", "--config", str(config), "--out", str(out), "--features", "sm+fnc"])
        == 0
    )
    assert (
        main(["evaluate", "--config", str(config), "--out", str(out), "--features", "sm+fnc"])
        == 0
    )
    assert main(["report", "--config", str(config), "--out", str(out)]) == 0
    return config, out


class TestPipeline:
    def test_artifacts_exist(self, pipeline_dir):
        _, out = pipeline_dir
        for rel in (
            "dataset/manifest.json",
            "dataset/template.msmx",
            "features/features.json",
            "selection/result.json",
            "selection/trace.csv",
            "eval/report.csv",
            "eval/summary.csv",
            "eval/report.svg",
        ):
            assert (out / rel).exists(), rel

    def test_report_csv_shape(self, pipeline_dir):
        _, out = pipeline_dir
        lines = (out / "eval" / "report.csv").read_text().strip().splitlines()
        assert lines[0] == "fold,repeat,metric,value"
        # 2 folds x 3 repeats x (2 + 3 classes) metrics
        assert len(lines) == 1 + 2 * 3 * 5

    def test_svg_is_wellformed_enough(self, pipeline_dir):
        _, out = pipeline_dir
        svg = (out / "eval" / "report.svg").read_text()
        assert svg.startswith("<svg")
        assert svg.rstrip().endswith("</svg>")
        assert svg.count("<rect") >= 5

    def test_selection_result_contents(self, pipeline_dir):
        _, out = pipeline_dir
        doc = json.loads((out / "selection" / "result.json").read_text())
        assert len(doc["best_set"]) == 3  # one per domain
        assert doc["mode"] == "ssfs"
        assert 0.0 <= doc["best_score"] <= 1.0

    def test_kernel_dump(self, pipeline_dir):
        config, out = pipeline_dir
        rc = main(
            [
                "kernel",
                "--config",
                str(config),
                "--out",
                str(out),
                "--selection",
                "fixed:0,1,2",
            ]
        )
        assert rc == 0
        from netresp.datamodel import read_matrix

        k = read_matrix(out / "kernel" / "kernel.msmx")
        doc = json.loads((out / "kernel" / "subjects.json").read_text())
        assert k.shape == (20, 20)
        assert len(doc["subject_ids"]) == 20

    def test_evaluate_with_fixed_selection(self, pipeline_dir, tmp_path):
        config, out = pipeline_dir
        rc = main(
            [
                "evaluate",
                "--config",
                str(config),
                "--out",
                str(out),
                "--features",
                "sm",
                "--selection",
                "fixed:0,1",
            ]
        )
        assert rc == 0

    def test_extract_from_external_dataset_path(self, pipeline_dir, tmp_path):
        config, out = pipeline_dir
        other = tmp_path / "other"
        rc = main(
            [
                "extract",
                "--config",
                str(config),
                "--out",
                str(other),
                "--template",
                str(out / "dataset"),
            ]
        )
        assert rc == 0
        assert (other / "features" / "features.json").exists()


class TestDeterminism:
    def test_simulate_twice_byte_identical(self, tmp_path):
        config = tmp_path / "config.json"
        cfg = dict(TINY_CONFIG)
        cfg["synth"] = dict(TINY_CONFIG["synth"], class_counts={"AD": 3, "MS": 3})
        config.write_text(json.dumps(cfg))
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", str(config), "--out", str(out_a)]) == 0
        assert main(["simulate", "--config", str(config), "--out", str(out_b)]) == 0
        files_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel

    def test_evaluate_rerun_byte_identical(self, pipeline_dir):
        config, out = pipeline_dir
        args = ["evaluate", "--config", str(config), "--out", str(out), "--features", "sm+fnc"]
        assert main(args) == 0
        report = (out / "eval" / "report.csv").read_bytes()
        summary = (out / "eval" / "summary.csv").read_bytes()
        assert main(args) == 0
        assert (out / "eval" / "report.csv").read_bytes() == report
        assert (out / "eval" / "summary.csv").read_bytes() == summary

    def test_sfs_evaluations_contained_in_ssfs_trace(self, pipeline_dir, tmp_path):
        config, out = pipeline_dir
        out_sfs = tmp_path / "sfs_run"
        out_sfs.mkdir()
        # reuse the extracted features; only the selection stage differs
        (out_sfs / "features").symlink_to(out / "features")
        rc = main(
            [
                "select",
                "--config",
                str(config),
                "--out",
                str(out_sfs),
                "--features",
                "sm+fnc",
                "--selection",
                "sfs",
            ]
        )
        assert rc == 0

        def evaluated(path):
            rows = path.read_text().strip().splitlines()[1:]
            return {tuple(r.split(",")[1].split("|")) for r in rows}

        sfs_sets = evaluated(out_sfs / "selection" / "trace.csv")
        ssfs_sets = evaluated(out / "selection" / "trace.csv")
        assert sfs_sets <= ssfs_sets


class TestExitCodes:
    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"bogus_key": 1}))
        rc = main(["simulate", "--config", str(config), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_unknown_nested_key_exits_2(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"synth": {"sigma_typo": 1}}))
        rc = main(["simulate", "--config", str(config), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "synth.sigma_typo" in capsys.readouterr().err

    def test_missing_config_file_exits_2(self, tmp_path):
        rc = main(
            ["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]
        )
        assert rc == 2

    def test_missing_features_exits_1(self, tmp_path):
        rc = main(["select", "--out", str(tmp_path / "empty")])
        assert rc == 1

    def test_bad_fixed_selection_exits_2(self, pipeline_dir):
        config, out = pipeline_dir
        rc = main(
            [
                "evaluate",
                "--config",
                str(config),
                "--out",
                str(out),
                "--selection",
                "fixed:0,99",
            ]
        )
        assert rc == 2

    def test_invalid_features_flag_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["select", "--out", str(tmp_path), "--features", "everything"])
        assert exc.value.code == 2


class TestHelp:
    @pytest.mark.parametrize(
        "command", ["simulate", "extract", "fnc", "kernel", "select", "evaluate", "report"]
    )
    def test_help_lists_flags(self, command, capsys):
        with pytest.raises(SystemExit) as exc:
            main([command, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for flag in ("--config", "--out", "--seed", "--threads", "--template", "--features", "--selection"):
            assert flag in text

    def test_console_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "netresp.cli", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "simulate" in proc.stdout

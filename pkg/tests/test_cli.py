import json

import numpy as np
import pytest

from bernmix.cli import main
from bernmix.dataset import load_binary_dataset

FAST_FIT = [
    "--iterations", "400",
    "--burn-in", "100",
    "--thin", "3",
    "--chains", "2",
    "--k-max", "4",
]


def write_numeric_table(path, n=16, seed=0, missing_at=(3, "rent")):
    rng = np.random.default_rng(seed)
    columns = ["income", "rent", "broadband"]
    lines = ["unit," + ",".join(columns)]
    for i in range(n):
        vals = [f"{rng.integers(10, 99)}" for _ in columns]
        if missing_at is not None and i == missing_at[0]:
            vals[columns.index(missing_at[1])] = ""
        lines.append(f"t{i:03d}," + ",".join(vals))
    path.write_text("\n".join(lines) + "\n")


def write_patients(path, n=200, seed=0):
    rng = np.random.default_rng(seed)
    profile = rng.integers(1, 3, size=n)
    eta = -0.3 + 0.9 * (profile == 2)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    lines = ["patient_id,died,profile"]
    for i in range(n):
        lines.append(f"p{i},{y[i]},{profile[i]}")
    path.write_text("\n".join(lines) + "\n")


class TestBinarize:
    def test_outputs(self, tmp_path, capsys):
        table = tmp_path / "table.csv"
        write_numeric_table(table)
        out = tmp_path / "out"
        code = main(["binarize", "--table", str(table), "--out", str(out)])
        assert code == 0
        assert (out / "binary_matrix.csv").exists()
        assert (out / "thresholds.json").exists()
        manifest = json.loads((out / "binarize_manifest.json").read_text())
        assert manifest["tool"] == "bernmix"
        assert manifest["n_units"] == 16
        assert manifest["n_missing_cells"] == 1
        data = load_binary_dataset(out / "binary_matrix.csv")
        assert data.n_units == 16
        assert data.column_names == ["income", "rent", "broadband"]
        assert "16 units x 3 variables" in capsys.readouterr().out

    def test_missing_table_is_input_error(self, tmp_path, capsys):
        code = main(
            ["binarize", "--table", str(tmp_path / "absent.csv"), "--out", str(tmp_path)]
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_no_table_anywhere(self, tmp_path, capsys):
        code = main(["binarize", "--out", str(tmp_path)])
        assert code == 1
        assert "--table" in capsys.readouterr().err

    def test_fixed_threshold_from_config(self, tmp_path):
        table = tmp_path / "table.csv"
        write_numeric_table(table, missing_at=None)
        config = tmp_path / "run.toml"
        config.write_text(
            '[thresholds.columns.income]\nkind = "fixed"\nvalue = 50.0\n'
        )
        out = tmp_path / "out"
        code = main(
            [
                "binarize",
                "--table", str(table),
                "--config", str(config),
                "--out", str(out),
            ]
        )
        assert code == 0
        cuts = json.loads((out / "thresholds.json").read_text())
        assert cuts["income"] == {"kind": "fixed", "threshold": 50.0}
        assert cuts["rent"]["kind"] == "median_split"

    def test_bad_config_section(self, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text("[nonsense]\nx = 1\n")
        code = main(["binarize", "--config", str(config), "--out", str(tmp_path)])
        assert code == 1
        assert "unknown config sections" in capsys.readouterr().err


@pytest.fixture
def binary_matrix(tmp_path):
    table = tmp_path / "table.csv"
    write_numeric_table(table)
    out = tmp_path / "bin"
    assert main(["binarize", "--table", str(table), "--out", str(out)]) == 0
    return out / "binary_matrix.csv"


class TestFit:
    def test_pipeline_outputs(self, tmp_path, binary_matrix, capsys):
        out = tmp_path / "fit"
        code = main(
            ["fit", "--data", str(binary_matrix), "--out", str(out), "--seed", "5"]
            + FAST_FIT
        )
        assert code == 0
        for name in (
            "samples.jsonl",
            "profile_assignments.csv",
            "profile_assignments_pre_reclassification.csv",
            "profile_probabilities.csv",
            "profile_weights.csv",
            "fit_manifest.json",
            "profile_probabilities.png",
            "assignment_probabilities.png",
            "k_nonempty.png",
            "imputations.csv",
        ):
            assert (out / name).exists(), name
        assert not (out / ".partial").exists()
        manifest = json.loads((out / "fit_manifest.json").read_text())
        assert manifest["retained_draws"] == 100
        assert manifest["n_missing_cells"] == 1
        assert manifest["seed"] == 5
        assert "fit done" in capsys.readouterr().out

    def test_missing_matrix_is_input_error(self, tmp_path, capsys):
        code = main(["fit", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)])
        assert code == 1
        capsys.readouterr()

    def test_flags_override_config(self, tmp_path, binary_matrix):
        config = tmp_path / "run.toml"
        config.write_text(
            "[mcmc]\niterations = 300\nburn_in = 100\nthin = 3\nchains = 2\nseed = 1\n"
            "[priors]\nk_max = 4\n"
        )
        out = tmp_path / "fit"
        code = main(
            [
                "fit",
                "--data", str(binary_matrix),
                "--config", str(config),
                "--out", str(out),
                "--iterations", "430",
            ]
        )
        assert code == 0
        manifest = json.loads((out / "fit_manifest.json").read_text())
        assert manifest["n_iterations"] == 430
        assert manifest["seed"] == 1
        assert manifest["config"]["_flag_overrides"]["iterations"] == 430
        assert manifest["retained_draws"] == (430 - 100) // 3

    def test_partial_marker_on_compute_failure(
        self, tmp_path, binary_matrix, monkeypatch, capsys
    ):
        def boom(*args, **kwargs):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr("bernmix.cli.run_mc3", boom)
        out = tmp_path / "fit"
        code = main(["fit", "--data", str(binary_matrix), "--out", str(out)] + FAST_FIT)
        assert code == 2
        assert (out / ".partial").exists()
        assert not (out / "samples.jsonl").exists()
        assert "compute error" in capsys.readouterr().err

    def test_same_seed_reruns_identical(self, tmp_path, binary_matrix):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(
                ["fit", "--data", str(binary_matrix), "--out", str(out), "--seed", "9"]
                + FAST_FIT
            )
            assert code == 0
            outs.append(out)
        for name in ("samples.jsonl", "profile_assignments.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


class TestRegress:
    def test_flow(self, tmp_path, capsys):
        patients = tmp_path / "patients.csv"
        write_patients(patients)
        out = tmp_path / "reg"
        code = main(
            [
                "regress",
                "--patients", str(patients),
                "--outcome", "died",
                "--out", str(out),
                "--iterations", "1200",
                "--burn-in", "400",
                "--thin", "2",
            ]
        )
        assert code == 0
        for name in (
            "odds_ratios.csv",
            "forest.json",
            "odds_ratios.png",
            "regress_manifest.json",
        ):
            assert (out / name).exists(), name
        manifest = json.loads((out / "regress_manifest.json").read_text())
        assert manifest["design_columns"] == ["intercept", "profile_2"]
        forest = json.loads((out / "forest.json").read_text())
        assert forest["reference_line"] == 1.0
        assert "regress done" in capsys.readouterr().out

    def test_profile_reference_from_config(self, tmp_path):
        patients = tmp_path / "patients.csv"
        write_patients(patients)
        config = tmp_path / "run.toml"
        config.write_text(
            "[regression]\n"
            f'patients = "{patients}"\n'
            'outcome = "died"\n'
            'profile_reference = "2"\n'
            "iterations = 800\nburn_in = 300\nthin = 2\n"
        )
        out = tmp_path / "reg"
        code = main(["regress", "--config", str(config), "--out", str(out)])
        assert code == 0
        manifest = json.loads((out / "regress_manifest.json").read_text())
        assert manifest["design_columns"] == ["intercept", "profile_1"]

    def test_missing_outcome_column(self, tmp_path, capsys):
        patients = tmp_path / "patients.csv"
        write_patients(patients)
        code = main(
            ["regress", "--patients", str(patients), "--outcome", "absent",
             "--out", str(tmp_path / "reg")]
        )
        assert code == 1
        assert "not in header" in capsys.readouterr().err

    def test_single_profile_is_input_error(self, tmp_path, capsys):
        patients = tmp_path / "patients.csv"
        patients.write_text(
            "patient_id,died,profile\n"
            + "\n".join(f"p{i},{i % 2},1" for i in range(20))
            + "\n"
        )
        code = main(
            ["regress", "--patients", str(patients), "--outcome", "died",
             "--out", str(tmp_path / "reg")]
        )
        assert code == 1
        capsys.readouterr()


class TestVerify:
    def test_quick_passes(self, capsys):
        code = main(["verify", "--quick"])
        out = capsys.readouterr().out
        assert code == 0
        assert "6/6 checks passed" in out
        assert out.count("PASS") == 6


class TestExportGeojson:
    def write_inputs(self, tmp_path, geoid_key="GEOID", drop_feature=False):
        assignments = tmp_path / "profile_assignments.csv"
        assignments.write_text(
            "unit_id,profile,prob_profile_1,prob_profile_2\n"
            "a,1,0.900000,0.100000\n"
            "b,2,0.200000,0.800000\n"
        )
        features = [
            {
                "type": "Feature",
                "properties": {geoid_key: uid},
                "geometry": {"type": "Point", "coordinates": [0.0, 0.0]},
            }
            for uid in (["a"] if drop_feature else ["a", "b"])
        ]
        boundaries = tmp_path / "tracts.geojson"
        boundaries.write_text(
            json.dumps({"type": "FeatureCollection", "features": features})
        )
        return assignments, boundaries

    def test_join(self, tmp_path, capsys):
        assignments, boundaries = self.write_inputs(tmp_path)
        out = tmp_path / "joined.geojson"
        code = main(
            ["export-geojson", "--boundaries", str(boundaries),
             "--assignments", str(assignments), "--out", str(out)]
        )
        assert code == 0
        joined = json.loads(out.read_text())
        props = [f["properties"] for f in joined["features"]]
        assert props[0]["profile"] == 1
        assert props[1]["profile"] == 2
        assert props[0]["prob_profile_1"] == pytest.approx(0.9)
        assert "annotated 2 features" in capsys.readouterr().out

    def test_unmatched_units_warn(self, tmp_path, capsys):
        assignments, boundaries = self.write_inputs(tmp_path, drop_feature=True)
        out = tmp_path / "joined.geojson"
        code = main(
            ["export-geojson", "--boundaries", str(boundaries),
             "--assignments", str(assignments), "--out", str(out)]
        )
        assert code == 0
        assert "no boundary feature" in capsys.readouterr().err

    def test_wrong_key(self, tmp_path, capsys):
        assignments, boundaries = self.write_inputs(tmp_path, geoid_key="FIPS")
        code = main(
            ["export-geojson", "--boundaries", str(boundaries),
             "--assignments", str(assignments),
             "--out", str(tmp_path / "joined.geojson")]
        )
        assert code == 1
        assert "wrong key?" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "bernmix" in capsys.readouterr().out


@pytest.mark.slow
def test_census_scale_pipeline_smoke(tmp_path, capsys):
    """binarize -> fit -> export-geojson at tract-table scale (1400 x 8)."""
    rng = np.random.default_rng(3)
    n, p = 1400, 8
    columns = [f"v{j}" for j in range(p)]
    lines = ["tract," + ",".join(columns)]
    for i in range(n):
        vals = [f"{v:.2f}" for v in rng.normal(50, 12, size=p)]
        if rng.random() < 0.01:
            vals[int(rng.integers(p))] = ""
        lines.append(f"25{i:09d}," + ",".join(vals))
    (tmp_path / "tracts.csv").write_text("\n".join(lines) + "\n")

    bin_dir = tmp_path / "bin"
    assert main(
        ["binarize", "--table", str(tmp_path / "tracts.csv"), "--out", str(bin_dir)]
    ) == 0

    fit_dir = tmp_path / "fit"
    code = main(
        [
            "fit",
            "--data", str(bin_dir / "binary_matrix.csv"),
            "--out", str(fit_dir),
            "--seed", "3",
            "--iterations", "1200",
            "--burn-in", "400",
            "--thin", "4",
            "--chains", "4",
            "--k-max", "15",
        ]
    )
    assert code == 0
    assert (fit_dir / "profile_assignments.csv").exists()

    features = [
        {
            "type": "Feature",
            "properties": {"GEOID": f"25{i:09d}"},
            "geometry": {"type": "Point", "coordinates": [0.0, 0.0]},
        }
        for i in range(n)
    ]
    (tmp_path / "bounds.geojson").write_text(
        json.dumps({"type": "FeatureCollection", "features": features})
    )
    out = tmp_path / "joined.geojson"
    code = main(
        ["export-geojson", "--boundaries", str(tmp_path / "bounds.geojson"),
         "--assignments", str(fit_dir / "profile_assignments.csv"),
         "--out", str(out)]
    )
    assert code == 0
    joined = json.loads(out.read_text())
    assert all("profile" in f["properties"] for f in joined["features"])
    capsys.readouterr()

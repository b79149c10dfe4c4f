"""CLI harness: plant files, experiment configs, presets, exit codes."""

import json

import numpy as np
import pytest

from volback.gapcascade import pdae_b_family
from volback.harness import (
    ConfigError,
    PlantParseError,
    build_kernel_table,
    load_plant,
    main,
    parse_config,
    parse_plant,
    run_preset,
)
from volback.simplex import SimplexPoint


@pytest.fixture()
def out_root(tmp_path, monkeypatch):
    root = tmp_path / "out"
    monkeypatch.setenv("VOLBACK_OUTPUT_ROOT", str(root))
    return root


class TestParsePlant:
    def test_quadratic_example_file(self, tmp_path):
        f = tmp_path / "plant.txt"
        f.write_text(
            "# quadratic integral example\n"
            "D = 1\n"
            "rho = 1\n"
            "2 0,0 1\n"
        )
        plant = parse_plant(f)
        assert plant.family.entries == pdae_b_family().entries
        assert plant.series.growth == (1.0, 1.0)
        assert plant.n_max == 2

    def test_empty_is_zero_plant(self, tmp_path):
        f = tmp_path / "empty.txt"
        f.write_text("# nothing here\n\n")
        plant = parse_plant(f)
        assert plant.family.is_zero()

    def test_low_order_names_line(self, tmp_path):
        f = tmp_path / "bad.txt"
        f.write_text("2 0,0 1\n1 0 1\n")
        with pytest.raises(PlantParseError, match="line 2"):
            parse_plant(f)

    def test_bad_rational_names_line(self, tmp_path):
        f = tmp_path / "bad.txt"
        f.write_text("2 0,0 one\n")
        with pytest.raises(PlantParseError, match="line 1"):
            parse_plant(f)

    def test_multi_index_arity_checked(self, tmp_path):
        f = tmp_path / "bad.txt"
        f.write_text("3 0,0 1\n")
        with pytest.raises(PlantParseError, match="line 1"):
            parse_plant(f)

    def test_duplicate_entries_summed(self, tmp_path):
        f = tmp_path / "dup.txt"
        f.write_text("2 0,0 1\n2 0,0 1/2\n")
        plant = parse_plant(f)
        poly = plant.family.get(2, (0, 0))
        assert poly(0.3) == pytest.approx(1.5)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_plant(tmp_path / "nope.txt")


class TestLoadPlant:
    def test_builtin_pdae(self):
        plant = load_plant("pdae")
        assert plant.source == "builtin:pdae"
        assert plant.n_max == 2

    def test_builtin_zero(self):
        plant = load_plant("zero")
        assert plant.family.is_zero()

    def test_unknown_descriptor(self):
        with pytest.raises(ConfigError):
            load_plant("not-a-plant")


class TestKernelRoutes:
    def test_routes_agree_on_builtin(self):
        plant = load_plant("pdae")
        by_cascade = build_kernel_table(plant, 3, route="cascade")
        by_recursion = build_kernel_table(plant, 3, route="recursion")
        rng = np.random.default_rng(0)
        for n in (2, 3):
            for _ in range(20):
                xi = tuple(sorted(rng.uniform(0, 1, n), reverse=True))
                pt = SimplexPoint(1.0, xi)
                a = by_cascade[n].eval_point(pt)
                b = by_recursion[n].eval_point(pt)
                assert a == pytest.approx(b, abs=1e-6)

    def test_unknown_route(self):
        with pytest.raises(ConfigError):
            build_kernel_table(load_plant("pdae"), 3, route="magic")

    def test_low_cap_rejected(self):
        with pytest.raises(ConfigError):
            build_kernel_table(load_plant("pdae"), 1)


class TestParseConfig:
    def test_full_config(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text(
            "plant = pdae\n"
            "controller = order-3\n"
            "mesh_points = 101\n"
            "t_end = 1/2\n"
            "check_mild_solution = true\n"
        )
        spec = parse_config(f)
        assert spec.controller == "order-3"
        assert spec.overrides == {"mesh_points": 101, "t_end": 0.5}
        assert spec.check_mild_solution

    def test_unknown_key_names_line(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("plant = pdae\nwibble = 3\n")
        with pytest.raises(ConfigError, match="line 2"):
            parse_config(f)

    def test_bad_number_reported(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("mesh_points = many\n")
        with pytest.raises(ConfigError, match="mesh_points"):
            parse_config(f)


class TestPresets:
    def test_unknown_preset_rejected(self, out_root):
        with pytest.raises(ConfigError):
            run_preset("fig9z")

    def test_kernels_preset(self, out_root):
        assert run_preset("kernels") == 0
        doc = json.loads((out_root / "kernels" / "consistency.json").read_text())
        assert doc["consistency"]["passed"]
        assert doc["consistency"]["max_abs_vs_closed_form"] < 1e-10

    def test_gains_preset(self, out_root):
        assert run_preset("gains") == 0
        doc = json.loads((out_root / "gains" / "chosen.json").read_text())
        assert doc["s"] == pytest.approx(0.186091, abs=1e-5)
        assert doc["rho_L"] == pytest.approx(0.081476, abs=1e-5)
        assert doc["ell_at_s"] == pytest.approx(0.5, abs=1e-9)

    def test_invert_demo_preset(self, out_root):
        assert run_preset("invert-demo") == 0
        doc = json.loads((out_root / "invert-demo" / "metadata.json").read_text())
        assert doc["residual"] < 1e-8


class TestMain:
    def test_run_fig1a(self, out_root, capsys):
        assert main(["run", "fig1a"]) == 0
        meta = json.loads((out_root / "fig1a" / "metadata.json").read_text())
        assert meta["controller"] == "open-loop"
        assert 1.01 <= meta["blow_up"] <= 1.11
        assert "timestamp" not in meta

    def test_simulate_subcommand(self, out_root, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(
            "plant = pdae\ncontroller = order-2\nmesh_points = 101\nt_end = 1/4\n"
            "output_dir = quick\n"
        )
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert (out_root / "quick" / "series.csv").exists()

    def test_bad_config_exits_2(self, out_root, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("controller = warp-drive\n")
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_plant_exits_2(self, out_root, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("plant = /no/such/file\n")
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_kernels_subcommand_with_file(self, out_root, tmp_path):
        plant = tmp_path / "plant.txt"
        plant.write_text("2 0,0 1\n")
        assert main(["kernels", "--plant", str(plant), "--order", "3"]) == 0

    def test_explicit_output_flag_wins(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VOLBACK_OUTPUT_ROOT", str(tmp_path / "ignored"))
        chosen = tmp_path / "chosen"
        assert main(["--output", str(chosen), "run", "gains"]) == 0
        assert (chosen / "gains" / "gains.csv").exists()
        assert not (tmp_path / "ignored").exists()


class TestDeterminism:
    def test_fig1b_reruns_identically(self, out_root):
        assert main(["run", "fig1b"]) == 0
        first = (out_root / "fig1b" / "series.csv").read_bytes()
        assert main(["run", "fig1b"]) == 0
        assert (out_root / "fig1b" / "series.csv").read_bytes() == first

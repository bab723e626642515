import numpy as np
import pytest

from eit_opt import ConfigError, ExperimentConfig, parse_config, serialize_config


class TestDefaults:
    def test_empty_text_gives_benchmark_setup(self):
        config = parse_config("")
        assert config.mesh_radius == 0.1
        assert config.mesh_boundary_vertices == 96
        assert config.electrode_count == 16
        assert config.electrode_half_width == 0.12
        assert config.electrode_impedance == 0.1
        assert config.phantom_background == 0.2
        assert config.phantom_inclusion == 0.4
        assert len(config.phantom_disks) == 4
        assert config.initial_sigma == 0.3
        assert np.array_equal(config.initial_voltage_vector(), np.array([-1.0, 1.0] * 8))
        assert abs(config.current_pattern().sum()) <= 1e-15
        assert config.opt.tol == 1e-6

    def test_default_currents_match_benchmark_table(self):
        config = ExperimentConfig()
        hundredths = np.round(100.0 * np.asarray(config.currents)).astype(int)
        assert list(hundredths) == [-3, 2, 3, -7, 6, -1, -4, 2, 4, 3, -5, 4, 3, -5, 2, -4]


class TestParsing:
    def test_key_values_and_comments(self):
        text = """
        # comment line
        mesh.boundary_vertices = 48
        opt.beta = 0.3162   # trailing comment
        opt.use_pca = true
        layout.half_width = 0.1
        """
        config = parse_config(text)
        assert config.mesh_boundary_vertices == 48
        assert config.opt.beta == 0.3162
        assert config.opt.use_pca is True
        assert config.electrode_half_width == 0.1

    def test_unknown_key_line_diagnostic(self):
        with pytest.raises(ConfigError, match="line 2.*unknown key"):
            parse_config("seed = 1\nnot.a.key = 3\n")

    def test_bad_value_diagnostic(self):
        with pytest.raises(ConfigError, match="line 1.*'opt.max_iters'"):
            parse_config("opt.max_iters = soon\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate key"):
            parse_config("seed = 1\nseed = 2\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("just some text\n")

    def test_vector_length_checked(self):
        with pytest.raises(ConfigError, match="currents"):
            parse_config("currents = 0.1, -0.1\n")

    def test_zero_sum_checked(self):
        values = ", ".join(["0.01"] * 16)
        with pytest.raises(ConfigError, match="sum to zero"):
            parse_config(f"currents = {values}\n")

    def test_mesh_divisibility_checked(self):
        with pytest.raises(ConfigError, match="boundary_vertices"):
            parse_config("mesh.boundary_vertices = 50\n")

    def test_disks_parse(self):
        config = parse_config("phantom.disks = 0 0 0.01; 0.02,0.03,0.004\n")
        assert config.phantom_disks == ((0.0, 0.0, 0.01), (0.02, 0.03, 0.004))

    def test_opt_bounds_pair(self):
        config = parse_config("opt.bounds = 0.05 0.7\n")
        assert config.opt.bounds == (0.05, 0.7)


class TestRoundTrip:
    def test_serialize_parse_fixed_point(self):
        config = parse_config("opt.beta = 0.3162\nseed = 9\nopt.use_pca = yes\n")
        text = serialize_config(config)
        again = serialize_config(parse_config(text))
        assert text == again

    def test_defaults_round_trip(self):
        text = serialize_config(ExperimentConfig())
        config = parse_config(text)
        assert serialize_config(config) == text

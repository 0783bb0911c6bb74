import pytest

from v2tex.config import ConfigError, RunConfig, dump_config, load_config, parse_config


class TestParse:
    def test_defaults(self):
        c = load_config(None)
        assert c == RunConfig()
        assert c.steerable.num_channels == 60
        assert c.train_config.batch_size == 275 and c.loss_config.lam == 1.0

    def test_values_comments_aliases(self):
        c = parse_config("""
            # run settings
            lambda = 2.5      # orthogonality weight
            lr = 0.01
            batch_size = 32
            rotations = yes
            gamma = 0.2
        """)
        assert (c.lam, c.lr, c.batch, c.rotations, c.shrinkage) == (2.5, 0.01, 32, True, 0.2)

    def test_round_trip(self):
        c = RunConfig(lr=0.02, epochs=3, uniform_prior=True)
        assert parse_config(dump_config(c)) == c

    @pytest.mark.parametrize("text, msg", [
        ("bogus = 1", "unknown key"),
        ("lr 0.1", "key = value"),
        ("epochs = two", "cannot parse"),
        ("rotations = maybe", "boolean"),
        ("lr = -1", "learning_rate"),
        ("batch = 1", "batch_size"),
        ("shrinkage = 1.5", "shrinkage"),
        ("orientations = 1", "num_orientations"),
        ("grid_factor = 3", "power of two"),
        ("families = 1", "families"),
        ("image_size = 30", "multiple"),
        ("lam = -0.5", "lambda"),
    ])
    def test_rejects(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_config(text)

    def test_line_numbers_in_errors(self):
        with pytest.raises(ConfigError, match=r"cfg:3"):
            parse_config("lr = 0.1\n\nnope = 2\n", "cfg")

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "none.cfg")

    def test_overrides_validate(self):
        c = RunConfig().with_overrides(lr=0.5, epochs=None)
        assert c.lr == 0.5 and c.epochs == 1
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(batch=0)

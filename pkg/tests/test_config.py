import pytest

from deepicf.config import config_to_text, load_config, parse_config_lines
from deepicf.errors import ConfigError
from deepicf.model import Variant


def parse(text):
    return parse_config_lines(text.splitlines())


def test_full_file():
    cfg = parse("""
        variant = DeepICF_A
        k = 16
        k_prime = 8
        L = 2
        layer_sizes = 16,8
        alpha = 0
        beta = 0.7
        lambda = 1e-6
        NS = 4
        lr = 0.01
        epochs = 50
        seed = 123
        batch_size = 2
        pretrain = true
        pretrain_epochs = 30
        eval_every = 10
        reg_embeddings = false
    """)
    assert cfg.variant is Variant.DEEPICF_A
    assert cfg.layer_sizes == (16, 8)
    assert cfg.l2 == 1e-6
    assert cfg.num_negatives == 4
    assert cfg.pretrain and cfg.pretrain_epochs == 30
    assert cfg.eval_every == 10 and cfg.batch_size == 2


def test_defaults_applied():
    cfg = parse("variant = FISM")
    assert cfg.k == 16
    assert cfg.num_layers == 0
    assert cfg.num_negatives == 4
    assert cfg.lr == 0.01
    assert not cfg.pretrain


def test_layer_sizes_imply_depth():
    cfg = parse("variant = DeepICF\nk = 16\nlayer_sizes = 12,6,4")
    assert cfg.num_layers == 3
    assert cfg.layer_sizes == (12, 6, 4)


def test_comments_and_blanks_ignored():
    cfg = parse("# a comment\nvariant = FISM\n\nk = 8  # trailing\n")
    assert cfg.k == 8


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigError, match="unknown key 'kk'"):
        parse("variant = FISM\nkk = 3")


def test_duplicate_key_is_an_error():
    with pytest.raises(ConfigError, match="duplicate"):
        parse("variant = FISM\nk = 3\nk = 4")


def test_missing_variant_is_an_error():
    with pytest.raises(ConfigError, match="variant"):
        parse("k = 8")


def test_bad_value_reports_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse("variant = FISM\nk = eight")


def test_unknown_variant_lists_valid_ones():
    with pytest.raises(ConfigError, match="FISM, DeepICF, DeepICF_A"):
        parse("variant = SVD")


def test_round_trip_through_text(tmp_path):
    cfg = parse("variant = DeepICF\nk = 12\nL = 2\nalpha = 0.4\nseed = 9")
    path = tmp_path / "model.cfg"
    path.write_text(config_to_text(cfg))
    again = load_config(path)
    assert again == cfg

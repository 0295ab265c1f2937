from dataclasses import replace

import numpy as np
import pytest

from bdq import harness as H
from bdq import synth
from bdq.encoder import ABLATION_MASKS, EncoderParams
from bdq.trainer import TrainConfig, ValidationResult

TINY = synth.SynthConfig(num_actions=2, num_identities=3, clips_per_pair=4, T=5, size=32)
CFG = TrainConfig(epochs=1, t=5, batch_size=8)


@pytest.fixture(scope="module")
def ds():
    return synth.generate(TINY)


class TestRows:
    def test_empty_label_rejected(self):
        with pytest.raises(ValueError, match="method"):
            H.TradeoffRow("  ", 0.5, 0.5)

    @pytest.mark.parametrize("acc", [-0.1, 1.1])
    def test_range_checked(self, acc):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            H.TradeoffRow("x", acc, 0.5)

    def test_report_round_trips(self, tmp_path):
        rows = [H.TradeoffRow("raw", 1.0, 0.9, "abc", 0), H.TradeoffRow("B+D+Q", 0.95, 1 / 3, "def", 1)]
        table, plot = H.tradeoff_report(rows, tmp_path)
        back = H.read_rows(table)
        assert len(back) == 2
        assert back[1]["method"] == "B+D+Q"
        assert float(back[1]["privacy_acc"]) == 1 / 3
        lines = plot.read_text().splitlines()
        assert lines[0].split("\t") == ["x_privacy_acc", "y_action_acc", "label"]
        assert lines[2].split("\t") == [repr(1 / 3), "0.95", "B+D+Q"]

    def test_report_needs_rows(self, tmp_path):
        with pytest.raises(ValueError, match="no rows"):
            H.tradeoff_report([], tmp_path)

    def test_config_hash_is_order_free(self):
        assert H.config_hash({"a": 1, "b": 2}) == H.config_hash({"b": 2, "a": 1})
        assert H.config_hash({"a": 1}) != H.config_hash({"a": 2})


def test_fresh_init_guard():
    res = ValidationResult(0.5, 0.5, init_fingerprints=("aaa", "bbb"))
    H.check_fresh(res, ("ccc",))
    with pytest.raises(H.FreshInitError):
        H.check_fresh(res, ("bbb",))


def test_psnr():
    t = np.zeros((2, 1, 2, 4, 4))
    p = t.copy()
    p[0] += 0.1
    p[1] += 0.01
    np.testing.assert_allclose(H.psnr(p, t), [20.0, 40.0])


def test_downsample_transform():
    x = np.random.default_rng(0).random((2, 1, 3, 32, 32)).astype(np.float32)
    assert H.downsample_transform(32)(x) is x
    y = H.downsample_transform(8)(x)
    assert y.shape == (2, 1, 3, 8, 8)
    np.testing.assert_array_equal(y[..., 0, 0], x[..., 0, 0])
    with pytest.raises(ValueError, match="larger"):
        H.downsample_transform(64)(x)


def test_shuffle_transform_permutes_each_clip():
    x = np.arange(3 * 6, dtype=np.float32).reshape(3, 1, 6, 1, 1) * np.ones((1, 1, 1, 2, 2), np.float32)
    y = H.shuffle_transform(0)(x)
    assert y.shape == x.shape
    for i in range(3):
        np.testing.assert_array_equal(np.sort(y[i, 0, :, 0, 0]), x[i, 0, :, 0, 0])
    assert not np.array_equal(y, x)
    np.testing.assert_array_equal(H.shuffle_transform(0)(x), y)


def test_adversary_specs_are_distinct_and_held_out():
    specs = H.adversary_specs(10)
    assert len(specs) >= 3
    assert len({s.name for s in specs}) == len(specs)
    from bdq.nn.layers import privacy_net_spec
    assert all(s.layers != privacy_net_spec(10).layers for s in specs)


def test_probe_needs_three_adversaries(ds):
    with pytest.raises(ValueError, match="at least 3"):
        H.multi_adversary_probe(EncoderParams.default(), ds, H.adversary_specs(3)[:2], CFG)


def test_ablation_grid_small(ds, tmp_path):
    rows = H.ablation_grid(EncoderParams.default(), ds, CFG, masks=ABLATION_MASKS[:2], out_dir=tmp_path)
    assert [r.method for r in rows] == ["B", "D"]
    assert len(H.read_rows(tmp_path / "summary.csv")) == 2


def test_alpha_sweep_records_boundaries(ds, tmp_path):
    cells = H.alpha_sweep(ds, [0.0, 1.0], CFG, tmp_path)
    assert [c.alpha for c in cells] == [0.0, 1.0]
    assert all(len(c.boundaries) == 15 and c.boundaries == sorted(c.boundaries) for c in cells)
    summary = H.read_rows(tmp_path / "summary.csv")
    assert len(summary) == 2 and "b14" in summary[0]
    assert (tmp_path / "alpha_1" / "log.csv").exists()
    assert (tmp_path / "alpha_1" / "config.json").exists()


def test_downsample_baseline_rows(ds):
    rows = H.downsample_baseline(ds, [32, 4], CFG)
    assert [r.method for r in rows] == ["down32", "down4"]


def test_attack_pass_through_sanity(ds):
    acfg = H.AttackConfig(epochs=1, frames=4, width=4)
    # shapes line up for both the identity and the difference-based encoder
    _, (zv, yv), score = H.attack_transform(lambda x: x, ds, CFG, acfg, shift=False)
    assert zv.shape == yv.shape and np.isfinite(score)


def test_attack_writes_samples(ds, tmp_path):
    acfg = H.AttackConfig(epochs=1, frames=4, width=4)
    res = H.reconstruction_attack(EncoderParams.default(), ds, CFG, acfg, out_dir=tmp_path)
    assert np.isfinite(res.psnr_trained) and np.isfinite(res.psnr_reference)
    assert (tmp_path / "trained" / "sample0_reconstructed.bdqv").exists()
    assert (tmp_path / "summary.csv").exists()

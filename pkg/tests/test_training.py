import itertools

import numpy as np
import pytest

from debatelm.errors import ConfigError, NumericError
from debatelm.masking import PackingConfig
from debatelm.model import init_params
from debatelm.training import (
    PretrainConfig,
    evaluate_masked_ppl,
    load_checkpoint,
    pretrain,
    pretrain_batches,
    save_checkpoint,
    tokenize_documents,
)


def quick_cfg(toy_packing, steps=20, **kwargs):
    defaults = dict(steps=steps, batch_size=8, peak_lr=1e-3, warmup_steps=2,
                    packing=toy_packing, seed=0, mode="scr", dtype="float32")
    defaults.update(kwargs)
    return PretrainConfig(**defaults)


class TestPretrain:
    def test_zero_steps_returns_initialization(self, memo_token_ids, memo_vocab, toy_config, toy_packing):
        cfg = quick_cfg(toy_packing, steps=0)
        result = pretrain(memo_token_ids, toy_config, cfg, memo_vocab)
        reference = init_params(toy_config, seed=0, dtype=np.float32)
        for name, tensor in reference.items():
            assert np.array_equal(result.params[name], tensor)
        assert result.step_trace == []

    def test_deterministic_runs(self, memo_token_ids, memo_vocab, toy_config, toy_packing):
        cfg = quick_cfg(toy_packing, steps=15)
        r1 = pretrain(memo_token_ids, toy_config, cfg, memo_vocab)
        r2 = pretrain(memo_token_ids, toy_config, cfg, memo_vocab)
        assert r1.step_trace == r2.step_trace
        for name in r1.params:
            assert np.array_equal(r1.params[name], r2.params[name])

    def test_trace_records_lr_and_phase(self, memo_token_ids, memo_vocab, toy_config, toy_packing):
        cfg = quick_cfg(toy_packing, steps=10)
        result = pretrain(memo_token_ids, toy_config, cfg, memo_vocab)
        assert [row["step"] for row in result.step_trace] == list(range(1, 11))
        assert all(row["max_len"] == row["expected_max_len"] for row in result.step_trace)
        switch = [row["max_len"] for row in result.step_trace]
        assert switch[:8] == [toy_packing.max_len_phase1] * 8
        assert switch[8:] == [toy_packing.max_len_phase2] * 2

    def test_eval_trace(self, memo_token_ids, memo_vocab, toy_config, toy_packing):
        cfg = quick_cfg(toy_packing, steps=10, eval_every=5)
        result = pretrain(memo_token_ids[:80], toy_config, cfg, memo_vocab,
                          holdout_token_ids=memo_token_ids[80:])
        assert [e["step"] for e in result.eval_trace] == [5, 10]
        assert all(e["ppl"] > 0 for e in result.eval_trace)

    def test_numeric_abort_keeps_last_checkpoint(self, tmp_path, memo_token_ids, memo_vocab,
                                                 toy_config, toy_packing):
        cfg = quick_cfg(toy_packing, steps=40, peak_lr=1e18, warmup_steps=1,
                        grad_clip=None, checkpoint_every=1)
        with np.errstate(all="ignore"), pytest.raises(NumericError, match="retained"):
            pretrain(memo_token_ids, toy_config, cfg, memo_vocab, checkpoint_dir=tmp_path)
        saved = sorted(tmp_path.glob("step*.npz"))
        assert saved, "at least one good checkpoint must remain"
        assert not (tmp_path / "final.npz").exists()
        params, _, _, _ = load_checkpoint(saved[-1])
        assert all(np.isfinite(t).all() for t in params.values())


class TestContinuedPretraining:
    def test_cont_loads_donor_params(self, tmp_path, memo_token_ids, memo_vocab,
                                     toy_config, toy_packing, donor_params):
        ckpt = tmp_path / "donor.npz"
        save_checkpoint(ckpt, donor_params, toy_config, None, 300, memo_vocab.content_hash())
        cfg = quick_cfg(toy_packing, steps=0, mode="cont", init_checkpoint=str(ckpt))
        result = pretrain(memo_token_ids, toy_config, cfg, memo_vocab)
        for name in donor_params:
            assert np.array_equal(result.params[name], donor_params[name])

    def test_cont_rejects_other_vocab(self, tmp_path, memo_token_ids, memo_vocab,
                                      toy_config, toy_packing, donor_params):
        ckpt = tmp_path / "donor.npz"
        save_checkpoint(ckpt, donor_params, toy_config, None, 300, "not-the-same-hash")
        cfg = quick_cfg(toy_packing, steps=0, mode="cont", init_checkpoint=str(ckpt))
        with pytest.raises(ConfigError, match="vocabulary"):
            pretrain(memo_token_ids, toy_config, cfg, memo_vocab)

    def test_cont_requires_checkpoint(self, toy_packing):
        with pytest.raises(ConfigError):
            quick_cfg(toy_packing, mode="cont").validate()


class TestCheckpointContainer:
    def test_round_trip_with_optimizer(self, tmp_path, memo_token_ids, memo_vocab,
                                       toy_config, toy_packing):
        cfg = quick_cfg(toy_packing, steps=5)
        result = pretrain(memo_token_ids, toy_config, cfg, memo_vocab)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, result.params, toy_config, result.opt_state, 5,
                        memo_vocab.content_hash())
        params, config, opt, meta = load_checkpoint(path)
        assert config.as_dict() == toy_config.as_dict()
        assert meta["step"] == 5
        assert meta["vocab_hash"] == memo_vocab.content_hash()
        assert opt.t == 5
        for name in result.params:
            assert np.array_equal(params[name], result.params[name])
            assert np.array_equal(opt.m[name], result.opt_state.m[name])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_checkpoint(tmp_path / "nope.npz")

    def test_atomic_write_leaves_no_tmp(self, tmp_path, toy_config, memo_vocab):
        params = init_params(toy_config, seed=0)
        path = tmp_path / "c.npz"
        save_checkpoint(path, params, toy_config, None, 0, memo_vocab.content_hash())
        assert path.exists()
        assert not list(tmp_path.glob("*.tmp"))


class TestEvaluation:
    def test_deterministic(self, memo_token_ids, memo_vocab, toy_config, toy_packing, donor_params):
        a = evaluate_masked_ppl(donor_params, toy_config, memo_token_ids, toy_packing)
        b = evaluate_masked_ppl(donor_params, toy_config, memo_token_ids, toy_packing)
        assert a == b
        assert a["ppl"] == pytest.approx(np.exp(a["mean_nll"]))

    def test_empty_rejected(self, memo_vocab, toy_config, toy_packing, donor_params):
        with pytest.raises(ConfigError):
            evaluate_masked_ppl(donor_params, toy_config, [], toy_packing)


class TestBatchGenerator:
    def test_cache_equals_training_batches(self, memo_token_ids, toy_packing):
        # The build-data cache and the pretraining loop share this
        # generator; two iterations must agree batch for batch.
        gen1 = pretrain_batches(memo_token_ids, toy_packing, 12, 8, 800)
        gen2 = pretrain_batches(memo_token_ids, toy_packing, 12, 8, 800)
        for (s1, m1, e1, r1, b1), (s2, m2, e2, r2, b2) in zip(gen1, gen2):
            assert (s1, m1, e1) == (s2, m2, e2)
            assert np.array_equal(r1, r2)
            assert np.array_equal(b1.input_ids, b2.input_ids)
            assert np.array_equal(b1.labels, b2.labels)

    def test_phase_lengths(self, memo_token_ids, toy_packing):
        lens = [m for _, m, _, _, _ in pretrain_batches(memo_token_ids, toy_packing, 10, 8, 800)]
        assert lens == [toy_packing.max_len_phase1] * 8 + [toy_packing.max_len_phase2] * 2

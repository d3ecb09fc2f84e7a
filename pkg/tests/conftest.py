import numpy as np
import pytest

from debatelm.corpus import build_corpus
from debatelm.masking import PackingConfig
from debatelm.model import EncoderConfig
from debatelm.synth import generate_debate_corpus, generate_memorization_sentences
from debatelm.training import PretrainConfig, pretrain, tokenize_documents
from debatelm.wordpiece import train_vocabulary


@pytest.fixture(scope="session")
def debate_corpus():
    return build_corpus(generate_debate_corpus(seed=0))


@pytest.fixture(scope="session")
def memo_sentences():
    return generate_memorization_sentences(100, seed=0)


@pytest.fixture(scope="session")
def memo_vocab(memo_sentences):
    # Budget above closure: every word becomes a single token.
    return train_vocabulary(memo_sentences, 1200, "uncased")


@pytest.fixture(scope="session")
def memo_token_ids(memo_sentences, memo_vocab):
    return tokenize_documents(memo_sentences, memo_vocab)


@pytest.fixture(scope="session")
def toy_config(memo_vocab):
    return EncoderConfig(layers=2, hidden=64, heads=4, intermediate=256,
                         max_position=64, vocab_size=memo_vocab.size, dropout=0.0)


@pytest.fixture(scope="session")
def toy_packing():
    return PackingConfig(max_len_phase1=16, max_len_phase2=32, mask_prob=0.15, seed=0)


@pytest.fixture(scope="session")
def donor_params(memo_token_ids, memo_vocab, toy_config, toy_packing):
    """A briefly pretrained toy encoder shared by fine-tuning tests."""
    cfg = PretrainConfig(steps=300, batch_size=32, peak_lr=3e-3, warmup_steps=30,
                         packing=toy_packing, seed=0, mode="scr", dtype="float32")
    return pretrain(memo_token_ids, toy_config, cfg, memo_vocab).params

"""Build a tiny local checkpoint once per test session: a randomly
initialized two-layer causal transformer over a character-level vocabulary
(digits, operators, letters, and think/eos markers).  Small enough that the
whole protocol suite runs on CPU in seconds; no network access needed.
"""

from __future__ import annotations

import pytest
import torch
from tokenizers import Regex, Tokenizer, models, pre_tokenizers
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

CHARS = list("0123456789+-*/= .abcdefghijklmnopqrstuvwxyz")
SPECIALS = ["<eos>", "<think>", "</think>", "<unk>"]


def build_checkpoint(path, seed: int = 0) -> str:
    vocab = {c: i for i, c in enumerate(CHARS)}
    for special in SPECIALS:
        vocab[special] = len(vocab)
    tokenizer = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tokenizer.pre_tokenizer = pre_tokenizers.Split(Regex("."), behavior="isolated")
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tokenizer,
        eos_token="<eos>",
        unk_token="<unk>",
        additional_special_tokens=["<think>", "</think>"],
    )
    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=len(vocab),
        n_embd=32,
        n_layer=2,
        n_head=2,
        n_positions=256,
        bos_token_id=vocab["<eos>"],
        eos_token_id=vocab["<eos>"],
    )
    model = GPT2LMHeadModel(config).eval()
    model.save_pretrained(path)
    fast.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt")
    return build_checkpoint(path)


@pytest.fixture(scope="session")
def sidecar(checkpoint_dir):
    from hfsidecar import ServerHandle

    with ServerHandle({"checkpoint": checkpoint_dir}) as handle:
        yield handle

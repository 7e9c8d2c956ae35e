"""Text encoders producing 768-dimensional CLS vectors.

The primary path loads pretrained Hugging Face checkpoints (a clinical BERT
for protocol/ontology/eligibility text, a chemical BERT for SMILES and drug
names). When a checkpoint cannot be downloaded or found in the local cache,
a deterministic locally initialized BERT stands in: same architecture and
output contract, weights seeded from the requested model name. The fallback
is logged so runs that silently lack the real models are visible.
"""
from __future__ import annotations

import hashlib
import logging

import numpy as np
import torch

log = logging.getLogger("embexport")

OUTPUT_DIM = 768


class EncoderLoadError(Exception):
    pass


class DimMismatch(EncoderLoadError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"encoder emits dim {got}, expected {expected}")


def _name_seed(name: str) -> int:
    return int.from_bytes(
        hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "little")


class HfEncoder:
    """Pretrained checkpoint: tokenizer-truncated input, final-layer CLS."""

    kind = "pretrained"

    def __init__(self, name: str, dim: int = OUTPUT_DIM):
        from transformers import AutoModel, AutoTokenizer

        try:
            self.tokenizer = AutoTokenizer.from_pretrained(name)
            self.model = AutoModel.from_pretrained(name)
        except Exception as exc:  # transformers raises a wide exception range
            raise EncoderLoadError(f"cannot load {name!r}: {exc}") from exc
        self.model.eval()
        hidden = int(self.model.config.hidden_size)
        if hidden != dim:
            raise DimMismatch(dim, hidden)
        self.name = name
        self.dim = dim

    def encode(self, text: str, max_tokens: int) -> np.ndarray:
        inputs = self.tokenizer(text, return_tensors="pt", truncation=True,
                                max_length=max_tokens)
        with torch.no_grad():
            out = self.model(**inputs)
        cls = out.last_hidden_state[0, 0]
        return cls.numpy().astype(np.float32)


class LocalEncoder:
    """Deterministic stand-in: seeded random-init BERT with a hash tokenizer.

    Not a meaningful language model; it exists so the export contract (cache
    format, key texts, 768-dim CLS vectors, determinism) can run and be
    tested on machines without model downloads.
    """

    kind = "local_fallback"
    VOCAB = 8192
    CLS_ID = 1
    SEP_ID = 2

    def __init__(self, name: str, dim: int = OUTPUT_DIM):
        from transformers import BertConfig, BertModel

        torch.manual_seed(_name_seed(name))
        config = BertConfig(vocab_size=self.VOCAB, hidden_size=dim,
                            num_hidden_layers=2, num_attention_heads=4,
                            intermediate_size=1024,
                            max_position_embeddings=520)
        self.model = BertModel(config)
        self.model.eval()
        self.name = name
        self.dim = dim

    def _token_ids(self, text: str, max_tokens: int) -> list[int]:
        ids = [self.CLS_ID]
        for token in text.split()[: max_tokens - 2]:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=4).digest()
            ids.append(3 + int.from_bytes(digest, "little") % (self.VOCAB - 3))
        ids.append(self.SEP_ID)
        return ids

    def encode(self, text: str, max_tokens: int) -> np.ndarray:
        ids = torch.tensor([self._token_ids(text, max_tokens)])
        with torch.no_grad():
            out = self.model(input_ids=ids)
        return out.last_hidden_state[0, 0].numpy().astype(np.float32)


def build_encoder(name: str, allow_download: bool = True,
                  dim: int = OUTPUT_DIM):
    if allow_download:
        try:
            return HfEncoder(name, dim)
        except EncoderLoadError as exc:
            log.warning("falling back to local encoder for %r: %s", name, exc)
    return LocalEncoder(name, dim)

"""Masked-residue transformer for receptor sequences, with baselines and analysis tools."""

from ._core import (
    IGNORE,
    Model,
    decode,
    encode_sequence,
    gradcheck,
    read_container_header,
    svm_baseline,
    train,
    tsne,
    vocab,
    vocab_hash,
)

__all__ = [
    "IGNORE",
    "Model",
    "decode",
    "encode_sequence",
    "gradcheck",
    "read_container_header",
    "svm_baseline",
    "train",
    "tsne",
    "vocab",
    "vocab_hash",
]

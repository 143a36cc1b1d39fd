"""Text pipeline: normalization, BPE, vocabularies, datasets, synthetic task."""

from .bpe import BpeCodes, alphabet, bpe_apply, bpe_train, strip_markers
from .data import (
    ParallelDataset,
    copy_target_pairs,
    make_batches,
    mix_backtranslation,
    pad_batch,
    read_lines,
    target_io,
    write_lines,
)
from .synth import GrammarConfig, SynthTask, synth_task_generate
from .text import NormalizeConfig, fold_diacritics, normalize, tokenize
from .vocab import BOS, EOS, PAD, RESERVED, UNK, Vocabulary

__all__ = [
    "BpeCodes",
    "alphabet",
    "bpe_apply",
    "bpe_train",
    "strip_markers",
    "ParallelDataset",
    "copy_target_pairs",
    "make_batches",
    "mix_backtranslation",
    "pad_batch",
    "read_lines",
    "target_io",
    "write_lines",
    "GrammarConfig",
    "SynthTask",
    "synth_task_generate",
    "NormalizeConfig",
    "fold_diacritics",
    "normalize",
    "tokenize",
    "BOS",
    "EOS",
    "PAD",
    "RESERVED",
    "UNK",
    "Vocabulary",
]

"""Choosing models across seeds and tuning the shallow-fusion weight."""

import numpy as np

from ..decoding import beam_search, greedy_decode
from ..evaluation import bleu
from ..fusion import LAMBDA_GRID, ColdFusion, FusedTranslator, FusionConfig
from ..lm import build_lm
from ..seq2seq import TranslationModel


def select_models(scores, ensemble_size=4, ensemble=True):
    """Indices of the best single run and of the top ``ensemble_size`` runs.

    ``scores`` holds one dev BLEU per run, in seed order; ties go to the
    earlier run. Returns ``(single, ensemble_indices)``; the second item is
    None when ``ensemble`` is False.
    """
    scores = list(scores)
    if not scores:
        raise ValueError("no runs to select from")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    if not ensemble:
        return order[0], None
    if len(scores) < ensemble_size:
        raise ValueError(f"ensemble of {ensemble_size} needs at least {ensemble_size} runs, got {len(scores)}")
    return order[0], order[:ensemble_size]


def decode_corpus(scorer, sources, beam=6, batch=64):
    """Best hypothesis per source; batched greedy when ``beam == 1``."""
    if beam == 1:
        out = []
        for i in range(0, len(sources), batch):
            out += greedy_decode(scorer, sources[i : i + batch])
        return out
    return [beam_search(scorer, s, beam=beam)[0] for s in sources]


def tune_lambda(fused, dev_sources, dev_references, render, grid=LAMBDA_GRID, beam=6):
    """Grid-search the shallow-fusion weight on dev BLEU; ties keep the smaller weight.

    Returns ``(best_lambda, {lambda: bleu})``.
    """
    if len(dev_sources) == 0:
        raise ValueError("empty dev set")
    grid = sorted(grid)
    if not grid:
        raise ValueError("empty lambda grid")
    table = {}
    best_lam, best = None, -np.inf
    for lam in grid:
        scorer = fused.scorer("shallow", lam)
        hyps = decode_corpus(scorer, dev_sources, beam)
        score = bleu([render(h.output_tokens) for h in hyps], dev_references).bleu
        table[lam] = score
        if score > best:
            best_lam, best = lam, score
    return best_lam, table


def build_from_checkpoint(ckpt, lms=()):
    """Rebuild the :class:`FusedTranslator` a translation checkpoint was trained as."""
    arch = ckpt.arch
    if arch.get("model", {}).get("kind") != "seq2seq":
        raise ValueError("not a translation-model checkpoint")
    tm = TranslationModel.from_descriptor(arch["model"])
    fcfg = FusionConfig(**arch.get("fusion", {}))
    cold = None
    if "cold" in arch:
        c = arch["cold"]
        cold = ColdFusion(c["feature_dim"], c["vocab_size"], c["lm_feature_dim"])
    if fcfg.strategy == "shallow" and not lms:
        fcfg.lm_paths = []
    fused = FusedTranslator(tm, fcfg, lms, cold)
    fused.load_state_dict(ckpt.params)
    return fused


def build_lm_from_checkpoint(ckpt):
    lm = build_lm(ckpt.arch["model"])
    lm.load_state_dict(ckpt.params)
    return lm

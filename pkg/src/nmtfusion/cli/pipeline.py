"""Experiment engine shared by the ``experiment`` recipes.

Trained models are cached in ``<workdir>/models`` and training logs in
``<workdir>/logs`` so recipes run in one invocation share them. Independent
seeds can train in worker processes; results never depend on the worker count.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..corpus import UNK, ParallelDataset, copy_target_pairs, Vocabulary, mix_backtranslation, read_lines, synth_task_generate
from ..decoding import EnsembleScorer, greedy_decode
from ..evaluation import bleu
from ..fusion import FusedTranslator, FusionConfig
from ..lm import FeedForwardLM, RecurrentLM
from ..seq2seq import TranslationModel
from ..training import (
    Renderer,
    TrainConfig,
    build_from_checkpoint,
    build_lm_from_checkpoint,
    decode_corpus,
    load_checkpoint,
    save_checkpoint,
    train_lm,
    train_translator,
    tune_lambda,
)


@dataclass
class TaskData:
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    train: ParallelDataset
    dev: ParallelDataset
    test: ParallelDataset
    mono: list
    dev_refs: list
    test_refs: list


def _pairs_from_files(src_path, tgt_path):
    src, tgt = read_lines(src_path), read_lines(tgt_path)
    if len(src) != len(tgt):
        raise ValueError(f"{src_path} and {tgt_path} differ in line count")
    return list(zip(src, tgt))


def load_task(cfg, n_parallel=None):
    """Vocabularies and id datasets for the configured corpus.

    The target vocabulary covers train targets and monolingual text so the
    LM and every TM share it.
    """
    d = cfg.data
    if d["synthetic"]:
        task = synth_task_generate(d["synth_seed"], n_parallel or d["n_parallel"], d["n_mono"], cfg.grammar)
        train, dev, test, mono = task.train, task.dev, task.test, task.mono
    else:
        train = _pairs_from_files(d["train_src"], d["train_tgt"])
        if n_parallel is not None:
            if n_parallel > len(train):
                raise ValueError(f"requested {n_parallel} training pairs, corpus has {len(train)}")
            train = train[:n_parallel]
        dev = _pairs_from_files(d["dev_src"], d["dev_tgt"])
        test = _pairs_from_files(d["test_src"], d["test_tgt"])
        mono = read_lines(d["mono_tgt"])
    src_v = Vocabulary.build([s for s, _ in train])
    tgt_v = Vocabulary.build([t for _, t in train] + list(mono))

    def ds(pairs):
        return ParallelDataset([src_v.encode(s) for s, _ in pairs], [tgt_v.encode(t) for _, t in pairs])

    return TaskData(
        src_v,
        tgt_v,
        ds(train),
        ds(dev),
        ds(test),
        [np.asarray(tgt_v.encode(t), dtype=np.int64) for t in mono],
        [" ".join(t.split()) for _, t in dev],
        [" ".join(t.split()) for _, t in test],
    )


_ACTIVE = {}  # the Runner used by forked training workers


def _train_job(key):
    return _ACTIVE["runner"]._train_tm(*key)


class Runner:
    def __init__(self, cfg, workdir, workers=1, log=None):
        self.cfg = cfg
        self.workdir = workdir
        self.workers = max(1, int(workers))
        self.log = log or (lambda msg: None)
        os.makedirs(self.path("models"), exist_ok=True)
        os.makedirs(self.path("logs"), exist_ok=True)
        self._tasks = {}
        self._lms = {}
        self._tms = {}
        self._bleu = {}

    def path(self, *parts):
        return os.path.join(self.workdir, *parts)

    # data and language models ------------------------------------------------------

    def _size(self, n_parallel):
        """None stands for the configured corpus size."""
        return None if n_parallel == self.cfg.data["n_parallel"] else n_parallel

    def task(self, n_parallel=None, bt_ratio=0):
        n_parallel = self._size(n_parallel)
        key = (n_parallel, bt_ratio)
        if key not in self._tasks:
            if bt_ratio:
                base = self.task(n_parallel)
                syn = self.backtranslated(bt_ratio * len(base.train))
                mixed = mix_backtranslation(base.train, syn, bt_ratio, seed=self.cfg.seeds[0])
                self._tasks[key] = TaskData(**{**base.__dict__, "train": mixed})
            else:
                self._tasks[key] = load_task(self.cfg, n_parallel)
        return self._tasks[key]

    def render(self):
        return Renderer(self.task().tgt_vocab)

    def lm(self, kind):
        """The fixed LM (``rnn`` or ``ffn``) trained on the monolingual corpus."""
        if kind in self._lms:
            return self._lms[kind]
        path = self.path("models", f"lm_{kind}.ckpt")
        if os.path.exists(path):
            lm = build_lm_from_checkpoint(load_checkpoint(path))
        else:
            task = self.task()
            V = len(task.tgt_vocab)
            if kind == "rnn":
                c = self.cfg.lm
                lm = RecurrentLM(V, c["emb"], c["hidden"], c["layers"], rng=np.random.default_rng(c["seed"]))
            else:
                c = self.cfg.ffn_lm
                lm = FeedForwardLM(V, c["emb"], c["hidden"], c["order"], rng=np.random.default_rng(c["seed"]))
            tc = TrainConfig(**{**self.cfg.train.to_dict(), "max_epochs": c["epochs"], "average_last": 1})
            t0 = time.time()
            res = train_lm(lm, task.mono, task.dev.tgt, tc, c["seed"], log_path=self.path("logs", f"lm_{kind}.tsv"))
            self.log(f"trained {kind} LM in {time.time() - t0:.0f}s, dev loss {res.log[-1].dev_loss:.4f}")
            save_checkpoint(res.checkpoint, path)
        lm.freeze()
        self._lms[kind] = lm
        return lm

    def lms(self, lm_set):
        kinds = {"rnn": ["rnn"], "ffn": ["ffn"], "both": ["rnn", "ffn"]}[lm_set]
        return [self.lm(k) for k in kinds]

    # translation models ----------------------------------------------------------------

    @staticmethod
    def trained_system(system):
        """Shallow fusion decodes the baseline TM; every other system trains its own."""
        return "baseline" if system == "shallow" else system

    def _name(self, system, lm_set, seed, n_parallel, bt_ratio, reverse):
        system = self.trained_system(system)
        n_parallel = self._size(n_parallel)
        parts = [system]
        if system != "baseline":
            parts.append(lm_set)
        if n_parallel is not None:
            parts.append(f"n{n_parallel}")
        if bt_ratio:
            parts.append(f"bt{bt_ratio}")
        if reverse:
            parts.append("reverse")
        parts.append(f"s{seed}")
        return "_".join(parts)

    def _build(self, system, lm_set, seed, task, reverse):
        m = self.cfg.model
        if reverse:
            sv, tv = len(task.tgt_vocab), len(task.src_vocab)
        else:
            sv, tv = len(task.src_vocab), len(task.tgt_vocab)
        tm = TranslationModel(sv, tv, m["emb"], m["hidden"], m["dec_layers"], rng=np.random.default_rng(seed))
        system = self.trained_system(system)
        lms = [] if system == "baseline" else self.lms(lm_set)
        return FusedTranslator(tm, FusionConfig(system), lms, rng=np.random.default_rng([seed, 1]))

    def _train_tm(self, system, lm_set, seed, n_parallel=None, bt_ratio=0, reverse=False):
        name = self._name(system, lm_set, seed, n_parallel, bt_ratio, reverse)
        path = self.path("models", name + ".ckpt")
        if os.path.exists(path):
            return name
        task = self.task(n_parallel, bt_ratio)
        train, dev = task.train, task.dev
        render = Renderer(task.tgt_vocab)
        if reverse:
            train = ParallelDataset(train.tgt, train.src)
            dev = ParallelDataset(dev.tgt, dev.src)
            render = Renderer(task.src_vocab)
        fused = self._build(system, lm_set, seed, task, reverse)
        t0 = time.time()
        res = train_translator(fused, train, dev, self.cfg.train, seed, render=render,
                               log_path=self.path("logs", name + ".tsv"))
        self.log(f"trained {name} in {time.time() - t0:.0f}s, greedy dev BLEU {res.dev_bleu:.2f}")
        save_checkpoint(res.checkpoint, path)
        return name

    def train_all(self, keys):
        """Train every ``(system, lm_set, seed, n_parallel, bt_ratio, reverse)`` not yet cached."""
        todo = []
        for k in keys:
            k = tuple(k) + (None, 0, False)[len(k) - 3 :]
            if not os.path.exists(self.path("models", self._name(*k) + ".ckpt")) and k not in todo:
                todo.append(k)
        if not todo:
            return
        # data and LMs are prepared here so workers inherit them
        for k in todo:
            self.task(k[3], k[4])
            if not k[5]:
                self.lms(k[1])
        if self.workers > 1 and len(todo) > 1:
            _ACTIVE["runner"] = self
            try:
                with ProcessPoolExecutor(max_workers=min(self.workers, len(todo))) as pool:
                    list(pool.map(_train_job, todo))
            finally:
                _ACTIVE.pop("runner", None)
        else:
            for k in todo:
                self._train_tm(*k)

    def tm(self, system, lm_set, seed, n_parallel=None, bt_ratio=0, reverse=False):
        key = (self.trained_system(system), lm_set, seed, self._size(n_parallel), bt_ratio, reverse)
        if key not in self._tms:
            self.train_all([key])
            name = self._name(*key)
            ckpt = load_checkpoint(self.path("models", name + ".ckpt"))
            lms = [] if key[0] == "baseline" else self.lms(lm_set)
            fused = build_from_checkpoint(ckpt, lms)
            if key[0] == "baseline" and not reverse:
                # the baseline TM doubles as the shallow-fusion TM, which takes one LM
                kind = self.cfg.lm["kind"] if lm_set == "both" else lm_set
                fused = FusedTranslator(fused.tm, FusionConfig("shallow"), [self.lm(kind)])
            self._tms[key] = fused
        return self._tms[key]

    def training_log(self, system, lm_set, seed, n_parallel=None, bt_ratio=0):
        name = self._name(system, lm_set, seed, n_parallel, bt_ratio, False)
        self.tm(system, lm_set, seed, n_parallel, bt_ratio)
        with open(self.path("logs", name + ".tsv"), encoding="utf-8") as f:
            rows = [line.rstrip("\n").split("\t") for line in f][1:]
        return [(int(r[0]), float(r[3])) for r in rows]

    # decoding and scoring ------------------------------------------------------------------

    def scorer(self, system, lm_set, seed, lam=0.0, **kw):
        fused = self.tm(system, lm_set, seed, **kw)
        if system == "baseline":
            return fused.scorer("baseline")
        if system == "shallow":
            return fused.scorer("shallow", lam)
        return fused.scorer()

    def shallow_lambda(self, lm_set, seed, **kw):
        key = ("lambda", lm_set, seed, tuple(sorted(kw.items())))
        if key not in self._bleu:
            task = self.task(kw.get("n_parallel"), kw.get("bt_ratio", 0))
            fused = self.tm("shallow", lm_set, seed, **kw)
            lam, table = tune_lambda(fused, task.dev.src, task.dev_refs, Renderer(task.tgt_vocab),
                                     grid=self.cfg.lambda_grid, beam=self.cfg.beam)
            self._bleu[key] = (lam, table)
        return self._bleu[key]

    def translate(self, scorer, split, task):
        data = task.dev if split == "dev" else task.test
        render = Renderer(task.tgt_vocab)
        return [render(h.output_tokens) for h in decode_corpus(scorer, data.src, beam=self.cfg.beam)]

    def bleu_report(self, system, lm_set, seed, split="dev", **kw):
        """Beam-search BLEU report of one system; shallow uses its dev-tuned weight."""
        key = ("bleu", system, lm_set, seed, split, tuple(sorted(kw.items())))
        if key not in self._bleu:
            task = self.task(kw.get("n_parallel"), kw.get("bt_ratio", 0))
            lam = self.shallow_lambda(lm_set, seed, **kw)[0] if system == "shallow" else 0.0
            hyps = self.translate(self.scorer(system, lm_set, seed, lam, **kw), split, task)
            refs = task.dev_refs if split == "dev" else task.test_refs
            self._bleu[key] = bleu(hyps, refs)
        return self._bleu[key]

    def ensemble_report(self, system, lm_set, seeds, split="dev"):
        task = self.task()
        members = []
        for seed in seeds:
            lam = self.shallow_lambda(lm_set, seed)[0] if system == "shallow" else 0.0
            members.append(self.scorer(system, lm_set, seed, lam))
        hyps = self.translate(EnsembleScorer(members), split, task)
        return bleu(hyps, task.dev_refs if split == "dev" else task.test_refs)

    # backtranslation ---------------------------------------------------------------------

    def backtranslated(self, count):
        """Synthetic pairs for ``count`` monolingual targets.

        Sources come from greedy decoding with a reverse (target-to-source)
        baseline model, or are copies of the targets in ``copy`` mode.
        """
        mode = self.cfg.bt_mode
        path = self.path("models", f"backtranslated_{mode}_{count}.src")
        task = self.task()
        seed = self.cfg.seeds[0]
        pick = np.random.default_rng([seed, 3]).permutation(len(task.mono))[:count]
        targets = [task.mono[i] for i in pick]
        if mode == "copy":
            render = Renderer(task.tgt_vocab)
            pairs = copy_target_pairs([render(t) for t in targets])
            return ParallelDataset([task.src_vocab.encode(s) for s, _ in pairs], targets, [True] * len(targets))
        if os.path.exists(path):
            sources = [task.src_vocab.encode(line) for line in read_lines(path)]
        else:
            reverse = self.tm("baseline", "rnn", seed, reverse=True)
            scorer = reverse.scorer("baseline")
            sources = []
            for i in range(0, len(targets), 64):
                for h in greedy_decode(scorer, targets[i : i + 64]):
                    sources.append(list(h.output_tokens) or [UNK])
            with open(path, "w", encoding="utf-8") as f:
                for s in sources:
                    f.write(" ".join(task.src_vocab.tokens[t] for t in s) + "\n")
            sources = [task.src_vocab.encode(line) for line in read_lines(path)]
        return ParallelDataset(sources, targets, [True] * len(targets))

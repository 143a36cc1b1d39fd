"""Plain SGD with label smoothing, plateau decay, and checkpoint averaging."""

import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import numerics as N
from ..corpus.data import make_batches, pad_batch, target_io
from ..decoding import greedy_decode
from ..evaluation import bleu
from ..lm import lm_batch
from .checkpoint import Checkpoint, average_checkpoints
from .loss import label_smoothed_nll

LOG_HEADER = "epoch\ttrain_loss\tdev_loss\tdev_bleu\tlr"


@dataclass
class TrainConfig:
    lr: float = 0.5
    batch_size: int = 32
    label_smoothing: float = 0.1
    max_epochs: int = 20
    decay: float = 0.5
    patience: int = 1
    min_lr: float = 1e-4
    clip_norm: float = 5.0
    seeds: tuple = (1,)
    average_last: int = 10
    dev_bleu: bool = True

    def validate(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label smoothing must be in [0, 1)")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.max_epochs < 1 or self.average_last < 1 or self.patience < 1:
            raise ValueError("max_epochs, average_last and patience must be >= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")
        return self

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, step, detail=""):
        super().__init__(f"training diverged at epoch {epoch}, step {step}{': ' + detail if detail else ''}")
        self.epoch, self.step = epoch, step


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_bleu: float
    lr: float
    grad_norm: float = 0.0

    def tsv(self):
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.dev_loss:.6f}\t{self.dev_bleu:.4f}\t{self.lr:.6g}"


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list = field(default_factory=list)

    @property
    def dev_bleu(self):
        return self.checkpoint.meta.get("dev_bleu", float("nan"))


def global_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.vdot(p.grad, p.grad))
    return math.sqrt(total)


def sgd_step(params, lr, clip_norm=None):
    """``p -= lr * g`` after rescaling to global norm ``clip_norm``; returns the norm."""
    params = list(params)
    norm = global_norm(params)
    if not math.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm")
    scale = 1.0
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
    for p in params:
        if p.grad is not None:
            p.data = p.data - (lr * scale) * p.grad
    return norm


class Renderer:
    """Id sequence to a space-joined word string, BPE markers removed."""

    def __init__(self, vocab=None):
        self.vocab = vocab

    def __call__(self, ids):
        if self.vocab is None:
            return " ".join(str(int(i)) for i in ids)
        return self.vocab.detokenize(ids)


class TranslationObjective:
    """Training/eval hooks for a :class:`FusedTranslator`."""

    def __init__(self, fused, train, dev=None, render=None, dev_references=None, decode_batch=64):
        self.fused = fused
        self.train = train
        self.dev = dev
        self.render = render or Renderer()
        self.dev_references = dev_references
        self.decode_batch = decode_batch

    def parameters(self):
        return {k: p for k, p in self.fused.named_parameters().items() if p.requires_grad}

    def lengths(self):
        return [max(len(s), len(t)) for s, t in zip(self.train.src, self.train.tgt)]

    def _loss(self, data, idx, eps):
        src, src_mask = pad_batch([data.src[i] for i in idx])
        tin, tout, mask = target_io([data.tgt[i] for i in idx])
        logp = self.fused.train_logprobs(src, src_mask, tin)
        return label_smoothed_nll(logp, tout, mask, eps)

    def batch_loss(self, idx, eps):
        return self._loss(self.train, idx, eps)

    def dev_loss(self, batch_size=64):
        if self.dev is None:
            return float("nan")
        total = count = 0.0
        with N.no_grad():
            for i in range(0, len(self.dev), batch_size):
                idx = range(i, min(i + batch_size, len(self.dev)))
                loss, n = self._loss(self.dev, idx, 0.0)
                total += loss.item() * n
                count += n
        return total / count

    def dev_bleu(self):
        if self.dev is None:
            return float("nan")
        scorer = self.fused.scorer()
        hyps = []
        for i in range(0, len(self.dev), self.decode_batch):
            hyps += greedy_decode(scorer, self.dev.src[i : i + self.decode_batch])
        cands = [self.render(h.output_tokens) for h in hyps]
        refs = self.dev_references or [self.render(t) for t in self.dev.tgt]
        return bleu(cands, refs).bleu

    def state_dict(self):
        return self.fused.state_dict()

    def load_state_dict(self, state):
        self.fused.load_state_dict(state)

    def arch(self):
        arch = {"model": self.fused.tm.descriptor(), "fusion": self.fused.config.to_dict()}
        if self.fused.cold is not None:
            arch["cold"] = self.fused.cold.descriptor()
        return arch


class LanguageModelObjective:
    def __init__(self, lm, train, dev=None):
        self.lm = lm
        self.train = [np.asarray(s, dtype=np.int64) for s in train]
        self.dev = None if dev is None else [np.asarray(s, dtype=np.int64) for s in dev]

    def parameters(self):
        return self.lm.trainable_parameters()

    def lengths(self):
        return [len(s) for s in self.train]

    def _loss(self, sents, eps):
        inp, out, mask = lm_batch(sents)
        return label_smoothed_nll(self.lm.sequence_logprobs(inp), out, mask, eps)

    def batch_loss(self, idx, eps):
        return self._loss([self.train[i] for i in idx], eps)

    def dev_loss(self, batch_size=128):
        if not self.dev:
            return float("nan")
        total = count = 0.0
        with N.no_grad():
            for i in range(0, len(self.dev), batch_size):
                loss, n = self._loss(self.dev[i : i + batch_size], 0.0)
                total += loss.item() * n
                count += n
        return total / count

    def dev_bleu(self):
        return float("nan")

    def state_dict(self):
        return self.lm.state_dict()

    def load_state_dict(self, state):
        self.lm.load_state_dict(state)

    def arch(self):
        return {"model": self.lm.descriptor()}


def fit(objective, cfg, seed, log_path=None, max_steps=None, on_step=None):
    """Train ``objective`` in place and load the averaged final parameters.

    ``max_steps`` truncates training (tests); ``on_step(step, params)`` is
    called after every update.
    """
    cfg.validate()
    params = objective.parameters()
    lr = cfg.lr
    best, bad = math.inf, 0
    snaps = deque(maxlen=cfg.average_last)
    log = []
    step = 0
    log_file = None
    if log_path is not None:
        log_file = open(log_path, "w", encoding="utf-8")
        log_file.write(LOG_HEADER + "\n")
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            rng = np.random.default_rng([seed, epoch])
            total = ntok = 0.0
            norm_max = 0.0
            for idx in make_batches(objective.lengths(), cfg.batch_size, rng):
                for p in params.values():
                    p.grad = None
                try:
                    loss, n = objective.batch_loss(idx, cfg.label_smoothing)
                    value = loss.item()
                    if not math.isfinite(value):
                        raise FloatingPointError("non-finite loss")
                    loss.backward()
                    norm = sgd_step(params.values(), lr, cfg.clip_norm)
                except (N.NonFiniteError, FloatingPointError) as exc:
                    raise TrainingDiverged(epoch, step, str(exc)) from exc
                norm_max = max(norm_max, norm)
                total += value * n
                ntok += n
                step += 1
                if on_step is not None:
                    on_step(step, params)
                if max_steps is not None and step >= max_steps:
                    break
            dev_loss = objective.dev_loss()
            dev_bleu = objective.dev_bleu() if cfg.dev_bleu else float("nan")
            rec = EpochRecord(epoch, total / max(ntok, 1), dev_loss, dev_bleu, lr, norm_max)
            log.append(rec)
            if log_file is not None:
                log_file.write(rec.tsv() + "\n")
                log_file.flush()
            snaps.append(Checkpoint(objective.state_dict(), {}, {"epoch": epoch}))
            if dev_loss < best:
                best, bad = dev_loss, 0
            elif math.isfinite(dev_loss):
                bad += 1
                if bad >= cfg.patience:
                    lr = max(lr * cfg.decay, cfg.min_lr)
                    bad = 0
            if max_steps is not None and step >= max_steps:
                break
    finally:
        if log_file is not None:
            log_file.close()
    final = average_checkpoints(list(snaps))
    objective.load_state_dict(final.params)
    final.arch = objective.arch()
    final.meta.update(
        seed=seed,
        epochs=len(log),
        steps=step,
        dev_loss=objective.dev_loss(),
        dev_bleu=objective.dev_bleu() if cfg.dev_bleu else float("nan"),
        train_config=cfg.to_dict(),
    )
    return TrainResult(final, log)


def _run_job(job):
    build, seed, cfg, log_path = job
    objective = build(seed)
    return fit(objective, cfg, seed, log_path)


def train(build, cfg, log_paths=None, workers=1):
    """One run per seed in ``cfg.seeds``; ``build(seed)`` makes a fresh objective.

    With ``workers > 1`` seeds run in separate processes (``build`` must
    pickle). Results are returned in seed order either way.
    """
    seeds = list(cfg.seeds)
    log_paths = log_paths or [None] * len(seeds)
    jobs = [(build, s, cfg, p) for s, p in zip(seeds, log_paths)]
    if workers <= 1 or len(jobs) == 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def train_translator(fused, train_set, dev_set, cfg, seed, render=None, dev_references=None, log_path=None):
    objective = TranslationObjective(fused, train_set, dev_set, render, dev_references)
    return fit(objective, cfg, seed, log_path)


def train_lm(lm, sentences, dev_sentences, cfg, seed, log_path=None):
    cfg = TrainConfig(**{**cfg.to_dict(), "dev_bleu": False, "seeds": (seed,)})
    return fit(LanguageModelObjective(lm, sentences, dev_sentences), cfg, seed, log_path)

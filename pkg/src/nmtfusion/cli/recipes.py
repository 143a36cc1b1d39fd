"""Experiment recipes. Each writes tab-separated tables into the output directory.

Tables hold only quantities that are deterministic given the config snapshot
(no timings), so re-running a snapshot reproduces them byte for byte.
"""

import glob
import os
from statistics import median

from ..evaluation import average_entropy, precision_breakdown_compare
from ..fusion import LmScorer
from ..training import select_models

RECIPES = (
    "fusion-comparison",
    "backtranslation-sweep",
    "convergence",
    "train-size",
    "entropy-analysis",
    "precision-breakdown",
)


def fmt(x):
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def write_tsv(path, header, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(header) + "\n")
        for row in rows:
            f.write("\t".join(fmt(x) for x in row) + "\n")


def _comparison_cells(cfg):
    """(system, lm_set) pairs to compare; baseline once, one-LM strategies skip ``both``."""
    cells = []
    for system in cfg.systems:
        if system == "baseline":
            cells.append(("baseline", "-"))
            continue
        for lm_set in cfg.comparison_lms:
            if lm_set == "both" and system in ("shallow", "cold"):
                continue
            cells.append((system, lm_set))
    return cells


def _lm_for(lm_set, cfg):
    return cfg.lm["kind"] if lm_set == "-" else lm_set


def fusion_comparison(runner, out):
    cfg = runner.cfg
    cells = _comparison_cells(cfg)
    runner.train_all([(s, _lm_for(l, cfg), seed) for s, l in cells for seed in cfg.seeds])
    per_seed, summary = [], []
    for system, lm_set in cells:
        lm = _lm_for(lm_set, cfg)
        dev = []
        for seed in cfg.seeds:
            score = runner.bleu_report(system, lm, seed).bleu
            lam = runner.shallow_lambda(lm, seed)[0] if system == "shallow" else 0.0
            per_seed.append((system, lm_set, seed, lam, score))
            dev.append(score)
        k = min(4, len(dev))
        single, ens = select_models(dev, ensemble_size=k)
        best = cfg.seeds[single]
        ens_seeds = [cfg.seeds[i] for i in ens]
        summary.append(
            (
                system,
                lm_set,
                median(dev),
                best,
                dev[single],
                runner.bleu_report(system, lm, best, split="test").bleu,
                " ".join(map(str, ens_seeds)),
                runner.ensemble_report(system, lm, ens_seeds).bleu,
                runner.ensemble_report(system, lm, ens_seeds, split="test").bleu,
            )
        )
    write_tsv(os.path.join(out, "fusion_comparison.tsv"), ("system", "lm", "seed", "lambda", "dev_bleu"), per_seed)
    write_tsv(
        os.path.join(out, "fusion_summary.tsv"),
        ("system", "lm", "median_dev_bleu", "single_seed", "single_dev_bleu", "single_test_bleu",
         "ensemble_seeds", "ensemble_dev_bleu", "ensemble_test_bleu"),
        summary,
    )


def backtranslation_sweep(runner, out):
    cfg = runner.cfg
    lm = cfg.lm["kind"]
    rows = []
    for n in cfg.bt_ratios:
        row = [n, len(runner.task(bt_ratio=n).train)]
        runner.train_all([(s, lm, seed, None, n) for s in ("baseline", "postnorm") for seed in cfg.seeds])
        for system in ("baseline", "postnorm"):
            row.append(median(runner.bleu_report(system, lm, seed, bt_ratio=n).bleu for seed in cfg.seeds))
        rows.append(row)
    write_tsv(os.path.join(out, "backtranslation_sweep.tsv"), ("ratio", "train_pairs", "baseline", "postnorm"), rows)


def first_epoch_reaching(curve, target):
    """First epoch whose dev BLEU is at least ``target``, or None."""
    for epoch, score in curve:
        if score >= target:
            return epoch
    return None


def convergence(runner, out):
    cfg = runner.cfg
    lm, seed = cfg.lm["kind"], cfg.seeds[0]
    runner.train_all([("baseline", lm, seed), ("postnorm", lm, seed)])
    base = runner.training_log("baseline", lm, seed)
    post = runner.training_log("postnorm", lm, seed)
    n = max(len(base), len(post))
    rows = []
    for i in range(n):
        rows.append(
            (
                i + 1,
                base[i][1] if i < len(base) else "",
                post[i][1] if i < len(post) else "",
            )
        )
    write_tsv(os.path.join(out, "convergence.tsv"), ("epoch", "baseline", "postnorm"), rows)
    target = base[-1][1]
    reached = first_epoch_reaching(post, target)
    write_tsv(
        os.path.join(out, "convergence_summary.tsv"),
        ("seed", "baseline_epochs", "baseline_final_dev_bleu", "postnorm_first_epoch_reaching"),
        [(seed, len(base), target, reached if reached is not None else "never")],
    )


def train_size(runner, out):
    cfg = runner.cfg
    lm = cfg.lm["kind"]
    systems = [s for s in cfg.systems]
    rows = []
    for size in cfg.train_sizes:
        runner.train_all([(s, lm, seed, size) for s in systems for seed in cfg.seeds])
        row = [size]
        for system in systems:
            row.append(median(runner.bleu_report(system, lm, seed, split="test", n_parallel=size).bleu
                              for seed in cfg.seeds))
        rows.append(row)
    write_tsv(os.path.join(out, "train_size.tsv"), ["size"] + systems, rows)


def entropy_analysis(runner, out):
    cfg = runner.cfg
    lm_kind = cfg.lm["kind"]
    task = runner.task()
    pairs = list(zip(task.dev.src, task.dev.tgt))
    lm_rep = average_entropy(LmScorer(runner.lm(lm_kind)), pairs)
    rows = [("lm", "-", lm_rep.perplexity, lm_rep.entropy)]
    runner.train_all([(s, lm_kind, seed) for s in ("baseline", "postnorm") for seed in cfg.seeds])
    for system in ("baseline", "postnorm"):
        for seed in cfg.seeds:
            rep = average_entropy(runner.tm(system, lm_kind, seed).tm_only_scorer(), pairs)
            rows.append((f"tm_{system}", seed, rep.perplexity, rep.entropy))
    write_tsv(os.path.join(out, "entropy.tsv"), ("model", "seed", "perplexity", "entropy"), rows)


def precision_breakdown(runner, out):
    cfg = runner.cfg
    lm, seed = cfg.lm["kind"], cfg.seeds[0]
    runner.train_all([("baseline", lm, seed), ("postnorm", lm, seed)])
    reps = {s: runner.bleu_report(s, lm, seed, split="test") for s in ("baseline", "postnorm")}
    rows = []
    for system, r in reps.items():
        rows.append((system, r.bleu, *r.precisions, r.bp, r.cand_len, r.ref_len))
    try:
        rel = precision_breakdown_compare(reps["baseline"], reps["postnorm"])
        rows.append(("relative_change_pct", rel["bleu"], rel["p1"], rel["p2"], rel["p3"], rel["p4"], "", "", ""))
    except ValueError:  # a zero baseline precision has no relative change
        pass
    write_tsv(
        os.path.join(out, "precision_breakdown.tsv"),
        ("system", "bleu", "p1", "p2", "p3", "p4", "bp", "hyp_len", "ref_len"),
        rows,
    )


RUNNERS = {
    "fusion-comparison": fusion_comparison,
    "backtranslation-sweep": backtranslation_sweep,
    "convergence": convergence,
    "train-size": train_size,
    "entropy-analysis": entropy_analysis,
    "precision-breakdown": precision_breakdown,
}


def run_recipe(name, runner, out):
    if name not in RUNNERS:
        raise ValueError(f"unknown recipe {name!r}; choose from {RECIPES}")
    RUNNERS[name](runner, out)


def emit_curves(exp_dir, out=None):
    """``curves.tsv``: one row per epoch of every translation-model training log.

    Returns the path written. Raises FileNotFoundError without logs.
    """
    logs = sorted(p for p in glob.glob(os.path.join(exp_dir, "logs", "*.tsv"))
                  if not os.path.basename(p).startswith("lm_"))
    if not logs:
        raise FileNotFoundError(f"no training logs under {os.path.join(exp_dir, 'logs')}")
    rows = []
    for path in logs:
        run = os.path.basename(path)[: -len(".tsv")]
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()[1:]
        for line in lines:
            epoch, train_loss, dev_loss, dev_bleu, lr = line.split("\t")
            rows.append((run, epoch, train_loss, dev_loss, dev_bleu, lr))
    path = os.path.join(out or exp_dir, "curves.tsv")
    write_tsv(path, ("run", "epoch", "train_loss", "dev_loss", "dev_bleu", "lr"), rows)
    return path

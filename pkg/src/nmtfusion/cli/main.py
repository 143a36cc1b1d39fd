"""``nmtfusion`` command line.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

import argparse
import configparser
import os
import shutil
import sys
import tempfile

import numpy as np

from ..corpus import (
    BpeCodes,
    NormalizeConfig,
    ParallelDataset,
    Vocabulary,
    bpe_apply,
    bpe_train,
    copy_target_pairs,
    normalize,
    read_lines,
    synth_task_generate,
    write_lines,
)
from ..decoding import greedy_decode, nbest_rows, translate
from ..evaluation import bleu, write_report
from ..fusion import FusedTranslator, FusionConfig
from ..lm import FeedForwardLM, RecurrentLM
from ..seq2seq import TranslationModel
from ..training import (
    Renderer,
    build_from_checkpoint,
    build_lm_from_checkpoint,
    load_checkpoint,
    save_checkpoint,
    train_lm,
    train_translator,
)
from .config import ExperimentConfig
from .pipeline import Runner
from .recipes import RECIPES, emit_curves, run_recipe

SNAPSHOT = "config.ini"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def log(msg):
    print(msg, file=sys.stderr, flush=True)


def _parse_config(text):
    """Parsed config; malformed configs are usage errors."""
    try:
        return ExperimentConfig.parse(text)
    except (ValueError, configparser.Error) as err:
        raise UsageError(f"invalid config: {err}") from None


def _read_config(args):
    if not args.config:
        return ""
    _check_inputs(args.config)
    with open(args.config, encoding="utf-8") as f:
        return f.read()


def _config(args):
    cfg = _parse_config(_read_config(args))
    if args.seed:
        cfg = cfg.with_seeds(args.seed)
    return cfg


def _workers(args, cfg):
    return args.threads if args.threads else len(cfg.seeds)


def _check_inputs(*paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise FileNotFoundError(f"input file {p} does not exist")


# text pipeline ------------------------------------------------------------------------------


def cmd_preprocess(args):
    _check_inputs(args.input)
    cfg = NormalizeConfig(lowercase=not args.keep_case, fold_diacritics=args.fold_diacritics)
    write_lines(args.output, [normalize(line, cfg) for line in read_lines(args.input)])


def cmd_bpe_train(args):
    _check_inputs(*args.input)
    codes = bpe_train([read_lines(p) for p in args.input], args.merges)
    codes.save(args.output)
    log(f"learned {len(codes)} merges")


def cmd_bpe_apply(args):
    _check_inputs(args.codes, args.input)
    codes = BpeCodes.load(args.codes)
    write_lines(args.output, [" ".join(bpe_apply(codes, line)) for line in read_lines(args.input)])


def cmd_synth_data(args):
    cfg = _config(args)
    d = cfg.data
    seed = args.seed[0] if args.seed else d["synth_seed"]
    task = synth_task_generate(seed, args.n_parallel or d["n_parallel"], args.n_mono or d["n_mono"], cfg.grammar)
    task.write(args.out)
    log(f"wrote synthetic task to {args.out}")


# models -------------------------------------------------------------------------------------


def _vocab(path, corpora):
    """Load ``path`` if it exists, else build from ``corpora`` and save it there."""
    if path and os.path.exists(path):
        return Vocabulary.load(path)
    v = Vocabulary.build([line for c in corpora for line in c])
    if path:
        v.save(path)
    return v


def cmd_train_lm(args):
    _check_inputs(args.train, args.dev)
    cfg = _config(args)
    train, dev = read_lines(args.train), read_lines(args.dev)
    vocab = _vocab(args.vocab, [train])
    seed = cfg.seeds[0]
    rng = np.random.default_rng(seed)
    if args.kind == "rnn":
        c = cfg.lm
        lm = RecurrentLM(len(vocab), c["emb"], c["hidden"], c["layers"], rng=rng)
    else:
        c = cfg.ffn_lm
        lm = FeedForwardLM(len(vocab), c["emb"], c["hidden"], c["order"], rng=rng)
    tc = cfg.train.__class__(**{**cfg.train.to_dict(), "max_epochs": args.epochs or c["epochs"], "average_last": 1})
    res = train_lm(lm, [vocab.encode(s) for s in train], [vocab.encode(s) for s in dev], tc, seed, log_path=args.log)
    res.checkpoint.meta["vocab"] = vocab.tokens
    save_checkpoint(res.checkpoint, args.out)
    log(f"dev loss {res.log[-1].dev_loss:.4f}")


def _load_lms(paths):
    return [build_lm_from_checkpoint(load_checkpoint(p)) for p in paths]


def cmd_train_tm(args):
    _check_inputs(args.train_src, args.train_tgt, args.dev_src, args.dev_tgt, *args.lm)
    cfg = _config(args)
    tr_s, tr_t = read_lines(args.train_src), read_lines(args.train_tgt)
    dv_s, dv_t = read_lines(args.dev_src), read_lines(args.dev_tgt)
    if len(tr_s) != len(tr_t) or len(dv_s) != len(dv_t):
        raise ValueError("source and target files differ in line count")
    lms = _load_lms(args.lm)
    src_v = _vocab(args.src_vocab, [tr_s])
    if lms:
        lm_vocab = load_checkpoint(args.lm[0]).meta.get("vocab")
        tgt_v = Vocabulary(lm_vocab) if lm_vocab else _vocab(args.tgt_vocab, [tr_t])
    else:
        tgt_v = _vocab(args.tgt_vocab, [tr_t])
    seed = cfg.seeds[0]
    m = cfg.model
    tm = TranslationModel(len(src_v), len(tgt_v), m["emb"], m["hidden"], m["dec_layers"], rng=np.random.default_rng(seed))
    fcfg = FusionConfig(args.fusion, lm_paths=[os.path.abspath(p) for p in args.lm])
    if args.literal_postnorm:
        fcfg.postnorm_renormalize = False
    fused = FusedTranslator(tm, fcfg, lms, rng=np.random.default_rng([seed, 1]))

    def ds(src, tgt):
        return ParallelDataset([src_v.encode(s) for s in src], [tgt_v.encode(t) for t in tgt])

    train_cfg = cfg.train
    if args.epochs:
        train_cfg = train_cfg.__class__(**{**train_cfg.to_dict(), "max_epochs": args.epochs})
    res = train_translator(fused, ds(tr_s, tr_t), ds(dv_s, dv_t), train_cfg, seed,
                           render=Renderer(tgt_v), log_path=args.log)
    res.checkpoint.meta["src_vocab"] = src_v.tokens
    res.checkpoint.meta["tgt_vocab"] = tgt_v.tokens
    save_checkpoint(res.checkpoint, args.out)
    log(f"greedy dev BLEU {res.dev_bleu:.2f}")


def _translator(args):
    """The fused model of ``--model`` with its LMs, plus both vocabularies."""
    _check_inputs(args.model, *args.lm)
    ckpt = load_checkpoint(args.model)
    paths = args.lm or ckpt.arch.get("fusion", {}).get("lm_paths", [])
    _check_inputs(*paths)
    fused = build_from_checkpoint(ckpt, _load_lms(paths))
    return fused, Vocabulary(ckpt.meta["src_vocab"]), Vocabulary(ckpt.meta["tgt_vocab"])


def cmd_translate(args):
    fused, src_v, tgt_v = _translator(args)
    _check_inputs(args.input)
    sources = [src_v.encode(line) for line in read_lines(args.input)]
    if any(len(s) == 0 for s in sources):
        raise ValueError("empty input line")
    if args.tm_only:
        scorer = fused.tm_only_scorer()
    else:
        scorer = fused.scorer(args.strategy, args.lam)
    results = translate(scorer, sources, beam=args.beam, nbest=args.nbest)
    render = Renderer(tgt_v)
    write_lines(args.output, [render(r[0].output_tokens) for r in results])
    if args.nbest_out:
        write_lines(args.nbest_out, nbest_rows(results, render))


def cmd_backtranslate(args):
    """Greedy translation of target-side text with a reverse (target-to-source) model."""
    _check_inputs(args.input)
    lines = read_lines(args.input)
    if args.copy:
        write_lines(args.output, [s for s, _ in copy_target_pairs(lines)])
        return
    if not args.model:
        raise UsageError("backtranslate needs --model unless --copy is given")
    fused, src_v, tgt_v = _translator(args)
    sources = [src_v.encode(line) for line in lines]
    scorer = fused.scorer("baseline")
    render = Renderer(tgt_v)
    out = []
    for i in range(0, len(sources), 64):
        out += [render(h.output_tokens) for h in greedy_decode(scorer, sources[i : i + 64])]
    write_lines(args.output, out)


def cmd_evaluate(args):
    _check_inputs(args.hyp, args.ref)
    report = bleu(read_lines(args.hyp), read_lines(args.ref))
    print(report.text())
    if args.out:
        write_report(args.out, report)


# experiments --------------------------------------------------------------------------------


def cmd_experiment(args):
    text = _read_config(args)
    if args.seed:
        text = _set_seeds(text, " ".join(map(str, args.seed)))
    cfg = _parse_config(text)
    if not cfg.data["synthetic"]:
        _check_inputs(*[cfg.data[k] for k in ("train_src", "train_tgt", "dev_src", "dev_tgt",
                                              "test_src", "test_tgt", "mono_tgt")])
    out = os.path.abspath(args.out)
    if os.path.exists(out):
        raise FileExistsError(f"output directory {out} already exists")
    parent = os.path.dirname(out)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix="." + os.path.basename(out) + "-", dir=parent)
    try:
        with open(os.path.join(tmp, SNAPSHOT), "w", encoding="utf-8") as f:
            f.write(text)
        workdir = os.path.abspath(args.workdir) if args.workdir else tmp
        runner = Runner(cfg, workdir, workers=_workers(args, cfg), log=log)
        for recipe in args.recipe:
            log(f"recipe {recipe}")
            run_recipe(recipe, runner, tmp)
        if workdir == tmp:
            emit_curves(tmp)
        os.rename(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    log(f"wrote {out}")


def _set_seeds(text, seeds):
    """Config text with ``[experiment] seeds`` replaced, keeping everything else verbatim."""
    lines = text.splitlines()
    section, done = None, False
    for i, line in enumerate(lines):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            if section == "experiment" and not done:
                lines.insert(i, f"seeds = {seeds}")
                done = True
                break
            section = s[1:-1].strip()
        elif section == "experiment" and s.split("=")[0].strip() == "seeds":
            lines[i] = f"seeds = {seeds}"
            done = True
    if not done:
        if section == "experiment":
            lines.append(f"seeds = {seeds}")
        else:
            lines += ["", "[experiment]", f"seeds = {seeds}"]
    return "\n".join(lines) + "\n"


def cmd_analyze(args):
    if not os.path.isdir(args.dir):
        raise FileNotFoundError(f"experiment directory {args.dir} does not exist")
    log(f"wrote {emit_curves(args.dir, args.out)}")


# parser -------------------------------------------------------------------------------------


def build_parser():
    common = Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker processes (default: one per seed)")
    common.add_argument("--seed", type=int, nargs="+", default=None, help="seed list; single-model commands use the first")
    common.add_argument("--config", default=None, help="experiment config file (key = value sections)")

    p = Parser(prog="nmtfusion", description="Translation models trained with a fixed language model.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("preprocess", parents=[common], help="normalize and tokenize a text file")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--keep-case", action="store_true")
    s.add_argument("--fold-diacritics", action="store_true")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("bpe-train", parents=[common], help="learn joint BPE merges")
    s.add_argument("--input", required=True, nargs="+")
    s.add_argument("--merges", type=int, required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_bpe_train)

    s = sub.add_parser("bpe-apply", parents=[common], help="segment a file with learned merges")
    s.add_argument("--codes", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_bpe_apply)

    s = sub.add_parser("synth-data", parents=[common], help="write the synthetic translation task")
    s.add_argument("--out", required=True)
    s.add_argument("--n-parallel", type=int, default=None)
    s.add_argument("--n-mono", type=int, default=None)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train-lm", parents=[common], help="train a language model")
    s.add_argument("--train", required=True)
    s.add_argument("--dev", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--vocab", default=None, help="vocabulary file; built from --train and written if missing")
    s.add_argument("--kind", choices=("rnn", "ffn"), default="rnn")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--log", default=None)
    s.set_defaults(func=cmd_train_lm)

    s = sub.add_parser("train-tm", parents=[common], help="train a translation model, optionally with fused LMs")
    for name in ("train-src", "train-tgt", "dev-src", "dev-tgt"):
        s.add_argument("--" + name, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fusion", choices=("baseline", "cold", "prenorm", "postnorm"), default="baseline")
    s.add_argument("--literal-postnorm", action="store_true", help="postnorm without renormalization")
    s.add_argument("--lm", nargs="*", default=[])
    s.add_argument("--src-vocab", default=None)
    s.add_argument("--tgt-vocab", default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--log", default=None)
    s.set_defaults(func=cmd_train_tm)

    for name, func, helptext in (
        ("translate", cmd_translate, "beam-search translation, one output line per input line"),
        ("backtranslate", cmd_backtranslate, "greedy translation with a reverse model"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--model", required=name == "translate")
        s.add_argument("--input", required=True)
        s.add_argument("--output", required=True)
        s.add_argument("--lm", nargs="*", default=[], help="LM checkpoints (default: paths recorded in the model)")
        if name == "translate":
            s.add_argument("--beam", type=int, default=6)
            s.add_argument("--strategy", choices=("baseline", "shallow", "cold", "prenorm", "postnorm"), default=None)
            s.add_argument("--lam", type=float, default=None, help="shallow-fusion weight")
            s.add_argument("--tm-only", action="store_true", help="decode with the translation model alone")
            s.add_argument("--nbest", type=int, default=1)
            s.add_argument("--nbest-out", default=None)
        else:
            s.add_argument("--copy", action="store_true", help="copy each input line as its own source")
        s.set_defaults(func=func)

    s = sub.add_parser("evaluate", parents=[common], help="corpus BLEU of a hypothesis file")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out", default=None, help="also write the report as TSV")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", parents=[common], help="run experiment recipes into a new directory")
    s.add_argument("--recipe", required=True, nargs="+", choices=RECIPES)
    s.add_argument("--out", required=True)
    s.add_argument("--workdir", default=None, help="shared model cache (default: inside --out)")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("analyze", parents=[common], help="emit training curves of an experiment directory")
    s.add_argument("--dir", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_analyze)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    try:
        args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except Exception as err:
        print(f"nmtfusion {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

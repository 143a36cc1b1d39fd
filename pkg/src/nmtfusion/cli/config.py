"""Experiment configuration: ``key = value`` sections read with configparser.

The raw text is kept so every experiment directory can carry a verbatim
snapshot that re-runs it.
"""

import configparser
from dataclasses import dataclass, field

from ..corpus import GrammarConfig
from ..training import TrainConfig

DEFAULT_CONFIG = """\
[experiment]
seeds = 1 2 3
systems = baseline shallow postnorm

[data]
synthetic = true
synth_seed = 0
n_parallel = 2000
n_mono = 100000
n_dev = 300
n_test = 300
train_src =
train_tgt =
dev_src =
dev_tgt =
test_src =
test_tgt =
mono_tgt =

[model]
emb = 64
hidden = 128
dec_layers = 2

[lm]
kind = rnn
emb = 64
hidden = 128
layers = 2
epochs = 2
seed = 100

[ffn_lm]
emb = 64
hidden = 128 128
order = 4
epochs = 2
seed = 101

[train]
lr = 0.5
batch_size = 32
label_smoothing = 0.1
max_epochs = 40
decay = 0.5
patience = 1
min_lr = 0.0001
clip_norm = 5.0
average_last = 10

[decode]
beam = 6
lambda_grid = 0.0 0.05 0.1 0.15 0.2 0.25 0.3 0.35 0.4 0.45 0.5

[recipes]
backtranslation_ratios = 0 1 2 4 8 16
backtranslation = model
train_sizes = 500 1000 2000 4000
comparison_lms = rnn
"""

DATA_FILES = ("train_src", "train_tgt", "dev_src", "dev_tgt", "test_src", "test_tgt", "mono_tgt")
SYSTEMS = ("baseline", "shallow", "cold", "prenorm", "postnorm")
LM_SETS = ("rnn", "ffn", "both")


def _ints(text):
    return tuple(int(x) for x in text.split())


def _floats(text):
    return tuple(float(x) for x in text.split())


@dataclass
class ExperimentConfig:
    seeds: tuple = (1, 2, 3)
    systems: tuple = ("baseline", "shallow", "postnorm")
    data: dict = field(default_factory=dict)
    grammar: GrammarConfig = field(default_factory=GrammarConfig)
    model: dict = field(default_factory=dict)
    lm: dict = field(default_factory=dict)
    ffn_lm: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    beam: int = 6
    lambda_grid: tuple = ()
    bt_ratios: tuple = (0, 1, 2, 4, 8, 16)
    bt_mode: str = "model"
    train_sizes: tuple = (500, 1000, 2000, 4000)
    comparison_lms: tuple = ("rnn",)
    text: str = ""

    @classmethod
    def parse(cls, text):
        """Defaults overlaid with ``text``; unknown sections or keys are errors."""
        base = configparser.ConfigParser(interpolation=None)
        base.read_string(DEFAULT_CONFIG)
        user = configparser.ConfigParser(interpolation=None)
        user.read_string(text)
        for section in user.sections():
            if not base.has_section(section):
                raise ValueError(f"unknown config section [{section}]")
            for key, value in user.items(section):
                if not base.has_option(section, key):
                    raise ValueError(f"unknown config key {key!r} in [{section}]")
                base.set(section, key, value)
        c = base
        systems = tuple(c.get("experiment", "systems").split())
        bad = [s for s in systems if s not in SYSTEMS]
        if bad:
            raise ValueError(f"unknown systems {bad}; choose from {SYSTEMS}")
        lms = tuple(c.get("recipes", "comparison_lms").split())
        if any(x not in LM_SETS for x in lms):
            raise ValueError(f"comparison_lms must be drawn from {LM_SETS}")
        d = c["data"]
        if not d.getboolean("synthetic"):
            missing = [k for k in DATA_FILES if not d.get(k)]
            if missing:
                raise ValueError(f"[data] synthetic = false needs file paths for {missing}")
        grammar = GrammarConfig(n_dev=d.getint("n_dev"), n_test=d.getint("n_test"))
        t = c["train"]
        train = TrainConfig(
            lr=t.getfloat("lr"),
            batch_size=t.getint("batch_size"),
            label_smoothing=t.getfloat("label_smoothing"),
            max_epochs=t.getint("max_epochs"),
            decay=t.getfloat("decay"),
            patience=t.getint("patience"),
            min_lr=t.getfloat("min_lr"),
            clip_norm=t.getfloat("clip_norm"),
            average_last=t.getint("average_last"),
            seeds=_ints(c.get("experiment", "seeds")),
        ).validate()
        bt_mode = c.get("recipes", "backtranslation")
        if bt_mode not in ("model", "copy"):
            raise ValueError("[recipes] backtranslation must be model or copy")
        lm = c["lm"]
        if lm.get("kind") not in ("rnn", "ffn"):
            raise ValueError("[lm] kind must be rnn or ffn")
        f = c["ffn_lm"]
        return cls(
            seeds=train.seeds,
            systems=systems,
            data={
                "synthetic": d.getboolean("synthetic"),
                "synth_seed": d.getint("synth_seed"),
                "n_parallel": d.getint("n_parallel"),
                "n_mono": d.getint("n_mono"),
                **{k: d.get(k) or None for k in DATA_FILES},
            },
            grammar=grammar,
            model={k: int(c.get("model", k)) for k in ("emb", "hidden", "dec_layers")},
            lm={
                "kind": lm.get("kind"),
                "emb": lm.getint("emb"),
                "hidden": lm.getint("hidden"),
                "layers": lm.getint("layers"),
                "epochs": lm.getint("epochs"),
                "seed": lm.getint("seed"),
            },
            ffn_lm={
                "emb": f.getint("emb"),
                "hidden": _ints(f.get("hidden")),
                "order": f.getint("order"),
                "epochs": f.getint("epochs"),
                "seed": f.getint("seed"),
            },
            train=train,
            beam=c.getint("decode", "beam"),
            lambda_grid=_floats(c.get("decode", "lambda_grid")),
            bt_ratios=_ints(c.get("recipes", "backtranslation_ratios")),
            bt_mode=bt_mode,
            train_sizes=_ints(c.get("recipes", "train_sizes")),
            comparison_lms=lms,
            text=text,
        )

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.parse(f.read())

    def with_seeds(self, seeds):
        out = ExperimentConfig(**{**self.__dict__})
        out.seeds = tuple(seeds)
        out.train = TrainConfig(**{**self.train.to_dict(), "seeds": tuple(seeds)})
        return out

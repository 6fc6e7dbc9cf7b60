"""Flat ``section.key=value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment.  Lists are comma
separated.  Later assignments (including ``--override``) win.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from xmetra.data.synthetic import SyntheticLanguageSpec
from xmetra.episodes import EpisodeSpec
from xmetra.exceptions import ConfigError, SpecError
from xmetra.meta.config import BaselineKind, Convergence, MetaConfig, TrainConfig
from xmetra.models.encoder import EncoderConfig

FAMILIES = ("mtod", "qa")
DEFAULT_FRACTIONS = (0.25, 0.5, 0.75, 1.0)
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_text(text, origin="<config>"):
    """``{dotted key: raw string}`` from flat key-value text."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{n}: empty key")
        out[key] = value
    return out


def read_config_file(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config_text(text, str(path))


def parse_override(item):
    if "=" not in item:
        raise ConfigError(f"--override expects KEY=VAL, got {item!r}")
    key, value = (s.strip() for s in item.split("=", 1))
    return key, value


def _coerce(raw, like, key):
    """Convert ``raw`` to the type of the default value ``like``."""
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(like).__name__}") from None
    return raw


def _list(raw, conv, key):
    items = [s.strip() for s in raw.split(",") if s.strip()]
    try:
        return tuple(conv(s) for s in items)
    except ValueError:
        raise ConfigError(f"{key}: bad list value {raw!r}") from None


def _build(cls, values, prefix, base=None, skip=()):
    """Instantiate dataclass ``cls`` from ``prefix.*`` keys; consumed keys are popped."""
    base = base if base is not None else cls()
    changes = {}
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    for key in [k for k in values if k.startswith(prefix + ".")]:
        name = key[len(prefix) + 1:]
        if name not in names:
            raise ConfigError(f"unknown key {key!r}")
        like = getattr(base, name)
        raw = values.pop(key)
        changes[name] = raw if hasattr(like, "value") else _coerce(raw, like, key)
    try:
        return dataclasses.replace(base, **changes)
    except (ConfigError, SpecError):
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


def parse_blocks(raw, key="blocks"):
    """``none`` / ``all`` / ``0+1`` style block set; ``all`` is kept symbolic."""
    raw = raw.strip().lower()
    if raw in ("", "none"):
        return frozenset()
    if raw == "all":
        return "all"
    try:
        return frozenset(int(b) for b in raw.replace("+", ",").split(",") if b.strip())
    except ValueError:
        raise ConfigError(f"{key}: bad block set {raw!r}") from None


def all_blocks(encoder_config):
    return frozenset(range(encoder_config.num_layers + 1))


def block_label(blocks):
    if blocks == "all":
        return "all"
    return "+".join(str(b) for b in sorted(blocks)) or "none"


@dataclass(frozen=True)
class SweepConfig:
    k: tuple = (1, 3, 6, 9)
    q: tuple = ()
    fractions: tuple = DEFAULT_FRACTIONS
    freeze: tuple = ("none", "pairs", "all")
    kind: BaselineKind = BaselineKind.X_METRA_ADA

    def kq_grid(self):
        """Diagonal ``q = k`` when no q grid is given, otherwise the full product."""
        if not self.q:
            return [(k, k) for k in self.k]
        return [(k, q) for k in self.k for q in self.q]


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = "mtod"
    kinds: tuple = (BaselineKind.PRE,)
    seeds: tuple = (0,)
    out: str = "xmetra-out"
    select_metric: str = ""
    eval_every: int = 100
    paths: dict = None
    source_spec: SyntheticLanguageSpec = None
    target_spec: SyntheticLanguageSpec = None
    encoder: EncoderConfig = None
    pre: TrainConfig = field(default_factory=TrainConfig)
    mono: TrainConfig = field(default_factory=TrainConfig)
    ft: TrainConfig = field(default_factory=TrainConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    raw: tuple = ()

    @property
    def metric(self):
        return self.select_metric or ("intent_acc" if self.family == "mtod" else "qa_f1")

    @property
    def synthetic(self):
        return self.paths is None

    def validate(self, sweep=None):
        if self.family not in FAMILIES:
            raise ConfigError(f"experiment.family must be one of {FAMILIES}, got {self.family!r}")
        if (self.paths is None) == (self.source_spec is None):
            raise ConfigError("give exactly one of data.* corpus paths or synthetic.* settings")
        if self.paths is not None:
            for name in ("source_train", "target_dev", "target_test"):
                path = self.paths.get(name)
                if not path:
                    raise ConfigError(f"data.{name} is required when corpus paths are used")
                if not Path(path).is_file():
                    raise ConfigError(f"data.{name}: no such file {path}")
        if not self.kinds:
            raise ConfigError("experiment.kinds is empty")
        if not self.seeds:
            raise ConfigError("experiment.seeds is empty")
        if sweep == "kshot" and not self.sweep.k:
            raise ConfigError("sweep.k grid is empty")
        if sweep == "downsample":
            if not self.sweep.fractions:
                raise ConfigError("sweep.fractions grid is empty")
            bad = [f for f in self.sweep.fractions if not 0.0 < f <= 1.0]
            if bad:
                raise ConfigError(f"sweep.fractions must lie in (0, 1], got {bad}")
        if sweep == "freeze" and not self.sweep.freeze:
            raise ConfigError("sweep.freeze grid is empty")
        if self.family == "qa" and sweep != "kshot":
            try:
                EpisodeSpec(self.meta.k, self.meta.q).check_qa()
            except SpecError as exc:
                raise ConfigError(str(exc)) from None
        return self

    def resolved(self):
        """Every effective setting as sorted ``(dotted key, text)`` pairs."""
        items = {
            "experiment.family": self.family,
            "experiment.kinds": ",".join(k.value for k in self.kinds),
            "experiment.seeds": ",".join(map(str, self.seeds)),
            "experiment.out": self.out,
            "experiment.select_metric": self.metric,
            "experiment.eval_every": self.eval_every,
            "sweep.k": ",".join(map(str, self.sweep.k)),
            "sweep.q": ",".join(map(str, self.sweep.q)),
            "sweep.fractions": ",".join(map(str, self.sweep.fractions)),
            "sweep.freeze": ";".join(self.sweep.freeze),
            "sweep.kind": self.sweep.kind.value,
        }
        for name, path in (self.paths or {}).items():
            items[f"data.{name}"] = path
        sections = [("model", self.encoder, ("vocab_size",)), ("pre", self.pre, ("convergence",)),
                    ("mono", self.mono, ("convergence",)), ("ft", self.ft, ("convergence",)),
                    ("meta", self.meta, ("convergence", "stage")), ("convergence", self.meta.convergence, ())]
        if self.source_spec is not None:
            sections += [("synthetic.source", self.source_spec, ()), ("synthetic.target", self.target_spec, ())]
        for prefix, obj, skip in sections:
            for f in dataclasses.fields(obj):
                if f.name not in skip:
                    items[f"{prefix}.{f.name}"] = _text(getattr(obj, f.name))
        return sorted((k, str(v)) for k, v in items.items())

    def echo(self):
        return "".join(f"{k} = {v}\n" for k, v in self.resolved())


def _text(value):
    if hasattr(value, "value"):
        return value.value
    if isinstance(value, (frozenset, set)):
        return block_label(value)
    return value


def _conv_keys(values):
    conv = {}
    for name in ("window", "patience", "min_delta", "enabled"):
        key = f"convergence.{name}"
        if key in values:
            conv[name] = _coerce(values.pop(key), getattr(Convergence(), name), key)
    return Convergence(**conv)


def build_config(values):
    """:class:`ExperimentConfig` from a ``{dotted key: raw}`` mapping.

    Unknown keys are errors so that typos surface instead of silently
    running the defaults.
    """
    raw = tuple(sorted(values.items()))
    values = dict(values)
    pop = values.pop
    family = pop("experiment.family", "mtod").lower()
    try:
        kinds = _list(pop("experiment.kinds", "PRE").upper(), BaselineKind, "experiment.kinds")
    except ConfigError:
        raise ConfigError("experiment.kinds: expected names from "
                          + ", ".join(k.value for k in BaselineKind)) from None
    seed = int(_coerce(pop("experiment.seed", "0"), 0, "experiment.seed"))
    num_seeds = int(_coerce(pop("experiment.num_seeds", "1"), 0, "experiment.num_seeds"))
    if "experiment.seeds" in values:
        seeds = _list(pop("experiment.seeds"), int, "experiment.seeds")
    else:
        seeds = tuple(seed + i for i in range(num_seeds))
    out = pop("experiment.out", "xmetra-out")
    metric = pop("experiment.select_metric", "")
    eval_every = int(_coerce(pop("experiment.eval_every", "100"), 0, "experiment.eval_every"))
    if eval_every < 1:
        raise ConfigError("experiment.eval_every must be >= 1")

    paths = {k[5:]: pop(k) for k in [k for k in values if k.startswith("data.")]}
    known_paths = {"source_train", "target_dev", "target_test"}
    if set(paths) - known_paths:
        raise ConfigError(f"unknown data keys: {sorted(set(paths) - known_paths)}")

    synth = any(k.startswith("synthetic.") for k in values)
    if synth and paths:
        raise ConfigError("give exactly one of data.* corpus paths or synthetic.* settings")
    source_spec = target_spec = None
    if not paths:
        try:
            source_spec = _build(SyntheticLanguageSpec, values, "synthetic.source",
                                 SyntheticLanguageSpec(language="en", base_seed=0))
            target_spec = _build(SyntheticLanguageSpec, values, "synthetic.target",
                                 SyntheticLanguageSpec(language="tgt", base_seed=1, lexical_overlap=0.3,
                                                       permutation_seed=7, dev_size=240))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    leftovers = [k for k in values if k.startswith("synthetic.")]
    if leftovers:
        raise ConfigError(f"unknown synthetic keys: {leftovers}")

    encoder = _build(EncoderConfig, values, "model", EncoderConfig(vocab_size=1), skip=("vocab_size",))
    conv = _conv_keys(values)
    pre = _build(TrainConfig, values, "pre", TrainConfig(learning_rate=1e-2, convergence=conv,
                                                          eval_every=eval_every, max_steps=4000))
    mono = _build(TrainConfig, values, "mono", TrainConfig(convergence=conv, eval_every=eval_every,
                                                           max_steps=10000))
    ft = _build(TrainConfig, values, "ft", TrainConfig(convergence=conv, eval_every=eval_every,
                                                       max_steps=10000))
    meta_base = MetaConfig.for_qa() if family == "qa" else MetaConfig.for_mtod()
    meta_base = meta_base.with_(convergence=conv, eval_every=eval_every, shortfall="replace")
    if "meta.frozen_blocks" in values:
        blocks = parse_blocks(pop("meta.frozen_blocks"), "meta.frozen_blocks")
        if blocks == "all":
            blocks = all_blocks(encoder)
        meta_base = meta_base.with_(frozen_blocks=blocks)
    meta = _build(MetaConfig, values, "meta", meta_base, skip=("convergence", "frozen_blocks", "stage"))

    sweep = SweepConfig()
    if "sweep.k" in values:
        sweep = dataclasses.replace(sweep, k=_list(pop("sweep.k"), int, "sweep.k"))
    if "sweep.q" in values:
        sweep = dataclasses.replace(sweep, q=_list(pop("sweep.q"), int, "sweep.q"))
    if "sweep.fractions" in values:
        sweep = dataclasses.replace(sweep, fractions=_list(pop("sweep.fractions"), float, "sweep.fractions"))
    if "sweep.freeze" in values:
        sweep = dataclasses.replace(sweep, freeze=tuple(s.strip() for s in pop("sweep.freeze").split(";")
                                                        if s.strip()))
    if "sweep.kind" in values:
        try:
            sweep = dataclasses.replace(sweep, kind=BaselineKind(pop("sweep.kind").upper()))
        except ValueError as exc:
            raise ConfigError(f"sweep.kind: {exc}") from None

    if values:
        raise ConfigError(f"unknown config keys: {sorted(values)}")
    return ExperimentConfig(family=family, kinds=kinds, seeds=seeds, out=out, select_metric=metric,
                            eval_every=eval_every, paths=paths or None, source_spec=source_spec,
                            target_spec=target_spec, encoder=encoder, pre=pre, mono=mono, ft=ft, meta=meta,
                            sweep=sweep, raw=raw)


def load_config(path=None, overrides=(), seed=None, out=None):
    """Merge file keys, ``--override`` pairs and flag values (in that order)."""
    values = read_config_file(path) if path else {}
    for item in overrides:
        key, value = parse_override(item)
        values[key] = value
    if seed is not None:
        values.pop("experiment.seeds", None)
        values["experiment.seed"] = str(seed)
    if out is not None:
        values["experiment.out"] = str(out)
    return build_config(values)

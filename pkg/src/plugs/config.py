"""Plain-text ``key=value`` run configuration with ``include`` presets."""
from __future__ import annotations

from pathlib import Path

from .optim import ConfigError, ScheduleConfig, TRAIN_PRESETS, TrainConfig

KNOWN_KEYS = {
    # run
    "seed", "threads", "out",
    # synthetic world / data
    "world_seed", "noise_p", "n", "split", "n_distractors", "data_dir",
    # vocabulary
    "vocab", "vocab_size", "corpus",
    # model / training
    "model_preset", "dropout", "train_preset", "optimizer", "base_lr", "warmup_steps",
    "decay_steps", "decay_rate", "l2_weight", "batch_size", "steps", "checkpoint_every", "resume",
    # decoding / generation
    "beam_width", "max_len", "checkpoint", "features", "label_table", "ids", "split_name",
    # evaluation
    "candidates", "references", "ratings", "stabilizers", "captions", "consistency_noise_p",
    # pipelines
    "kind", "lang", "mode", "kinds", "langs", "seeds", "n_train", "n_test",
}


class RunConfig(dict):
    """Resolved configuration; values stay strings until read through a getter."""

    def get_int(self, key, default=None):
        v = self.get(key)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {v!r}") from None

    def get_float(self, key, default=None):
        v = self.get(key)
        if v is None:
            return default
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {v!r}") from None

    def get_list(self, key, default=()):
        v = self.get(key)
        if v is None:
            return list(default)
        return [x.strip() for x in v.split(",") if x.strip()]

    def require(self, key) -> str:
        if key not in self:
            raise ConfigError(f"missing required key {key!r}")
        return self[key]

    def path(self, key, default=None) -> Path | None:
        v = self.get(key)
        return Path(v) if v is not None else (Path(default) if default is not None else None)

    def dumps(self) -> str:
        return "".join(f"{k}={self[k]}\n" for k in sorted(self))


def parse_config(path, _seen=None) -> RunConfig:
    path = Path(path)
    _seen = set() if _seen is None else _seen
    key = path.resolve()
    if key in _seen:
        raise ConfigError(f"include cycle through {path}")
    _seen.add(key)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    cfg = RunConfig()
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("include "):
            inc = Path(line[len("include "):].strip())
            cfg.update(parse_config(inc if inc.is_absolute() else path.parent / inc, _seen))
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{n}: unknown key {k!r}")
        cfg[k] = v
    return cfg


def train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    base = TRAIN_PRESETS.get(cfg.get("train_preset", "desk"))
    if base is None:
        raise ConfigError(f"unknown train_preset {cfg['train_preset']!r}")
    t = base(seed=seed)
    s = t.schedule
    schedule = ScheduleConfig(cfg.get_float("base_lr", s.base_lr),
                              cfg.get_int("warmup_steps", s.warmup_steps),
                              cfg.get_int("decay_steps", s.decay_steps),
                              cfg.get_float("decay_rate", s.decay_rate))
    return TrainConfig(cfg.get("optimizer", t.optimizer), schedule,
                       cfg.get_float("l2_weight", t.l2_weight),
                       cfg.get_int("batch_size", t.batch_size),
                       cfg.get_float("dropout", t.dropout), seed)

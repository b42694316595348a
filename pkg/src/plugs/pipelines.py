"""TGT, TTG and PLuGS pipelines over the synthetic world.

* TGT trains an English captioner and translates its output at run time.
* TTG trains directly on translated (silver) captions.
* PLuGS trains on ``English <lang> translation`` targets and splits the
  decoded sequence at the separator.

The 2L kinds are bilingual (one target language per model); the 5L kinds
cover all five target languages with a single model.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .features import ObjectLabelTable, make_item
from .metrics import bleu4
from .model import (DecodeConfig, Example, ModelConfig, beam_search_fn, cast_params, encode,
                    init_params, model_step_fn, preset, train)
from .features import embed_batch
from .optim import TrainConfig, desk_config
from .text import (PIVOT, TARGET_LANGS, BpeVocab, MissingSeparator, EmptyCaption,
                   build_mono_target, build_plugs_target, decode_mono, split_output, train_bpe)
from .world import Corpus, SynthTranslator, SyntheticWorld, make_corpus, slot_accuracy

log = logging.getLogger(__name__)

PIPELINE_KINDS = ("TGT", "TTG-2L", "PLuGS-2L", "TTG-5L", "TTG-large-5L", "PLuGS-5L")
BILINGUAL_MAX_LEN = 128
MONO_MAX_LEN = 64
BANNED_LOGP = -1e9


class DatasetConfigError(ValueError):
    pass


def is_plugs(kind: str) -> bool:
    return kind.startswith("PLuGS")


def is_multilingual(kind: str) -> bool:
    return kind.endswith("5L")


def check_kind(kind: str) -> str:
    if kind not in PIPELINE_KINDS:
        raise DatasetConfigError(f"unknown pipeline kind {kind!r}; expected one of {PIPELINE_KINDS}")
    return kind


def _langs_for(kind: str, langs: Sequence[str]) -> list[str]:
    langs = list(langs)
    if not langs:
        raise DatasetConfigError("no target languages given")
    bad = [l for l in langs if l not in TARGET_LANGS]
    if bad:
        raise DatasetConfigError(f"not target languages: {bad}")
    if is_multilingual(kind):
        missing = [l for l in TARGET_LANGS if l not in langs]
        if missing:
            raise DatasetConfigError(f"{kind} needs all five target languages; missing {missing}")
        return list(TARGET_LANGS)
    if kind in ("TTG-2L", "PLuGS-2L") and len(langs) != 1:
        raise DatasetConfigError(f"{kind} is bilingual; give exactly one target language")
    return langs


def build_dataset(kind: str, vocab: BpeVocab, corpus: Corpus, langs: Sequence[str],
                  plugs_include_english: bool = False) -> list[Example]:
    """Training examples for ``kind``.

    Sizes for N images: TGT, TTG-2L and PLuGS-2L give N; TTG-5L gives 6N
    (five translations plus English); PLuGS-5L gives 5N (5N + N with
    ``plugs_include_english``).
    """
    check_kind(kind)
    langs = _langs_for(kind, langs) if kind != "TGT" else []
    en = corpus.captions[PIVOT]
    out: list[Example] = []

    def mono(image_id, lang, text):
        rec = corpus.features[image_id]
        target = (vocab.sos(lang),) + tuple(build_mono_target(vocab, text))
        out.append(Example(make_item(rec.image, rec.labels, lang), target))

    def bilingual(image_id, lang):
        rec = corpus.features[image_id]
        body = build_plugs_target(vocab, en[image_id], corpus.captions[lang][image_id], lang)
        out.append(Example(make_item(rec.image, rec.labels, lang), (vocab.sos(lang),) + tuple(body)))

    for image_id in corpus.ids():
        if kind == "TGT":
            mono(image_id, PIVOT, en[image_id])
        elif kind == "TTG-2L":
            mono(image_id, langs[0], corpus.captions[langs[0]][image_id])
        elif kind == "PLuGS-2L":
            bilingual(image_id, langs[0])
        elif kind in ("TTG-5L", "TTG-large-5L"):
            for lang in langs:
                mono(image_id, lang, corpus.captions[lang][image_id])
            mono(image_id, PIVOT, en[image_id])
        else:
            for lang in langs:
                bilingual(image_id, lang)
            if plugs_include_english:
                mono(image_id, PIVOT, en[image_id])
    return out


@dataclass
class TrainedModel:
    kind: str
    cfg: ModelConfig
    params: dict
    vocab: BpeVocab
    table: ObjectLabelTable
    langs: tuple
    losses: list = field(default_factory=list)


def model_preset_for(kind: str) -> str:
    return "desk_large" if kind == "TTG-large-5L" else "desk_tiny"


def train_pipeline(kind: str, corpus: Corpus, vocab: BpeVocab, table: ObjectLabelTable,
                   langs: Sequence[str], train_cfg: TrainConfig, steps: int,
                   model_preset: str | None = None, dropout: float | None = None) -> TrainedModel:
    examples = build_dataset(kind, vocab, corpus, langs)
    cfg = preset(model_preset or model_preset_for(kind), len(vocab),
                 train_cfg.dropout if dropout is None else dropout)
    params = init_params(cfg, train_cfg.seed)
    losses: list = []
    train(params, cfg, table, examples, train_cfg, steps, pad_id=vocab.pad,
          log=lambda s, lr, loss: losses.append(loss))
    used = [PIVOT] if kind == "TGT" else _langs_for(kind, langs)
    return TrainedModel(kind, cfg, params, vocab, table, tuple(used), losses)


def _banned_step(step, banned: Sequence[int]):
    banned = np.asarray(sorted(banned), dtype=np.int64)

    def wrapped(prefixes):
        logp = np.array(step(prefixes))
        logp[:, banned] = BANNED_LOGP
        return logp

    return wrapped


def generate_raw(model: TrainedModel, record, lang: str, dcfg: DecodeConfig,
                 banned: Sequence[int] = ()) -> list[int]:
    enc = embed_batch(model.params, model.table, [make_item(record.image, record.labels, lang)],
                      model.vocab.pad)
    memory = encode(model.params, model.cfg, enc)
    step = model_step_fn(model.params, model.cfg, memory, enc.mask, model.vocab.sos(lang))
    if banned:
        step = _banned_step(step, banned)
    return beam_search_fn(step, model.vocab.eos, dcfg)


def default_decode(kind: str, beam_width: int = 5) -> DecodeConfig:
    return DecodeConfig(beam_width, BILINGUAL_MAX_LEN if is_plugs(kind) else MONO_MAX_LEN)


def run_pipeline(kind: str, model: TrainedModel, record, lang: str, engine,
                 dcfg: DecodeConfig | None = None) -> tuple[str, Optional[str]]:
    """(caption in ``lang``, stabilizer or None).

    For TGT the second element is the English caption that was translated.
    TTG/TGT decoding never emits separator tokens; PLuGS propagates
    :class:`MissingSeparator`.
    """
    dcfg = dcfg or default_decode(kind)
    vocab = model.vocab
    seps = list(vocab.special.sep.values())
    if kind == "TGT":
        en = decode_mono(vocab, generate_raw(model, record, PIVOT, dcfg, seps))
        return engine.translate(en, PIVOT, lang), en
    if is_plugs(kind):
        out = split_output(vocab, generate_raw(model, record, lang, dcfg), lang)
        return out.caption, out.stabilizer
    return decode_mono(vocab, generate_raw(model, record, lang, dcfg, seps)), None


@dataclass
class EvalResult:
    kind: str
    lang: str
    slot_accuracy: float
    ok_rate: float                 # percent of items with every slot right
    stabilizer_accuracy: Optional[float] = None
    consistency_bleu: Optional[float] = None
    consistency_bleu_noisy: Optional[float] = None
    rejects: int = 0
    captions: list = field(default_factory=list)
    stabilizers: list = field(default_factory=list)


def evaluate(model: TrainedModel, world: SyntheticWorld, test: Corpus, lang: str,
             engine, dcfg: DecodeConfig | None = None) -> EvalResult:
    """Slot accuracy on held-out scenes; PLuGS also gets stabilizer/caption consistency."""
    kind = model.kind
    accs, stab_accs = [], []
    caps, stabs, pairs = [], [], []
    rejects = 0
    for image_id in test.ids():
        scene = test.scenes[image_id]
        try:
            caption, stab = run_pipeline(kind, model, test.features[image_id], lang, engine, dcfg)
        except (MissingSeparator, EmptyCaption):
            rejects += 1
            accs.append(0.0)
            caps.append("")
            stabs.append(None)
            continue
        accs.append(slot_accuracy(world, caption, lang, scene))
        caps.append(caption)
        stabs.append(stab)
        if is_plugs(kind):
            stab_accs.append(slot_accuracy(world, stab, PIVOT, scene))
            pairs.append((stab, caption))
    res = EvalResult(kind, lang, float(np.mean(accs)),
                     100.0 * float(np.mean([a == 1.0 for a in accs])), rejects=rejects,
                     captions=caps, stabilizers=stabs)
    if is_plugs(kind) and pairs:
        res.stabilizer_accuracy = float(np.mean(stab_accs))
        res.consistency_bleu = consistency_bleu(world, [s for s, _ in pairs], [c for _, c in pairs],
                                                lang, noise_p=0.0)
        res.consistency_bleu_noisy = consistency_bleu(world, [s for s, _ in pairs],
                                                      [c for _, c in pairs], lang)
    return res


def consistency_bleu(world: SyntheticWorld, stabilizers: Sequence[str], captions: Sequence[str],
                     lang: str, noise_p: float | None = None) -> float:
    """BLEU-4 of translated stabilizers, scored with the captions as references."""
    engine = SynthTranslator(world, noise_p)
    return bleu4([engine.translate(s, PIVOT, lang) for s in stabilizers], list(captions))


# -- comparison ----------------------------------------------------------------

@dataclass(frozen=True)
class CompareConfig:
    kinds: tuple = ("TGT", "TTG-2L", "PLuGS-2L")
    langs: tuple = ("fr",)
    seeds: tuple = (0, 1, 2)
    n_train: int = 2000
    n_test: int = 200
    noise_p: float = 0.15
    world_seed: int = 0
    steps: int = 800
    vocab_size: int = 512
    beam_width: int = 5
    train_preset: TrainConfig = field(default_factory=desk_config)


@dataclass
class ReportRow:
    kind: str
    lang: str
    slot_acc: list
    ok_rate: list
    consistency: list
    consistency_noisy: list
    rejects: list

    @staticmethod
    def _fmt(values) -> tuple[str, str, str]:
        if not values:
            return "n/a", "n/a", "n/a"
        return f"{np.mean(values):.4f}", f"{min(values):.4f}", f"{max(values):.4f}"

    def cells(self) -> list[str]:
        return [self.kind, self.lang, *self._fmt(self.slot_acc), self._fmt(self.ok_rate)[0],
                *self._fmt(self.consistency), self._fmt(self.consistency_noisy)[0],
                str(sum(self.rejects))]


REPORT_HEADER = ["kind", "lang", "slot_acc_mean", "slot_acc_min", "slot_acc_max", "ok_rate_mean",
                 "consistency_bleu_mean", "consistency_bleu_min", "consistency_bleu_max",
                 "consistency_bleu_noisy_mean", "rejects"]


@dataclass
class CompareReport:
    rows: list
    config: CompareConfig

    def row(self, kind: str, lang: str) -> ReportRow:
        return next(r for r in self.rows if r.kind == kind and r.lang == lang)

    def to_tsv(self) -> str:
        lines = ["\t".join(REPORT_HEADER)] + ["\t".join(r.cells()) for r in self.rows]
        return "\n".join(lines) + "\n"


def prepare_data(cfg: CompareConfig, seed: int, langs: Sequence[str]):
    world = SyntheticWorld(seed=cfg.world_seed, noise_p=cfg.noise_p)
    full = make_corpus(world, cfg.n_train + cfg.n_test, seed, langs=list(langs))
    ids = full.ids()
    train_c, test_c = full.subset(ids[:cfg.n_train]), full.subset(ids[cfg.n_train:])
    lines = [c for by_id in train_c.captions.values() for c in by_id.values()]
    vocab = train_bpe(lines, cfg.vocab_size)
    table = ObjectLabelTable.random(world.label_vocabulary(), cfg.world_seed)
    return world, train_c, test_c, vocab, table


def compare_pipelines(cfg: CompareConfig, progress=None) -> CompareReport:
    """Train every kind on identical data per seed; score held-out slot accuracy."""
    for k in cfg.kinds:
        check_kind(k)
    if not cfg.seeds:
        raise DatasetConfigError("need at least one seed")
    needs_all = any(is_multilingual(k) for k in cfg.kinds)
    data_langs = list(TARGET_LANGS) if needs_all else list(cfg.langs)
    rows = {(k, l): ReportRow(k, l, [], [], [], [], []) for k in cfg.kinds for l in cfg.langs}
    for seed in cfg.seeds:
        world, train_c, test_c, vocab, table = prepare_data(cfg, seed, data_langs)
        tcfg = cfg.train_preset.with_seed(seed)
        for kind in cfg.kinds:
            groups = [list(cfg.langs)] if not (kind in ("TTG-2L", "PLuGS-2L")) else [[l] for l in cfg.langs]
            for group in groups:
                model = train_pipeline(kind, train_c, vocab, table,
                                       data_langs if is_multilingual(kind) else group, tcfg, cfg.steps)
                for lang in group:
                    engine = SynthTranslator(world)
                    res = evaluate(model, world, test_c, lang, engine,
                                   default_decode(kind, cfg.beam_width))
                    row = rows[(kind, lang)]
                    row.slot_acc.append(res.slot_accuracy)
                    row.ok_rate.append(res.ok_rate)
                    row.rejects.append(res.rejects)
                    if res.consistency_bleu is not None:
                        row.consistency.append(res.consistency_bleu)
                        row.consistency_noisy.append(res.consistency_bleu_noisy)
                    if progress:
                        progress(seed, kind, lang, res, model)
    return CompareReport(list(rows.values()), cfg)

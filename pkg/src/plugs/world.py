"""A small scene grammar whose captions can be checked slot by slot.

Each scene fills four slots (subject, verb, object, modifier).  English
captions follow one template; every other language has its own lexicon of
generated words and its own word order.  Translation between languages is a
deterministic function of the text, with optional seeded word drops and
same-category substitutions standing in for silver-data noise.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol

import numpy as np

from .features import IMAGE_DIM, ImageRecord
from .text import LANGS, PIVOT, DataError, check_lang

SLOTS = ("subject", "verb", "object", "modifier")

INVENTORY = {
    "subject": ("dog", "cat", "horse", "bird", "girl", "boy", "man", "woman", "cow", "sheep"),
    "verb": ("chases", "watches", "carries", "pulls", "finds", "holds", "kicks", "paints"),
    "object": ("ball", "box", "kite", "bottle", "chair", "hat", "rope", "basket", "drum", "flag"),
    "modifier": ("small", "big", "red", "blue", "old", "young", "happy", "brown"),
}
ARTICLES = ("a", "the")

# template elements: "A" / "THE" articles, otherwise a slot name
ORDERS = {
    "en": ("A", "modifier", "subject", "verb", "THE", "object"),
    "fr": ("A", "subject", "modifier", "verb", "THE", "object"),
    "it": ("A", "subject", "modifier", "verb", "THE", "object"),
    "es": ("A", "subject", "modifier", "verb", "THE", "object"),
    "de": ("A", "modifier", "subject", "THE", "object", "verb"),
    "hi": ("modifier", "subject", "object", "verb"),
}

_SYLLABLES = {
    "fr": (("b", "d", "f", "l", "m", "n", "p", "r", "s", "t", "v", "ch"),
           ("a", "e", "i", "o", "u", "é", "è", "ou", "ai", "on")),
    "it": (("b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v"),
           ("a", "e", "i", "o", "u", "ò", "à")),
    "de": (("b", "d", "f", "g", "h", "k", "l", "m", "n", "r", "s", "t", "w", "sch", "z"),
           ("a", "e", "i", "o", "u", "ä", "ö", "ü", "ei", "au")),
    "es": (("b", "c", "d", "g", "l", "m", "n", "ñ", "p", "r", "s", "t", "v", "ll"),
           ("a", "e", "i", "o", "u", "á", "í", "ó")),
    "hi": (("क", "ग", "च", "ज", "त", "द", "न", "प", "ब", "म", "र", "ल", "स", "ह"),
           ("", "ा", "ि", "ी", "ु", "े", "ो")),
}


def _category(word: str) -> Optional[str]:
    for slot, values in INVENTORY.items():
        if word in values:
            return slot
    if word in ARTICLES:
        return "article"
    return None


@dataclass(frozen=True)
class Scene:
    subject: str
    verb: str
    object: str
    modifier: str

    def __post_init__(self):
        for slot in SLOTS:
            if getattr(self, slot) not in INVENTORY[slot]:
                raise ValueError(f"{getattr(self, slot)!r} is not a {slot}")

    def slots(self) -> dict:
        return {s: getattr(self, s) for s in SLOTS}


def label_ids() -> dict:
    """Label id of every slot value, in slot order."""
    ids, k = {}, 0
    for slot in SLOTS:
        for value in INVENTORY[slot]:
            ids[value] = k
            k += 1
    return ids


N_SLOT_LABELS = sum(len(v) for v in INVENTORY.values())


def _stable_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


@dataclass
class SyntheticWorld:
    seed: int = 0
    noise_p: float = 0.0
    n_distractors: int = 2
    distractor_pool: int = 12
    image_noise: float = 0.1
    lexicon: dict = field(init=False, repr=False)
    reverse: dict = field(init=False, repr=False)
    slot_vectors: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.noise_p <= 1.0:
            raise ValueError("noise_p must lie in [0, 1]")
        self.lexicon = {"en": {w: w for w in self._english_words()}}
        for lang in LANGS[1:]:
            self.lexicon[lang] = self._make_lexicon(lang)
        self.reverse = {l: {v: k for k, v in lex.items()} for l, lex in self.lexicon.items()}
        rng = np.random.default_rng(_stable_seed("vectors", self.seed))
        self.slot_vectors = {w: rng.standard_normal(IMAGE_DIM).astype(np.float32)
                             for slot in SLOTS for w in INVENTORY[slot]}

    @staticmethod
    def _english_words() -> list[str]:
        return [w for slot in SLOTS for w in INVENTORY[slot]] + list(ARTICLES)

    def _make_lexicon(self, lang: str) -> dict:
        onsets, vowels = _SYLLABLES[lang]
        rng = np.random.default_rng(_stable_seed("lexicon", self.seed, lang))
        used, lex = set(), {}
        for word in self._english_words():
            if lang == "hi" and word in ARTICLES:
                continue
            n_syl = 1 if word in ARTICLES else 2 + (len(word) > 5)
            while True:
                cand = "".join(onsets[rng.integers(len(onsets))] + vowels[rng.integers(len(vowels))]
                               for _ in range(n_syl))
                if cand not in used and cand not in ARTICLES:
                    break
            used.add(cand)
            lex[word] = cand
        return lex

    # -- scenes ---------------------------------------------------------------

    def random_scene(self, rng: np.random.Generator) -> Scene:
        return Scene(*(INVENTORY[s][rng.integers(len(INVENTORY[s]))] for s in SLOTS))

    def render(self, scene: Scene, lang: str = PIVOT) -> str:
        lex = self.lexicon[check_lang(lang)]
        words = []
        for el in ORDERS[lang]:
            if el == "A":
                words.append(lex["a"])
            elif el == "THE":
                words.append(lex["the"])
            else:
                words.append(lex[getattr(scene, el)])
        return " ".join(words)

    def parse(self, text: str, lang: str = PIVOT) -> Optional[Scene]:
        """Strict inverse of :meth:`render`; ``None`` if the text does not fit."""
        rev = self.reverse[check_lang(lang)]
        words = text.split()
        order = ORDERS[lang]
        if len(words) != len(order):
            return None
        slots = {}
        for el, w in zip(order, words):
            en = rev.get(w)
            if el in ("A", "THE"):
                if en != el.lower():
                    return None
            elif en is None or _category(en) != el:
                return None
            else:
                slots[el] = en
        return Scene(**slots)

    def read_slots(self, text: str, lang: str) -> dict:
        """Lenient reading: the slot values found in ``text``, regardless of order.

        A slot is ``None`` when no word or more than one distinct word of its
        category appears.
        """
        rev = self.reverse[check_lang(lang)]
        found: dict = {s: set() for s in SLOTS}
        for w in text.split():
            en = rev.get(w)
            cat = _category(en) if en is not None else None
            if cat in found:
                found[cat].add(en)
        return {s: next(iter(v)) if len(v) == 1 else None for s, v in found.items()}

    # -- examples -------------------------------------------------------------

    def labels_for(self, scene: Scene, rng: np.random.Generator) -> tuple:
        ids = label_ids()
        true = [ids[scene.subject], ids[scene.object], ids[scene.modifier], ids[scene.verb]]
        extra = rng.choice(self.distractor_pool, size=self.n_distractors, replace=False) \
            + N_SLOT_LABELS if self.n_distractors else []
        return tuple(true + [int(e) for e in extra])

    def label_vocabulary(self) -> list[int]:
        return list(range(N_SLOT_LABELS + self.distractor_pool))

    def synth_example(self, scene: Scene, index: int = 0) -> tuple[ImageRecord, str]:
        rng = np.random.default_rng(_stable_seed("image", self.seed, index, *scene.slots().values()))
        vec = sum(self.slot_vectors[getattr(scene, s)] for s in SLOTS)
        vec = vec + self.image_noise * rng.standard_normal(IMAGE_DIM)
        return ImageRecord(vec.astype(np.float32), self.labels_for(scene, rng)), self.render(scene)

    # -- translation ----------------------------------------------------------

    def translate(self, text: str, tgt: str, src: str = PIVOT, noise_p: float | None = None) -> str:
        """Map ``text`` from ``src`` to ``tgt``.

        Text that parses under the source template is re-rendered in the
        target word order; anything else is mapped word by word, unknown
        words passing through.  Each output word is then dropped with
        probability p/2 or replaced by another word of its category with
        probability p/2, using a generator seeded by the text itself.
        """
        check_lang(tgt)
        check_lang(src)
        p = self.noise_p if noise_p is None else noise_p
        scene = self.parse(text, src)
        if scene is not None:
            words = self.render(scene, tgt).split()
        else:
            rev, lex = self.reverse[src], self.lexicon[tgt]
            words = []
            for w in text.split():
                en = rev.get(w)
                if en is None:
                    words.append(w)
                elif en in lex:
                    words.append(lex[en])
        if p == 0.0 or src == tgt:
            return " ".join(words)
        rng = np.random.default_rng(_stable_seed("noise", self.seed, src, tgt, p, text))
        out = []
        rev_t = self.reverse[tgt]
        for w in words:
            r = rng.random()
            if r < p / 2:
                continue
            if r < p:
                en = rev_t.get(w)
                cat = _category(en) if en is not None else None
                if cat is None:
                    continue
                pool = ARTICLES if cat == "article" else INVENTORY[cat]
                pool = [x for x in pool if x != en and x in self.lexicon[tgt]]
                if not pool:
                    continue
                w = self.lexicon[tgt][pool[rng.integers(len(pool))]]
            out.append(w)
        return " ".join(out)


def synth_example(world: SyntheticWorld, scene: Scene, index: int = 0):
    return world.synth_example(scene, index)


def synth_translate(world: SyntheticWorld, text: str, tgt: str, src: str = PIVOT) -> str:
    return world.translate(text, tgt, src)


def slot_accuracy(world: SyntheticWorld, caption: str, lang: str, scene: Scene) -> float:
    """Fraction of the scene's slots that the caption states correctly."""
    if not caption or not caption.split():
        return 0.0
    read = world.read_slots(caption, lang)
    return sum(read[s] == getattr(scene, s) for s in SLOTS) / len(SLOTS)


class TranslationEngine(Protocol):
    def translate(self, text: str, src: str, tgt: str) -> str: ...


class SynthTranslator:
    """Translation engine backed by the synthetic world; counts its calls."""

    def __init__(self, world: SyntheticWorld, noise_p: float | None = None):
        self.world = world
        self.noise_p = world.noise_p if noise_p is None else noise_p
        self.calls = 0

    def translate(self, text: str, src: str, tgt: str) -> str:
        self.calls += 1
        return self.world.translate(text, tgt, src, noise_p=self.noise_p)


# -- corpora -------------------------------------------------------------------

@dataclass
class Corpus:
    """Image features, the hidden scenes, and per-language captions by image id."""

    features: dict
    scenes: dict
    captions: dict        # lang -> image_id -> text

    def ids(self) -> list[str]:
        return list(self.features)

    def subset(self, ids: Iterable[str]) -> "Corpus":
        ids = list(ids)
        return Corpus({i: self.features[i] for i in ids}, {i: self.scenes[i] for i in ids},
                      {l: {i: c[i] for i in ids if i in c} for l, c in self.captions.items()})


def make_corpus(world: SyntheticWorld, n: int, seed: int, langs=LANGS[1:],
                engine: TranslationEngine | None = None, prefix: str = "img") -> Corpus:
    """``n`` scenes with English captions and their (silver) translations."""
    engine = engine or SynthTranslator(world)
    rng = np.random.default_rng(_stable_seed("scenes", world.seed, seed))
    features, scenes, captions = {}, {}, {"en": {}}
    width = len(str(n - 1))
    for k in range(n):
        scene = world.random_scene(rng)
        image_id = f"{prefix}{seed}_{k:0{width}d}"
        rec, en = world.synth_example(scene, _stable_seed(seed, k))
        features[image_id] = rec
        scenes[image_id] = scene
        captions["en"][image_id] = en
    for lang in langs:
        captions[lang] = {i: engine.translate(c, "en", lang) for i, c in captions["en"].items()}
    return Corpus(features, scenes, captions)


def write_captions(path, captions: dict) -> None:
    """One ``image_id<TAB>lang<TAB>caption`` line per record."""
    lines = [f"{i}\t{lang}\t{text}\n" for lang, by_id in captions.items() for i, text in by_id.items()]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_captions(path) -> dict:
    out: dict = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"line {n}: expected image_id, lang, caption")
        image_id, lang, text = parts
        out.setdefault(check_lang(lang), {})[image_id] = text
    return out

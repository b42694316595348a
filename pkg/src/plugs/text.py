"""Byte-pair encoding with per-language reserved tokens, and bilingual targets.

Text is split on whitespace; every word ends with an end-of-word marker and
merges never cross word boundaries.  Characters outside the learned alphabet
fall back to one token per UTF-8 byte, followed by ``<eow>`` when the word
ends on such a character, so decoding is always exact for single-spaced text.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

LANGS = ("en", "fr", "it", "de", "es", "hi")
TARGET_LANGS = LANGS[1:]
PIVOT = "en"

EOW = "</w>"
MAGIC = "PLUGS-BPE v1"


class VocabularyError(ValueError):
    pass


class BpeConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class MissingSeparator(DataError):
    pass


class EmptyCaption(DataError):
    pass


def check_lang(lang: str) -> str:
    if lang not in LANGS:
        raise ValueError(f"unknown language {lang!r}; expected one of {LANGS}")
    return lang


def _byte_token(b: int) -> str:
    return f"<0x{b:02X}>"


def reserved_tokens() -> list[str]:
    toks = ["<pad>", "</s>", "<eow>"]
    toks += [f"<s:{l}>" for l in LANGS]
    toks += [f"<{l}>" for l in LANGS]
    toks += [_byte_token(b) for b in range(256)]
    return toks


@dataclass(frozen=True)
class SpecialTokens:
    pad: int
    eos: int
    eow: int
    sos: dict
    sep: dict

    def all(self) -> set[int]:
        return {self.pad, self.eos, self.eow, *self.sos.values(), *self.sep.values()}


class BpeVocab:
    """Shared subword vocabulary.

    ``tokens[i]`` is the string of token ``i``.  The first block of ids is
    reserved (specials, byte fallback, base alphabet); merged subwords follow
    in merge order.
    """

    def __init__(self, reserved: Sequence[str], merges: Sequence[tuple[str, str]]):
        self.tokens: list[str] = list(reserved)
        self.n_reserved = len(self.tokens)
        self.merges: list[tuple[str, str]] = [tuple(m) for m in merges]
        self.tokens += [a + b for a, b in self.merges]
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise VocabularyError("duplicate token strings")
        self.ranks = {m: r for r, m in enumerate(self.merges)}
        tid = self.token_to_id
        self.special = SpecialTokens(
            pad=tid["<pad>"], eos=tid["</s>"], eow=tid["<eow>"],
            sos={l: tid[f"<s:{l}>"] for l in LANGS},
            sep={l: tid[f"<{l}>"] for l in LANGS},
        )
        self._special_ids = self.special.all()
        self._byte_ids = {tid[_byte_token(b)]: b for b in range(256)}
        self._cache: dict[str, list[int]] = {}

    def __len__(self):
        return len(self.tokens)

    @property
    def pad(self):
        return self.special.pad

    @property
    def eos(self):
        return self.special.eos

    def sos(self, lang: str) -> int:
        return self.special.sos[check_lang(lang)]

    def sep(self, lang: str) -> int:
        return self.special.sep[check_lang(lang)]

    # -- encoding -------------------------------------------------------------

    def _encode_word(self, word: str) -> list[int]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        tid = self.token_to_id
        pieces: list[str] = []
        trailing_eow = False
        last = len(word) - 1
        for i, ch in enumerate(word):
            if i == last and ch + EOW in tid:
                pieces.append(ch + EOW)
            elif ch in tid:
                pieces.append(ch)
                trailing_eow = i == last
            else:
                pieces.extend(_byte_token(b) for b in ch.encode("utf-8"))
                trailing_eow = i == last
        while len(pieces) > 1:
            best, best_rank = None, None
            for j in range(len(pieces) - 1):
                r = self.ranks.get((pieces[j], pieces[j + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = j, r
            if best is None:
                break
            pair = self.merges[best_rank]
            merged, j = [], 0
            while j < len(pieces):
                if j < len(pieces) - 1 and (pieces[j], pieces[j + 1]) == pair:
                    merged.append(pieces[j] + pieces[j + 1])
                    j += 2
                else:
                    merged.append(pieces[j])
                    j += 1
            pieces = merged
        ids = [tid[p] for p in pieces]
        if trailing_eow:
            ids.append(self.special.eow)
        self._cache[word] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        out: list[int] = []
        for word in text.split():
            out.extend(self._encode_word(word))
        return out

    def decode(self, ids: Iterable[int]) -> str:
        parts: list[str] = []
        buf = bytearray()

        def flush():
            if buf:
                parts.append(buf.decode("utf-8", errors="replace"))
                buf.clear()

        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise VocabularyError(f"unknown token id {i}")
            if i in self._byte_ids:
                buf.append(self._byte_ids[i])
                continue
            flush()
            if i == self.special.eow:
                parts.append(" ")
            elif i in self._special_ids:
                if parts and not parts[-1].endswith(" "):
                    parts.append(" ")
                parts.append(self.tokens[i] + " ")
            else:
                tok = self.tokens[i]
                parts.append(tok[:-len(EOW)] + " " if tok.endswith(EOW) else tok)
        flush()
        return "".join(parts).strip(" ")

    # -- persistence ----------------------------------------------------------

    def dumps(self) -> str:
        lines = [MAGIC]
        lines += [f"#RES {i} {t}" for i, t in enumerate(self.tokens[:self.n_reserved])]
        lines += [f"#MRG {a} {b}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_bytes(self.dumps().encode("utf-8"))

    @classmethod
    def loads(cls, text: str) -> "BpeVocab":
        lines = text.split("\n")
        if not lines or lines[0] != MAGIC:
            raise VocabularyError("missing PLUGS-BPE header")
        reserved, merges = [], []
        for n, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            if line.startswith("#RES "):
                _, idx, tok = line.split(" ", 2)
                if int(idx) != len(reserved):
                    raise VocabularyError(f"line {n}: reserved ids must be contiguous")
                reserved.append(tok)
            elif line.startswith("#MRG "):
                parts = line.split(" ")
                if len(parts) != 3:
                    raise VocabularyError(f"line {n}: malformed merge")
                merges.append((parts[1], parts[2]))
            else:
                raise VocabularyError(f"line {n}: unrecognized record")
        return cls(reserved, merges)

    @classmethod
    def load(cls, path) -> "BpeVocab":
        return cls.loads(Path(path).read_bytes().decode("utf-8"))


def train_bpe(corpus: Iterable[str], target_size: int) -> BpeVocab:
    """Greedy BPE: repeatedly merge the most frequent adjacent pair.

    Ties go to the lexicographically smallest pair.  Training stops at
    ``target_size`` tokens or when no pair occurs at least twice.
    """
    counts = Counter()
    for line in corpus:
        counts.update(line.split())
    if not counts:
        raise BpeConfigError("empty corpus")
    words = {w: tuple(w[:-1]) + (w[-1] + EOW,) for w in counts}
    alphabet = sorted({s for syms in words.values() for s in syms})
    reserved = reserved_tokens()
    reserved += [s for s in alphabet if s not in set(reserved)]
    if target_size < len(reserved):
        raise BpeConfigError(
            f"target_size {target_size} < base alphabet + reserved ({len(reserved)})")

    known = set(reserved)
    banned: set = set()
    merges: list[tuple[str, str]] = []
    segs = {w: list(s) for w, s in words.items()}
    while len(reserved) + len(merges) < target_size:
        stats: Counter = Counter()
        for w, syms in segs.items():
            c = counts[w]
            for pair in zip(syms, syms[1:]):
                stats[pair] += c
        best = None
        for pair, c in stats.items():
            if pair in banned:
                continue
            if best is None or c > stats[best] or (c == stats[best] and pair < best):
                best = pair
        if best is None or stats[best] < 2:
            break
        joined = best[0] + best[1]
        if joined in known:
            banned.add(best)
            continue
        merges.append(best)
        known.add(joined)
        for w, syms in segs.items():
            if len(syms) < 2:
                continue
            out, j = [], 0
            while j < len(syms):
                if j < len(syms) - 1 and syms[j] == best[0] and syms[j + 1] == best[1]:
                    out.append(joined)
                    j += 2
                else:
                    out.append(syms[j])
                    j += 1
            segs[w] = out
    return BpeVocab(reserved, merges)


def encode(vocab: BpeVocab, text: str) -> list[int]:
    return vocab.encode(text)


def decode(vocab: BpeVocab, ids: Iterable[int]) -> str:
    return vocab.decode(ids)


@dataclass(frozen=True)
class BilingualOutput:
    stabilizer: str
    caption: str
    lang: str


def build_plugs_target(vocab: BpeVocab, stabilizer_text: str, caption_text: str,
                       lang: str) -> list[int]:
    """Token ids for ``stabilizer <lang> caption </s>`` (no start token)."""
    check_lang(lang)
    if lang == PIVOT:
        raise DataError("the pivot language cannot be its own target")
    if not caption_text.split():
        raise DataError("empty caption")
    return vocab.encode(stabilizer_text) + [vocab.sep(lang)] + vocab.encode(caption_text) \
        + [vocab.eos]


def build_mono_target(vocab: BpeVocab, caption_text: str) -> list[int]:
    if not caption_text.split():
        raise DataError("empty caption")
    return vocab.encode(caption_text) + [vocab.eos]


def _strip_frame(vocab: BpeVocab, ids: Sequence[int]) -> list[int]:
    ids = [int(i) for i in ids]
    sos = set(vocab.special.sos.values())
    start = 0
    while start < len(ids) and ids[start] in sos:
        start += 1
    body = ids[start:]
    if vocab.eos in body:
        body = body[:body.index(vocab.eos)]
    return [i for i in body if i != vocab.pad]


def split_output(vocab: BpeVocab, ids: Sequence[int], lang: str) -> BilingualOutput:
    """Split a decoded PLuGS sequence at the first ``<lang>`` separator.

    Later separators stay in the caption and decode as literal text.
    """
    body = _strip_frame(vocab, ids)
    sep = vocab.sep(lang)
    if sep not in body:
        raise MissingSeparator(f"no <{lang}> separator in output")
    k = body.index(sep)
    caption = vocab.decode(body[k + 1:])
    if not caption:
        raise EmptyCaption("caption side of the separator is empty")
    return BilingualOutput(vocab.decode(body[:k]), caption, lang)


def decode_mono(vocab: BpeVocab, ids: Sequence[int]) -> str:
    return vocab.decode(_strip_frame(vocab, ids))

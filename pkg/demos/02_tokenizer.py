"""
Subword vocabulary and bilingual targets
========================================

A BPE vocabulary is trained on captions. A bilingual training target is the
English caption, the target-language separator, then the target caption.
Decoding splits at the first separator.
"""
from plugs.text import build_plugs_target, split_output, train_bpe
from plugs.world import SyntheticWorld, make_corpus

world = SyntheticWorld(seed=0)
corpus = make_corpus(world, 300, seed=0)
lines = [c for by_id in corpus.captions.values() for c in by_id.values()]
vocab = train_bpe(lines, 480)
print(len(vocab), "tokens,", len(vocab.merges), "merges; first merges:", vocab.merges[:5])

image_id = corpus.ids()[0]
en, de = corpus.captions["en"][image_id], corpus.captions["de"][image_id]
ids = [vocab.sos("de")] + build_plugs_target(vocab, en, de, "de")
print("target tokens:", [vocab.tokens[i] for i in ids])

out = split_output(vocab, ids, "de")
print("stabilizer:", out.stabilizer)
print("caption:   ", out.caption)

# characters never seen in training survive through byte tokens
print(vocab.decode(vocab.encode("ein Hund ☃")))

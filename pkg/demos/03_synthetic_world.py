"""
The synthetic captioning world
==============================

Scenes have four slots (subject, verb, object, modifier). Each language
has its own pseudo-word lexicon and word order, and translation can be
made noisy, standing in for silver machine-translated training data.
"""
import numpy as np

from plugs.world import SyntheticWorld, slot_accuracy

clean = SyntheticWorld(seed=0, noise_p=0.0)
noisy = SyntheticWorld(seed=0, noise_p=0.15)

scene = clean.random_scene(np.random.default_rng(1))
english = clean.render(scene)
print(scene)
for lang in ("en", "fr", "de", "hi"):
    print(f"{lang}  clean: {clean.render(scene, lang):40s} noisy: {noisy.translate(english, lang)}")

# slot accuracy reads captions back into slots
fr = clean.render(scene, "fr")
print("slot accuracy of the clean fr caption:", slot_accuracy(clean, fr, "fr", scene))
subject = clean.lexicon["fr"][scene.subject]
print("without the subject word:", slot_accuracy(clean, fr.replace(subject, ""), "fr", scene))

# how often does noisy translation keep every slot?
rng = np.random.default_rng(2)
scenes = [clean.random_scene(rng) for _ in range(500)]
kept = np.mean([slot_accuracy(clean, noisy.translate(clean.render(s), "fr"), "fr", s) == 1.0 for s in scenes])
print(f"noisy fr translations with all slots intact: {kept:.1%}")

"""
Comparing TGT, TTG and PLuGS on the same data
=============================================

TGT trains on English and translates at run time; TTG trains on translated
captions; PLuGS trains on English + translation and keeps the target half.
A reduced version of the acceptance comparison (one seed, fewer steps).
"""
from plugs.pipelines import CompareConfig, compare_pipelines

cfg = CompareConfig(kinds=("TGT", "TTG-2L", "PLuGS-2L"), langs=("fr",), seeds=(0,),
                    n_train=1000, n_test=60, steps=300, beam_width=3)
report = compare_pipelines(cfg, progress=lambda seed, kind, lang, res, _: print(
    f"seed {seed} {kind:9s} {lang} slot accuracy {res.slot_accuracy:.3f}"))
print(report.to_tsv())

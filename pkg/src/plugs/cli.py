"""Command-line entry points.

    plugs synth    --config run.cfg --out data/
    plugs vocab    --config run.cfg --out data/
    plugs train    --config run.cfg --kind PLuGS-2L --lang fr --out runs/plugs_fr/
    plugs generate --config run.cfg --mode PLuGS-2L --lang fr --out gen/
    plugs eval     {bleu,cider,ratings,spearman,consistency} --config run.cfg
    plugs compare  --config run.cfg --out cmp/

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .config import RunConfig, parse_config, train_config
from .features import (FeatureFormatError, ObjectLabelTable, load_features_file,
                       write_features_file)
from .model import (Checkpoint, CheckpointError, DecodeConfig, init_params, load_checkpoint,
                    preset, save_checkpoint, train)
from .optim import ConfigError, init_optimizer
from .pipelines import (PIPELINE_KINDS, CompareConfig, DatasetConfigError, TrainedModel,
                        _langs_for, build_dataset, check_kind, compare_pipelines, consistency_bleu,
                        default_decode, is_plugs, model_preset_for, run_pipeline)
from .tensor import NumericError, UndefinedLossError
from .text import (PIVOT, BpeConfigError, BpeVocab, DataError, EmptyCaption, MissingSeparator,
                   VocabularyError, train_bpe)
from .world import (SLOTS, Corpus, Scene, SynthTranslator, SyntheticWorld, make_corpus,
                    read_captions, write_captions)

log = logging.getLogger("plugs")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
CONFIG_ERRORS = (ConfigError, DatasetConfigError, BpeConfigError)
DATA_ERRORS = (DataError, FeatureFormatError, metrics.RatingDataError, metrics.MetricError,
               VocabularyError, CheckpointError, FileNotFoundError, KeyError)
NUMERIC_ERRORS = (NumericError, UndefinedLossError, FloatingPointError)


class OutputLock:
    """Exclusive ownership of an output directory for one command."""

    def __init__(self, out: Path):
        self.path = out / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"output directory {self.path.parent} is locked by another command")
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _resolve(args) -> RunConfig:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if args.threads is not None:
        cfg["threads"] = str(args.threads)
    if args.out is not None:
        cfg["out"] = str(args.out)
    for key in ("kind", "lang", "mode"):
        if getattr(args, key, None):
            cfg[key] = getattr(args, key)
    cfg.setdefault("seed", "0")
    cfg.setdefault("threads", "1")
    return cfg


def _resolved_text(cfg: RunConfig) -> str:
    # the output directory is implied by where the file lives
    return RunConfig({k: v for k, v in cfg.items() if k != "out"}).dumps()


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.require("out"))


def _world(cfg: RunConfig) -> SyntheticWorld:
    return SyntheticWorld(seed=cfg.get_int("world_seed", 0), noise_p=cfg.get_float("noise_p", 0.0),
                          n_distractors=cfg.get_int("n_distractors", 2))


def _split_sizes(spec: str, n: int) -> list[int]:
    parts = [int(x) for x in spec.split("/")]
    if len(parts) != 3 or sum(parts) != 100:
        raise ConfigError("split must be three percentages summing to 100, e.g. 80/10/10")
    sizes = [n * p // 100 for p in parts]
    sizes[0] += n - sum(sizes)
    return sizes


# -- data ----------------------------------------------------------------------

def write_scenes(path: Path, scenes: dict) -> None:
    path.write_text("".join(f"{i}\t{' '.join(s.slots()[k] for k in SLOTS)}\n"
                            for i, s in scenes.items()), encoding="utf-8")


def read_scenes(path: Path) -> dict:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line:
            image_id, slots = line.split("\t")
            out[image_id] = Scene(*slots.split(" "))
    return out


def read_ids(path: Path) -> list[str]:
    return [l for l in path.read_text(encoding="utf-8").splitlines() if l]


def load_corpus(data_dir: Path, split: str | None) -> tuple[Corpus, ObjectLabelTable]:
    table = ObjectLabelTable.load(data_dir / "labels.obj")
    features = load_features_file(data_dir / "features.tsv", table)
    captions = read_captions(data_dir / "captions.tsv")
    scenes = read_scenes(data_dir / "scenes.tsv") if (data_dir / "scenes.tsv").exists() else {}
    for by_id in captions.values():
        missing = [i for i in by_id if i not in features]
        if missing:
            raise DataError(f"caption for unknown image id {missing[0]}")
    corpus = Corpus(features, scenes, captions)
    if split:
        corpus = corpus.subset(read_ids(data_dir / "splits" / f"{split}.ids"))
    return corpus, table


def cmd_synth(cfg: RunConfig) -> int:
    out = _out(cfg)
    world = _world(cfg)
    n = cfg.get_int("n", 1000)
    sizes = _split_sizes(cfg.get("split", "80/10/10"), n)
    corpus = make_corpus(world, n, cfg.get_int("seed"))
    table = ObjectLabelTable.random(world.label_vocabulary(), world.seed)
    write_features_file(out / "features.tsv", corpus.features)
    table.save(out / "labels.obj")
    write_captions(out / "captions.tsv", corpus.captions)
    write_scenes(out / "scenes.tsv", corpus.scenes)
    (out / "splits").mkdir(exist_ok=True)
    ids = corpus.ids()
    start = 0
    for name, size in zip(("train", "val", "test"), sizes):
        (out / "splits" / f"{name}.ids").write_text("".join(i + "\n" for i in ids[start:start + size]))
        start += size
    log.info("wrote %d records (%s)", n, "/".join(map(str, sizes)))
    return 0


def cmd_vocab(cfg: RunConfig) -> int:
    out = _out(cfg)
    if "corpus" in cfg:
        lines = [t for by_id in read_captions(cfg.path("corpus")).values() for t in by_id.values()]
    else:
        corpus, _ = load_corpus(cfg.path("data_dir"), "train")
        lines = [t for by_id in corpus.captions.values() for t in by_id.values()]
    vocab = train_bpe(lines, cfg.get_int("vocab_size", 512))
    vocab.save(out / "vocab.bpe")
    log.info("vocabulary of %d tokens (%d merges)", len(vocab), len(vocab.merges))
    return 0


def _vocab_for(cfg: RunConfig, corpus: Corpus, out: Path) -> BpeVocab:
    if "vocab" in cfg:
        return BpeVocab.load(cfg.path("vocab"))
    lines = [t for by_id in corpus.captions.values() for t in by_id.values()]
    vocab = train_bpe(lines, cfg.get_int("vocab_size", 512))
    vocab.save(out / "vocab.bpe")
    return vocab


def cmd_train(cfg: RunConfig) -> int:
    out = _out(cfg)
    kind = check_kind(cfg.require("kind"))
    langs = cfg.get_list("langs") or ([cfg["lang"]] if "lang" in cfg else [])
    seed = cfg.get_int("seed")
    corpus, table = load_corpus(cfg.path("data_dir"), "train")
    vocab = _vocab_for(cfg, corpus, out)
    tcfg = train_config(cfg, seed)
    examples = build_dataset(kind, vocab, corpus, langs)
    steps = cfg.get_int("steps", 800)
    every = cfg.get_int("checkpoint_every", steps)
    start, opt = 0, None
    if "resume" in cfg:
        ck = load_checkpoint(cfg.path("resume"))
        mcfg, params, start, opt = ck.config, ck.params, ck.step, ck.opt_state
    else:
        mcfg = preset(cfg.get("model_preset", model_preset_for(kind)), len(vocab), tcfg.dropout)
        params = init_params(mcfg, seed)
    opt = opt or init_optimizer(tcfg, params)
    used = [PIVOT] if kind == "TGT" else _langs_for(kind, langs)
    meta = {"kind": kind, "langs": ",".join(used)}
    log_path = out / "loss.log"
    mode = "a" if start else "w"
    with open(log_path, mode, encoding="utf-8") as fh:
        step = start
        while step < steps:
            chunk = min(every - step % every, steps - step)
            train(params, mcfg, table, examples, tcfg, chunk, pad_id=vocab.pad, opt_state=opt,
                  start_step=step, log=lambda s, lr, loss: fh.write(f"{s}\t{lr!r}\t{loss!r}\n"))
            step += chunk
            fh.flush()
            save_checkpoint(out / f"step{step:07d}.ckpt",
                            Checkpoint(mcfg, params, step, seed, meta, opt))
    if start < steps:
        save_checkpoint(out / "final.ckpt", Checkpoint(mcfg, params, steps, seed, meta, opt))
    return 0


def cmd_generate(cfg: RunConfig) -> int:
    out = _out(cfg)
    kind = check_kind(cfg.require("mode"))
    lang = cfg.require("lang")
    ck = load_checkpoint(cfg.require("checkpoint"))
    if ck.meta.get("kind") != kind:
        raise ConfigError(f"checkpoint was trained for {ck.meta.get('kind')}, not {kind}")
    vocab = BpeVocab.load(cfg.require("vocab"))
    data_dir = cfg.path("data_dir")
    table = ObjectLabelTable.load(cfg.path("label_table", data_dir / "labels.obj" if data_dir else None))
    features = load_features_file(cfg.path("features", data_dir / "features.tsv" if data_dir else None),
                                  table)
    ids = read_ids(cfg.path("ids")) if "ids" in cfg else \
        read_ids(data_dir / "splits" / f"{cfg.get('split_name', 'test')}.ids")
    model = TrainedModel(kind, ck.config, ck.params, vocab, table, tuple(ck.meta.get("langs", "").split(",")))
    engine = SynthTranslator(_world(cfg))
    dcfg = DecodeConfig(cfg.get_int("beam_width", 5),
                        cfg.get_int("max_len", default_decode(kind).max_len))
    caps, stabs, rejects = [], [], []
    for image_id in ids:
        if image_id not in features:
            raise DataError(f"image id {image_id} not in features file")
        try:
            caption, stab = run_pipeline(kind, model, features[image_id], lang, engine, dcfg)
        except (MissingSeparator, EmptyCaption) as e:
            rejects.append(f"{image_id}\t{type(e).__name__}\n")
            continue
        caps.append(f"{image_id}\t{lang}\t{caption}\n")
        if is_plugs(kind):
            stabs.append(f"{image_id}\ten\t{stab}\n")
    (out / "captions.tsv").write_text("".join(caps), encoding="utf-8")
    if is_plugs(kind):
        (out / "stabilizers.tsv").write_text("".join(stabs), encoding="utf-8")
    (out / "rejects.tsv").write_text("".join(rejects), encoding="utf-8")
    if kind == "TGT":
        log.info("translation engine calls: %d", engine.calls)
    if rejects:
        print(f"warning: {len(rejects)} outputs without separator written to rejects.tsv",
              file=sys.stderr)
    return 0


def _paired(cfg: RunConfig, cand_key: str, ref_key: str, lang: str | None):
    cands = read_captions(cfg.path(cand_key))
    refs = read_captions(cfg.path(ref_key))
    lang_c = lang or next(iter(cands), None)
    lang_r = lang or next(iter(refs), None)
    c_by_id = cands.get(lang_c, {})
    r_by_id = refs.get(lang_r, {})
    pairs = []
    for image_id, text in c_by_id.items():
        if image_id not in r_by_id:
            raise DataError(f"record {image_id}: no reference")
        pairs.append((image_id, text, r_by_id[image_id]))
    return pairs, r_by_id


def cmd_eval(cfg: RunConfig, which: str) -> dict:
    lang = cfg.get("lang")
    if which == "bleu":
        pairs, _ = _paired(cfg, "candidates", "references", lang)
        return {"bleu4": metrics.bleu4([c for _, c, _ in pairs], [r for _, _, r in pairs])}
    if which == "cider":
        pairs, refs = _paired(cfg, "candidates", "references", lang)
        return {"cider": metrics.cider([c for _, c, _ in pairs], [[r] for _, _, r in pairs],
                                       [[r] for r in refs.values()])}
    if which == "ratings":
        rep = metrics.aggregate_sxs(metrics.read_ratings(cfg.path("ratings")))
        return {k: getattr(rep, k) for k in rep.__dataclass_fields__}
    if which == "spearman":
        recs = metrics.read_ratings(cfg.path("ratings"))
        a, b = metrics.median_ratings(recs, "A"), metrics.median_ratings(recs, "B")
        return {"spearman": metrics.spearman([a[i] for i in a], [b[i] for i in a])}
    if which == "consistency":
        stabs = read_captions(cfg.path("stabilizers")).get("en", {})
        caps_all = read_captions(cfg.path("captions"))
        lang = lang or next(iter(caps_all))
        caps = caps_all.get(lang, {})
        ids = [i for i in caps if i in stabs]
        missing = [i for i in caps if i not in stabs]
        if missing:
            raise DataError(f"record {missing[0]}: caption without stabilizer")
        return {"consistency_bleu4": consistency_bleu(
            _world(cfg), [stabs[i] for i in ids], [caps[i] for i in ids], lang,
            noise_p=cfg.get_float("consistency_noise_p", 0.0))}
    raise ConfigError(f"unknown eval subcommand {which!r}")


def cmd_compare(cfg: RunConfig) -> int:
    out = _out(cfg)
    base = CompareConfig()
    ccfg = CompareConfig(
        kinds=tuple(cfg.get_list("kinds", base.kinds)),
        langs=tuple(cfg.get_list("langs", base.langs)),
        seeds=tuple(int(s) for s in cfg.get_list("seeds", [str(s) for s in base.seeds])),
        n_train=cfg.get_int("n_train", base.n_train),
        n_test=cfg.get_int("n_test", base.n_test),
        noise_p=cfg.get_float("noise_p", base.noise_p),
        world_seed=cfg.get_int("world_seed", base.world_seed),
        steps=cfg.get_int("steps", base.steps),
        vocab_size=cfg.get_int("vocab_size", base.vocab_size),
        beam_width=cfg.get_int("beam_width", base.beam_width),
        train_preset=train_config(cfg, 0),
    )
    report = compare_pipelines(ccfg, progress=lambda seed, kind, lang, res, _m: log.info(
        "seed %d %s %s slot_acc=%.4f", seed, kind, lang, res.slot_accuracy))
    table = report.to_tsv()
    (out / "report.tsv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plugs", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="key=value run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int)

    for name in ("synth", "vocab", "compare"):
        common(sub.add_parser(name))
    p = sub.add_parser("train")
    common(p)
    p.add_argument("--kind", choices=PIPELINE_KINDS)
    p.add_argument("--lang")
    p = sub.add_parser("generate")
    common(p)
    p.add_argument("--mode", choices=PIPELINE_KINDS)
    p.add_argument("--lang")
    p = sub.add_parser("eval")
    p.add_argument("metric", choices=("bleu", "cider", "ratings", "spearman", "consistency"))
    common(p)
    p.add_argument("--lang")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else 0
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = _resolve(args)
        from threadpoolctl import threadpool_limits
        with threadpool_limits(cfg.get_int("threads", 1)), np.errstate(all="ignore"):
            if args.command == "eval":
                result = cmd_eval(cfg, args.metric)
                lines = "".join(f"{k}\t{float(v):.4f}\n" for k, v in result.items())
                sys.stdout.write(lines)
                if "out" in cfg:
                    out = _out(cfg)
                    with OutputLock(out):
                        (out / "metrics.tsv").write_text(lines, encoding="utf-8")
                        (out / "resolved.cfg").write_text(_resolved_text(cfg), encoding="utf-8")
                return 0
            out = _out(cfg)
            with OutputLock(out):
                (out / "resolved.cfg").write_text(_resolved_text(cfg), encoding="utf-8")
                handler = {"synth": cmd_synth, "vocab": cmd_vocab, "train": cmd_train,
                           "generate": cmd_generate, "compare": cmd_compare}[args.command]
                return handler(cfg)
    except CONFIG_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

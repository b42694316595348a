import os

import pytest

from plugs.cli import run
from plugs.metrics import craft_ratings, write_ratings


def _cfg(path, **kv):
    path.write_text("".join(f"{k}={v}\n" for k, v in kv.items()))
    return str(path)


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _cfg(root / "synth.cfg", n=200, world_seed=0, noise_p=0.15)
    assert run(["synth", "--config", cfg, "--seed", "7", "--out", str(root / "data")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(data):
    cfg = _cfg(data / "train.cfg", data_dir=data / "data", vocab_size=450, steps=12, checkpoint_every=6,
               batch_size=8, warmup_steps=4)
    assert run(["train", "--config", cfg, "--kind", "PLuGS-2L", "--lang", "fr",
                "--out", str(data / "run")]) == 0
    return data / "run"


def test_synth_is_byte_identical(tmp_path):
    cfg = _cfg(tmp_path / "s.cfg", n=1000)
    for name in ("a", "b"):
        assert run(["synth", "--config", cfg, "--seed", "7", "--out", str(tmp_path / name)]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a.keys() == b.keys() and a == b
    assert [len(a[f"splits/{s}.ids"].splitlines()) for s in ("train", "val", "test")] == [800, 100, 100]
    assert "resolved.cfg" in a and ".lock" not in a


def test_synth_outputs_are_consistent(data):
    d = data / "data"
    ids = {l.split("\t")[0] for l in (d / "features.tsv").read_text().splitlines()}
    cap_ids = {l.split("\t")[0] for l in (d / "captions.tsv").read_text(encoding="utf-8").splitlines()}
    langs = {l.split("\t")[1] for l in (d / "captions.tsv").read_text(encoding="utf-8").splitlines()}
    assert cap_ids <= ids
    assert langs == {"en", "fr", "it", "de", "es", "hi"}
    splits = [set((d / "splits" / f"{s}.ids").read_text().split()) for s in ("train", "val", "test")]
    assert not (splits[0] & splits[1] or splits[0] & splits[2] or splits[1] & splits[2])


def test_config_errors_exit_2(tmp_path):
    assert run(["synth", "--config", _cfg(tmp_path / "c.cfg", bogus=1), "--out", str(tmp_path)]) == 2
    assert run(["synth", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 2
    assert run(["synth", "--config", _cfg(tmp_path / "d.cfg", n="many"), "--out", str(tmp_path)]) == 2
    assert run(["synth"]) == 2


def test_include_and_override(tmp_path):
    _cfg(tmp_path / "base.cfg", n=10, world_seed=3)
    (tmp_path / "top.cfg").write_text("include base.cfg\nn=20\n")
    assert run(["synth", "--config", str(tmp_path / "top.cfg"), "--out", str(tmp_path / "o")]) == 0
    resolved = (tmp_path / "o" / "resolved.cfg").read_text()
    assert "n=20\n" in resolved and "world_seed=3\n" in resolved


def test_locked_output_dir(tmp_path):
    (tmp_path / "o").mkdir()
    (tmp_path / "o" / ".lock").write_text("1")
    assert run(["synth", "--config", _cfg(tmp_path / "c.cfg", n=10), "--out", str(tmp_path / "o")]) == 2


def test_train_writes_log_and_checkpoints(trained):
    lines = (trained / "loss.log").read_text().splitlines()
    assert len(lines) == 12
    step, lr, loss = lines[0].split("\t")
    assert step == "1" and float(lr) > 0 and float(loss) > 0
    assert {p.name for p in trained.glob("*.ckpt")} == {"step0000006.ckpt", "step0000012.ckpt", "final.ckpt"}


def test_resume_reproduces_uninterrupted_run(data, trained):
    cfg = _cfg(data / "resume.cfg", data_dir=data / "data", vocab=trained / "vocab.bpe", steps=12,
               checkpoint_every=6, batch_size=8, warmup_steps=4, resume=trained / "step0000006.ckpt")
    assert run(["train", "--config", cfg, "--kind", "PLuGS-2L", "--lang", "fr",
                "--out", str(data / "resumed")]) == 0
    full = (trained / "loss.log").read_text().splitlines()
    assert (data / "resumed" / "loss.log").read_text().splitlines() == full[6:]
    assert (data / "resumed" / "final.ckpt").read_bytes() == (trained / "final.ckpt").read_bytes()


def test_bad_features_exit_3(tmp_path, data):
    bad = tmp_path / "data"
    bad.mkdir()
    for f in ("labels.obj", "captions.tsv", "scenes.tsv"):
        (bad / f).write_bytes((data / "data" / f).read_bytes())
    (bad / "splits").mkdir()
    (bad / "splits" / "train.ids").write_bytes((data / "data" / "splits" / "train.ids").read_bytes())
    lines = (data / "data" / "features.tsv").read_text().splitlines()
    lines[3] = lines[3].rsplit(" ", 1)[0]     # 63 numbers
    (bad / "features.tsv").write_text("\n".join(lines) + "\n")
    cfg = _cfg(tmp_path / "t.cfg", data_dir=bad, vocab_size=450, steps=2)
    assert run(["train", "--config", cfg, "--kind", "TTG-2L", "--lang", "fr", "--out", str(tmp_path / "o")]) == 3


def test_diverging_training_exit_4(tmp_path, data):
    cfg = _cfg(tmp_path / "t.cfg", data_dir=data / "data", vocab_size=450, steps=5, base_lr=1e12,
               warmup_steps=1, optimizer="sgd")
    assert run(["train", "--config", cfg, "--kind", "TTG-2L", "--lang", "fr", "--out", str(tmp_path / "o")]) == 4


def _generate(data, trained, out, mode="PLuGS-2L"):
    cfg = _cfg(data / "gen.cfg", data_dir=data / "data", checkpoint=trained / "final.ckpt",
               vocab=trained / "vocab.bpe", beam_width=2, max_len=24, world_seed=0, noise_p=0.15)
    return run(["generate", "--config", cfg, "--mode", mode, "--lang", "fr", "--out", str(out)])


def test_generate_outputs(data, trained):
    assert _generate(data, trained, data / "gen1") == 0
    assert _generate(data, trained, data / "gen2") == 0
    a, b = _files(data / "gen1"), _files(data / "gen2")
    a.pop("resolved.cfg"), b.pop("resolved.cfg")
    assert a == b
    n_ids = len((data / "data" / "splits" / "test.ids").read_text().split())
    caps = a["captions.tsv"].decode().splitlines()
    stabs = a["stabilizers.tsv"].decode().splitlines()
    rejects = a["rejects.tsv"].decode().splitlines()
    assert len(caps) + len(rejects) == n_ids
    assert [l.split("\t")[0] for l in caps] == [l.split("\t")[0] for l in stabs]


def test_generate_mode_must_match_checkpoint(data, trained):
    assert _generate(data, trained, data / "gen3", mode="TTG-2L") == 2


def test_eval_bleu_identical(tmp_path, data, capsys):
    caps = data / "data" / "captions.tsv"
    cfg = _cfg(tmp_path / "e.cfg", candidates=caps, references=caps)
    assert run(["eval", "bleu", "--config", cfg, "--lang", "fr"]) == 0
    assert capsys.readouterr().out == "bleu4\t100.0000\n"


def test_eval_missing_reference_names_record(tmp_path, capsys):
    (tmp_path / "c.tsv").write_text("a1\tfr\tx y\nzz9\tfr\tq r\n")
    (tmp_path / "r.tsv").write_text("a1\tfr\tx y\n")
    cfg = _cfg(tmp_path / "e.cfg", candidates=tmp_path / "c.tsv", references=tmp_path / "r.tsv")
    assert run(["eval", "bleu", "--config", cfg]) == 3
    assert "zz9" in capsys.readouterr().err


def test_eval_ratings_table_two(tmp_path, capsys):
    write_ratings(tmp_path / "r.csv", craft_ratings(1000, 228, 194, a_ok=665, b_ok=687))
    cfg = _cfg(tmp_path / "e.cfg", ratings=tmp_path / "r.csv")
    assert run(["eval", "ratings", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    got = dict(l.split("\t") for l in capsys.readouterr().out.splitlines())
    assert (got["gain_sxs"], got["gain_ok"]) == ("3.4000", "2.2000")
    assert (tmp_path / "o" / "metrics.tsv").exists()


def test_eval_consistency(tmp_path, capsys):
    (tmp_path / "s.tsv").write_text("a\ten\ta red dog chases the ball\nb\ten\ta small boy pulls the box\n")
    from plugs.world import SyntheticWorld
    w = SyntheticWorld(seed=0)
    (tmp_path / "c.tsv").write_text(
        f"a\tfr\t{w.translate('a red dog chases the ball', 'fr')}\n"
        f"b\tfr\t{w.translate('a small boy pulls the box', 'fr')}\n", encoding="utf-8")
    cfg = _cfg(tmp_path / "e.cfg", stabilizers=tmp_path / "s.tsv", captions=tmp_path / "c.tsv")
    assert run(["eval", "consistency", "--config", cfg, "--lang", "fr"]) == 0
    assert capsys.readouterr().out == "consistency_bleu4\t100.0000\n"


def test_compare_table(tmp_path, capsys):
    cfg = _cfg(tmp_path / "c.cfg", kinds="TGT,TTG-2L,PLuGS-2L", langs="fr", seeds=0, n_train=40,
               n_test=3, steps=2, vocab_size=450, beam_width=1)
    assert run(["compare", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert run(["compare", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "report.tsv").read_text()
    assert a == (tmp_path / "b" / "report.tsv").read_text()
    assert len(a.strip().splitlines()) == 4
    assert (tmp_path / "a" / "resolved.cfg").exists()

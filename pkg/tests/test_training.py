import copy
import math

import numpy as np
import pytest

from conftest import TINY, corpus_vocab, tiny_setup
from graphcl import tensor as T
from graphcl.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from graphcl.config import SCALE_PRESETS, RunConfig, load_config, parse_flat
from graphcl.corpus import generate_synthetic_corpus
from graphcl.tensor import Tensor, global_grad_norm
from graphcl.training import (NonFiniteLoss, Trainer, batch_indices, joint_loss, model_from_checkpoint,
                              prepare_examples, train_loop)


def tiny_run(**extra):
    base = {**TINY, "max_source_len": "64", "batch_size": "4", "max_steps": "10"}
    return load_config(None, {**base, **{k: str(v) for k, v in extra.items()}})


@pytest.fixture(scope="module")
def corpus():
    recs = generate_synthetic_corpus(8, 0)
    return recs, corpus_vocab(recs, max_size=80)


def make_trainer(corpus, **extra):
    recs, vocab = corpus
    run = tiny_run(**extra)
    return Trainer(prepare_examples(recs, vocab, run), vocab, run)


# ---------------------------------------------------------------- joint loss

def test_joint_loss_examples():
    assert joint_loss(Tensor(2.0), Tensor(0.5), 1.0).item() == pytest.approx(2.5)
    l_ge = Tensor(2.0)
    assert joint_loss(l_ge, Tensor(0.5), 0.0) is l_ge
    assert joint_loss(l_ge, None, 1.0) is l_ge


def test_joint_loss_non_finite():
    with pytest.raises(NonFiniteLoss):
        joint_loss(Tensor(float("nan")), Tensor(0.5), 1.0)
    with pytest.raises(NonFiniteLoss):
        joint_loss(Tensor(1.0), Tensor(float("inf")), 1.0)


def test_joint_gradient_splits_additively():
    model, batch, _, _ = tiny_setup(seed=1)
    params = model.parameters()
    lam = 0.7

    def grads(which):
        for p in params:
            p.grad = None
        out = model.forward(batch)
        loss = {"ge": out.l_ge, "con": out.l_con, "L": joint_loss(out.l_ge, out.l_con, lam)}[which]
        loss.backward()
        return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    g_ge, g_con, g_L = grads("ge"), grads("con"), grads("L")
    for a, b, c in zip(g_ge, g_con, g_L):
        np.testing.assert_allclose(c, a + lam * b, rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------- loop behaviour

def test_batches_are_deterministic_permutations():
    seen = np.concatenate([batch_indices(10, 4, seed=3, step=s) for s in range(3)])
    assert sorted(seen) == list(range(10))
    assert np.array_equal(batch_indices(10, 4, 3, 5), batch_indices(10, 4, 3, 5))


def test_ten_step_trace_bit_identical(corpus):
    a = [r.L for r in make_trainer(corpus).fit(10)]
    b = [r.L for r in make_trainer(corpus).fit(10)]
    assert a == b
    c = [r.L for r in make_trainer(corpus, seed=1).fit(10)]
    assert a != c


def test_step_log_fields(corpus):
    rec = make_trainer(corpus).fit(1)[0]
    assert set(rec.to_json()) >= {"step", "l_ge", "l_con", "L", "skipped_contrastive"}
    assert rec.L == pytest.approx(rec.l_ge + rec.l_con, rel=1e-5)


def test_gradient_clip_applied(corpus):
    tr = make_trainer(corpus, clip_norm=0.01)
    batch = tr.batch_for(0)
    out = tr.model.forward(batch)
    joint_loss(out.l_ge, out.l_con, 1.0).backward()
    T.clip_grad_norm(tr.optimizer.params, 0.01)
    assert global_grad_norm(tr.optimizer.params) <= 0.01 + 1e-6


def test_base_variant_freezes_graph_and_contrastive_branches(corpus):
    tr = make_trainer(corpus, use_graph="false", use_contrastive="false")
    frozen = {n: p.data.copy() for n, p in tr.model.named_parameters()
              if n.startswith(("graph_encoder", "contrastive_encoder"))}
    tr.fit(3)
    for n, p in tr.model.named_parameters():
        if n in frozen:
            assert np.array_equal(p.data, frozen[n]), n


def test_no_graph_means_zero_graph_features(corpus):
    tr = make_trainer(corpus)
    b = tr.batch_for(0)
    enc = tr.model.encode(b.source, b.source_valid, b.adjacency, use_graph=False)
    assert np.all(enc.z.data == 0)


@pytest.mark.parametrize("graph,con", [(False, False), (False, True), (True, False), (True, True)])
def test_all_four_variants_run(corpus, graph, con):
    recs = corpus[0]
    tr = make_trainer(corpus, use_graph=str(graph).lower(), use_contrastive=str(con).lower())
    hist = tr.fit(2)
    assert all(math.isfinite(h.L) for h in hist)
    assert (hist[0].l_con > 0) == con
    assert len(recs) == 8


def test_lambda_zero_matches_no_contrastive(corpus):
    a = make_trainer(corpus, lam=0.0)
    b = make_trainer(corpus, use_contrastive="false")
    assert [r.l_ge for r in a.fit(4)] == [r.l_ge for r in b.fit(4)]
    for (n, p), (_, q) in zip(a.model.named_parameters(), b.model.named_parameters()):
        assert np.array_equal(p.data, q.data), n


def test_empty_corpus_rejected(corpus):
    with pytest.raises(ValueError):
        train_loop([], corpus[1], tiny_run())


def test_non_finite_loss_keeps_last_good_checkpoint(corpus, monkeypatch):
    recs, vocab = corpus
    run = tiny_run(max_steps=5)
    calls = {"n": 0}
    real = joint_loss

    def flaky(l_ge, l_con, lam):
        calls["n"] += 1
        if calls["n"] == 3:
            return real(Tensor(float("nan")), l_con, lam)
        return real(l_ge, l_con, lam)

    monkeypatch.setattr("graphcl.training.joint_loss", flaky)
    with pytest.raises(NonFiniteLoss) as info:
        train_loop(recs, vocab, run)
    assert info.value.checkpoint.step == 2


def test_prepare_examples_truncates_at_word_boundaries(corpus):
    recs, vocab = corpus
    run = tiny_run()
    for ex, rec in zip(prepare_examples(recs, vocab, run), recs):
        assert len(ex.source) <= run.model.encoder.max_source_len
        assert ex.n_words == len(rec.words)
        assert ex.graph.n == len(ex.source)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip_and_idempotence(corpus, tmp_path):
    tr = make_trainer(corpus)
    tr.fit(2)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(tr.to_checkpoint(), p1)
    ck = load_checkpoint(p1)
    save_checkpoint(ck, p2)
    assert p1.read_bytes() == p2.read_bytes()
    for n, p in tr.model.named_parameters():
        assert np.array_equal(ck.params[n], p.data)
    assert ck.step == 2 and ck.vocab == corpus[1].itos
    model, vocab, run = model_from_checkpoint(ck)
    assert vocab == corpus[1] and run.to_flat() == tr.run.to_flat()


def test_checkpoint_version_and_truncation_errors(corpus, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(make_trainer(corpus).to_checkpoint(), path)
    raw = path.read_bytes()
    first = raw.index(b"\n")
    flipped = raw[: first - 1] + b"7" + raw[first:]
    (tmp_path / "v.ckpt").write_bytes(flipped)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "t.ckpt").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError, match="blob"):
        load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "x.ckpt").write_bytes(b"hello\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.ckpt")


def test_every_parameter_stored_once(corpus, tmp_path):
    tr = make_trainer(corpus)
    save_checkpoint(tr.to_checkpoint(), tmp_path / "m.ckpt")
    ck = load_checkpoint(tmp_path / "m.ckpt")
    assert sorted(ck.params) == sorted(n for n, _ in tr.model.named_parameters())


def test_resume_reproduces_trajectory(corpus, tmp_path):
    ref = make_trainer(corpus)
    ref_trace = [r.L for r in ref.fit(6)]
    first = make_trainer(corpus)
    first.fit(3)
    save_checkpoint(first.to_checkpoint(), tmp_path / "mid.ckpt")
    resumed = Trainer.from_checkpoint(load_checkpoint(tmp_path / "mid.ckpt"), first.examples)
    assert [r.L for r in resumed.fit(3)] == ref_trace[3:]
    for (n, p), (_, q) in zip(ref.model.named_parameters(), resumed.model.named_parameters()):
        assert np.array_equal(p.data, q.data), n


# ---------------------------------------------------------------- config

def test_config_roundtrip_and_alias():
    run = RunConfig.from_flat(parse_flat("lambda = 0.5\nbeam_size = 2\n# comment\nuse_graph = false\n"))
    assert run.train.lam == 0.5 and run.generation.beam_size == 2 and run.train.use_graph is False
    again = RunConfig.from_flat(parse_flat(run.dumps()))
    assert again.to_flat() == run.to_flat()


def test_config_errors(tmp_path):
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.from_flat({"learning_rate": "1"})
    with pytest.raises(ValueError, match="duplicate"):
        parse_flat("lr = 1\nlr = 2\n")
    with pytest.raises(ValueError):
        RunConfig.from_flat({"lam": "-1"})
    with pytest.raises(ValueError):
        RunConfig.from_flat({"batch_size": "x"})


def test_presets(tmp_path):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("preset = mimic-cxr\nmax_steps = 10\n")
    run = load_config(cfg)
    assert run.train.lr == SCALE_PRESETS["mimic-cxr"]["lr"] and run.train.max_steps == 10
    cfg.write_text("preset = full-scale\n")
    assert load_config(cfg).model.encoder.d_model == 768


def test_defaults_are_desk_scale():
    run = RunConfig()
    enc = run.model.encoder
    assert (enc.d_model, enc.text_layers, enc.text_heads, enc.text_ff) == (64, 2, 4, 256)
    assert run.train.lam == 1.0 and run.train.clip_norm == 1.0 and enc.dropout == 0.0
    assert copy.deepcopy(run).to_flat() == run.to_flat()

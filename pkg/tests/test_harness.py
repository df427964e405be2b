import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lwtextcnn import data as D
from lwtextcnn.arch import Model, build, make_spec
from lwtextcnn.errors import ContractError, DivergenceError
from lwtextcnn.harness import (METRICS_HEADER, RunConfig, confusion_matrix, evaluate, load_run,
                               read_metrics, t_test, train)
from lwtextcnn.tensor import Rng, Tensor

from conftest import overfit_config, synthetic_docs

# scipy.stats.ttest_ind(equal_var=False), cross-checked by numerically integrating the t density
TT_A = [2.1, 2.5, 2.3, 1.9]
TT_B = [2.0, 2.6, 2.2, 2.1]
TT_T, TT_P, TT_DF = -0.1356646894938423, 0.8965249199956078, 5.9979682444126725


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    docs = synthetic_docs()
    res = train(overfit_config(tmp_path_factory.mktemp("run"), "lightweight", max_steps=60), docs)
    return res, docs


def brute_force(model, docs, vocab, classes, max_len):
    correct, losses = 0, []
    for d in docs:
        tokens = D.encode_batch([d], vocab, max_len)
        logits = model.forward(tokens, train=False).data[0]
        shifted = logits - logits.max()
        logp = shifted - math.log(sum(math.exp(v) for v in shifted))
        best = 0
        for k in range(len(logits)):
            if logits[k] > logits[best]:
                best = k
        target = classes.index(d.label)
        correct += best == target
        losses.append(-logp[target])
    return 100.0 * correct / len(docs), sum(losses) / len(docs)


class TestEvaluate:
    def test_matches_brute_force(self, fitted):
        res, docs = fitted
        ev = evaluate(res.model, docs, res.vocab, res.classes, 32, batch_size=5)
        acc, loss = brute_force(res.model, docs, res.vocab, res.classes, 32)
        assert ev.accuracy_pct == acc
        assert ev.mean_loss == pytest.approx(loss, rel=1e-10)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_reorder_invariant(self, fitted, seed):
        res, docs = fitted
        ref = evaluate(res.model, docs, res.vocab, res.classes, 32)
        perm = np.random.default_rng(seed).permutation(len(docs))
        ev = evaluate(res.model, [docs[i] for i in perm], res.vocab, res.classes, 32)
        assert ev.correct == ref.correct and ev.accuracy_pct == ref.accuracy_pct
        assert ev.per_class == ref.per_class
        assert ev.mean_loss == pytest.approx(ref.mean_loss, rel=1e-12)

    def _forced(self, K, bias):
        model = build(make_spec("base", 40, K, 4, filters=2), Rng(0))
        model.params["dense.weight"].data[:] = 0.0
        model.params["dense.bias"].data[:] = bias
        return model

    def test_single_doc(self):
        vocab = D.build_vocab([["a", "b"]])
        doc = D.Document("y/1", "y", ("a", "b", "a", "b", "a"))
        model = self._forced(3, [0.0, 5.0, 0.0])
        ev = evaluate(model, [doc], vocab, ["x", "y", "z"], max_len=8)
        assert ev.accuracy_pct == 100.0

    def test_uniform_logits(self):
        docs = synthetic_docs(per_class=3)
        vocab = D.build_vocab(docs)
        classes = D.class_names(docs)
        ev = evaluate(self._forced(3, 0.0), docs, vocab, classes, 30)
        assert ev.mean_loss == pytest.approx(math.log(3), abs=1e-12)
        # ties go to class 0
        assert set(ev.predictions) == {0}
        assert ev.accuracy_pct == 100.0 * 3 / 9

    def test_empty(self, fitted):
        res, _ = fitted
        with pytest.raises(ContractError):
            evaluate(res.model, [], res.vocab, res.classes)
        with pytest.raises(ContractError):
            confusion_matrix(res.model, [], res.vocab, res.classes)


class TestConfusion:
    def test_perfect_is_diagonal(self, tmp_path):
        docs = synthetic_docs()
        res = train(overfit_config(tmp_path, "base"), docs)
        train_docs = res.plan.select(docs, "train")
        cm = confusion_matrix(res.model, train_docs, res.vocab, res.classes, 32)
        assert np.array_equal(cm, np.diag(np.diag(cm)))

    def test_totals_and_trace(self, fitted):
        res, docs = fitted
        cm = confusion_matrix(res.model, docs, res.vocab, res.classes, 32)
        ev = evaluate(res.model, docs, res.vocab, res.classes, 32)
        assert cm.sum() == len(docs)
        assert cm.sum(axis=1).tolist() == [10, 10, 10]
        assert int(np.trace(cm)) == ev.correct
        assert 100.0 * int(np.trace(cm)) / int(cm.sum()) == ev.accuracy_pct

    def test_checkpoint_input(self, fitted):
        res, docs = fitted
        run = load_run(res.out_dir)
        a = confusion_matrix(run.checkpoint, docs, run.vocab, run.classes, 32)
        b = confusion_matrix(res.model, docs, res.vocab, res.classes, 32)
        assert np.array_equal(a, b)


class TestTTest:
    def test_identical(self):
        r = t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert r.t == 0.0 and r.p == 1.0 and not r.reject

    def test_shifted(self):
        a = [1.0, 2.0, 3.0, 4.0, 5.0]
        r = t_test(a, [x + 100 for x in a])
        assert r.reject and r.p < 1e-9

    def test_oracle(self):
        r = t_test(TT_A, TT_B)
        assert abs(r.t - TT_T) < 1e-6 and abs(r.p - TT_P) < 1e-6
        assert r.df == pytest.approx(TT_DF, rel=1e-12)
        assert not r.reject

    @pytest.mark.parametrize("a,b", [([1.0], [1.0, 2.0]), ([1.0, 2.0], []), ([3.0, 3.0], [3.0, 3.0])])
    def test_bad_samples(self, a, b):
        with pytest.raises(ContractError):
            t_test(a, b)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=8),
           st.lists(st.floats(-100, 100), min_size=2, max_size=8))
    def test_antisymmetric(self, a, b):
        if np.var(a) + np.var(b) < 1e-9:
            return
        r1, r2 = t_test(a, b), t_test(b, a)
        assert r1.t == pytest.approx(-r2.t, rel=1e-12, abs=1e-12)
        assert r1.p == pytest.approx(r2.p, rel=1e-12, abs=1e-15)
        assert 0.0 <= r1.p <= 1.0


class TestTrain:
    def test_overfit_base(self, tmp_path):
        docs = synthetic_docs()
        res = train(overfit_config(tmp_path, "base"), docs)
        ev = evaluate(res.model, res.plan.select(docs, "train"), res.vocab, res.classes, 32)
        assert ev.accuracy_pct == 100.0

    def test_swats_phase_logging(self, tmp_path):
        cfg = overfit_config(tmp_path, "lightweight", optimizer="swats", switch_step=50,
                             max_steps=80, eval_every=10, decay=1.0)
        res = train(cfg, synthetic_docs())
        rows = read_metrics(tmp_path / "metrics.csv")
        assert rows and rows == res.rows
        for r in rows:
            assert r.phase == ("adam" if r.step <= 50 else "sgd"), r
        assert {r.step for r in rows} == set(range(10, 81, 10))
        # after the switch the logged rate is the SGD rate
        assert all(r.lr == cfg.sgd_lr for r in rows if r.step > 50)

    @pytest.mark.parametrize("steps,every", [(25, 10), (30, 10), (7, 100)])
    def test_final_row_present(self, tmp_path, steps, every):
        res = train(overfit_config(tmp_path, "optimized", max_steps=steps, eval_every=every),
                    synthetic_docs())
        splits_at_end = {r.split for r in res.rows if r.step == steps}
        assert splits_at_end == {"train", "val", "test"}
        for tag in ("train", "val"):
            steps_seen = [r.step for r in res.rows if r.split == tag]
            assert steps_seen == sorted(set(steps_seen))
        assert all(0.0 <= r.accuracy_pct <= 100.0 for r in res.rows)

    def test_run_directory(self, tmp_path):
        cfg = overfit_config(tmp_path, "lightweight", max_steps=5)
        train(cfg, synthetic_docs())
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "checkpoint.bin", "config.txt", "metrics.csv", "split", "vocab.txt"]
        run = load_run(tmp_path)
        assert run.config == cfg
        assert run.max_len == 32 and run.classes == ["invoice", "letter", "memo"]

    def test_deterministic(self, tmp_path):
        docs = synthetic_docs()
        for name in ("a", "b"):
            train(overfit_config(tmp_path / name, "lightweight", max_steps=30, eval_every=10), docs)
        for f in ("metrics.csv", "checkpoint.bin", "vocab.txt", "config.txt"):
            a = (tmp_path / "a" / f).read_bytes()
            b = (tmp_path / "b" / f).read_bytes()
            assert a == b or f == "config.txt", f

    def test_divergence_guard(self, tmp_path, monkeypatch):
        def bad_loss(self, tokens, labels, train=False, rng=None):
            return Tensor(np.array(np.nan), requires_grad=True), np.full((len(labels), 3), 1 / 3)
        monkeypatch.setattr(Model, "loss", bad_loss)
        with pytest.raises(DivergenceError, match="step 1"):
            train(overfit_config(tmp_path, "base", max_steps=3), synthetic_docs())

    def test_max_len_too_short(self, tmp_path):
        with pytest.raises(ContractError, match="receptive"):
            train(overfit_config(tmp_path, "lightweight", max_len=4), synthetic_docs())

    def test_bad_config(self, tmp_path):
        for kw in ({"arch": "nope"}, {"optimizer": "rmsprop"}, {"dropout": 1.0}, {"batch_size": 0},
                   {"input": ""}, {"decay": 1.5}):
            with pytest.raises(ContractError):
                train(overfit_config(tmp_path, "base").updated(**kw), synthetic_docs())


class TestConfig:
    def test_text_round_trip(self):
        cfg = RunConfig(input="c", arch="optimized", lr=1 / 3, switch_step=40, stratify=True,
                        timing=False, decay=0.95)
        assert RunConfig.from_text(cfg.to_text()) == cfg

    def test_comments_and_dashes(self):
        cfg = RunConfig.from_text("# run\nmax-len = 64  # short\noptimizer=swats\n")
        assert cfg.max_len == 64 and cfg.optimizer == "swats"

    def test_unknown_key(self):
        with pytest.raises(ContractError, match="bogus"):
            RunConfig.from_text("bogus=1\n")


def test_metrics_golden_header(tmp_path):
    train(overfit_config(tmp_path, "base", max_steps=2), synthetic_docs())
    first = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert first == "step,split,loss,accuracy_pct,lr,elapsed_s,phase"
    assert ",".join(METRICS_HEADER) == first

import numpy as np
import pytest

from rawnet.backend import BackendDNN, TrialPair, cosine_score, fit_codebook
from rawnet.embedio import load_embeddings, save_embeddings
from rawnet.scoring import (load_scores, score_pairs, worker_threads,
                            write_metrics_summary, write_scores)
from rawnet.synth import Trial


def test_embedding_container_round_trip(tmp_path, rng):
    embs = {f"utt{i:03d}": rng.standard_normal(16).astype(np.float32)
            for i in range(5)}
    path = tmp_path / "emb.bin"
    save_embeddings(path, embs)
    back = load_embeddings(path)
    assert list(back) == list(embs)
    for utt, vec in embs.items():
        np.testing.assert_array_equal(back[utt], vec)
    sidecar = (tmp_path / "emb.bin.idx").read_text().splitlines()
    assert sidecar == [f"utt{i:03d}\t16" for i in range(5)]


def test_embedding_container_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"XXXX" + b"\x00" * 10)
    with pytest.raises(ValueError, match="bad magic"):
        load_embeddings(path)


def test_worker_threads_env(monkeypatch):
    monkeypatch.delenv("RAWNET_THREADS", raising=False)
    assert worker_threads() == 1
    monkeypatch.setenv("RAWNET_THREADS", "4")
    assert worker_threads() == 4
    monkeypatch.setenv("RAWNET_THREADS", "0")
    assert worker_threads() == 1
    monkeypatch.setenv("RAWNET_THREADS", "junk")
    assert worker_threads() == 1


class TestScorePairs:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.embeddings = {f"u{i}": rng.standard_normal(8) for i in range(6)}
        self.trials = [Trial("u0", "u1", 1), Trial("u2", "u3", 0),
                       Trial("u4", "u5", 0)]

    def test_cosine_matches_direct_computation(self):
        scored = score_pairs(self.trials, self.embeddings, "cosine")
        for t, s in zip(self.trials, scored):
            direct = cosine_score(TrialPair(self.embeddings[t.enrol_utt],
                                            self.embeddings[t.test_utt]))
            assert s.score == pytest.approx(direct)
            assert (s.enrol_id, s.test_id, s.label) == (t.enrol_utt, t.test_utt, t.label)

    def test_dnn_backends_produce_probabilities(self):
        model = BackendDNN(24, hidden=8, seed=0)
        scored = score_pairs(self.trials, self.embeddings, "b-vector", model)
        assert all(0.0 <= s.score <= 1.0 for s in scored)

    def test_rb_vector_needs_codebook_features(self):
        emb = np.stack(list(self.embeddings.values()))
        cb = fit_codebook(emb, k=2, d_pca=3, seed=0)
        model = BackendDNN(24 + 2 * 2 * 3, hidden=8, seed=0)
        scored = score_pairs(self.trials, self.embeddings, "rb-vector", model, cb)
        assert len(scored) == 3

    def test_missing_embedding_reported(self):
        trials = [Trial("u0", "nope", 1), Trial("u0", "u1", 0)]
        with pytest.raises(KeyError, match="nope"):
            score_pairs(trials, self.embeddings, "cosine")

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError, match="unknown back-end"):
            score_pairs(self.trials, self.embeddings, "plda")

    def test_model_required_for_dnn_backends(self):
        with pytest.raises(ValueError, match="requires a trained model"):
            score_pairs(self.trials, self.embeddings, "b-vector")


def test_score_csv_round_trip(tmp_path):
    from rawnet.metrics import ScoredTrial
    scored = [ScoredTrial("e0", "t0", 0.123456789012, 1),
              ScoredTrial("e1", "t1", -0.5, 0),
              ScoredTrial("e2", "t2", 0.25, None)]
    path = tmp_path / "scores.csv"
    write_scores(path, scored)
    back = load_scores(path)
    assert [(b.enrol_id, b.test_id, b.label) for b in back] == \
           [(s.enrol_id, s.test_id, s.label) for s in scored]
    for b, s in zip(back, scored):
        assert b.score == pytest.approx(s.score, rel=1e-11)
    header = path.read_text().splitlines()[0]
    assert header == "enrol,test,score,label"


def test_metrics_summary_files(tmp_path):
    from rawnet.metrics import ScoredTrial
    scored = [ScoredTrial("a", "b", 0.9, 1), ScoredTrial("c", "d", 0.8, 1),
              ScoredTrial("e", "f", 0.2, 0), ScoredTrial("g", "h", 0.1, 0)]
    eer, th = write_metrics_summary(tmp_path / "m.txt", tmp_path / "m.kv", scored)
    assert eer == 0.0
    kv = dict(line.split(" = ") for line in
              (tmp_path / "m.kv").read_text().splitlines())
    assert float(kv["eer"]) == 0.0
    assert int(kv["n_trials"]) == 4
    assert int(kv["n_same"]) == 2
    txt = (tmp_path / "m.txt").read_text()
    assert "EER" in txt and "%" in txt

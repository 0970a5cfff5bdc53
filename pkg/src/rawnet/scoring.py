"""Trial-list scoring: extract embeddings once per utterance, score every pair."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import backend as be
from .audio import read_wav
from .metrics import ScoredTrial, compute_eer
from .model import extract_embedding


def worker_threads():
    """Worker-thread cap from RAWNET_THREADS (default 1, serial reference mode)."""
    try:
        return max(1, int(os.environ.get("RAWNET_THREADS", "1")))
    except ValueError:
        return 1


def extract_corpus_embeddings(model, entries, corpus_dir, pre_emphasis_coeff,
                              utterance_ids=None):
    """Embeddings for manifest entries, keyed by utterance id.

    Extraction is a pure function per utterance, so the optional thread pool
    cannot change results.
    """
    corpus_dir = Path(corpus_dir)
    by_id = {e.utterance_id: e for e in entries}
    wanted = list(utterance_ids) if utterance_ids is not None else list(by_id)
    missing = [u for u in wanted if u not in by_id]
    if missing:
        raise KeyError(f"utterances not in manifest: {missing}")

    def one(utt_id):
        clip = read_wav(corpus_dir / by_id[utt_id].path)
        clip.utterance_id = utt_id
        return utt_id, extract_embedding(model, clip, pre_emphasis_coeff=pre_emphasis_coeff)

    n_workers = worker_threads()
    if n_workers > 1 and len(wanted) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(one, wanted))
    else:
        results = [one(u) for u in wanted]
    return dict(results)


def score_pairs(trials, embeddings, backend_kind, backend_model=None, codebook=None):
    """Score (enrol, test, label) trials against cached embeddings."""
    if backend_kind not in be.BACKEND_KINDS:
        raise ValueError(f"unknown back-end {backend_kind!r}; choose from {be.BACKEND_KINDS}")
    missing = sorted(({t.enrol_utt for t in trials} | {t.test_utt for t in trials})
                     - set(embeddings))
    if missing:
        raise KeyError(f"no embeddings for utterances: {missing}")
    scored = []
    if backend_kind == "cosine":
        for t in trials:
            pair = be.TrialPair(embeddings[t.enrol_utt], embeddings[t.test_utt])
            scored.append(ScoredTrial(t.enrol_utt, t.test_utt, be.cosine_score(pair), t.label))
        return scored
    if backend_model is None:
        raise ValueError(f"back-end {backend_kind!r} requires a trained model")
    feats = np.stack([
        be.pair_feature(backend_kind,
                        be.TrialPair(embeddings[t.enrol_utt], embeddings[t.test_utt]),
                        codebook)
        for t in trials
    ])
    probs = backend_model.score(feats)
    for t, p in zip(trials, probs):
        scored.append(ScoredTrial(t.enrol_utt, t.test_utt, float(p), t.label))
    return scored


def score_trials(model, trials, entries, corpus_dir, backend_kind,
                 backend_model=None, codebook=None, pre_emphasis_coeff=0.97):
    """Full pipeline: embeddings (cached per utterance) then back-end scores."""
    utt_ids = sorted({t.enrol_utt for t in trials} | {t.test_utt for t in trials})
    embeddings = extract_corpus_embeddings(model, entries, corpus_dir,
                                           pre_emphasis_coeff, utterance_ids=utt_ids)
    return score_pairs(trials, embeddings, backend_kind, backend_model, codebook)


# -- score files ----------------------------------------------------------------


def write_scores(path, scored):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["enrol", "test", "score", "label"])
        for t in scored:
            label = "" if t.label is None else t.label
            w.writerow([t.enrol_id, t.test_id, f"{t.score:.12g}", label])


def load_scores(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            label = int(row["label"]) if row.get("label") not in (None, "") else None
            out.append(ScoredTrial(row["enrol"], row["test"], float(row["score"]), label))
    return out


def write_metrics_summary(txt_path, kv_path, scored):
    """Human-readable summary plus a machine-readable key-value file."""
    eer, threshold = compute_eer(scored)
    n_same = sum(1 for t in scored if t.label == 1)
    n_diff = sum(1 for t in scored if t.label == 0)
    with open(txt_path, "w") as fh:
        fh.write(f"EER      : {100.0 * eer:.4f} %\n")
        fh.write(f"threshold: {threshold:.6g}\n")
        fh.write(f"trials   : {len(scored)} ({n_same} same, {n_diff} different)\n")
    with open(kv_path, "w") as fh:
        fh.write(f"eer = {eer:.12g}\n")
        fh.write(f"threshold = {threshold:.12g}\n")
        fh.write(f"n_trials = {len(scored)}\n")
        fh.write(f"n_same = {n_same}\n")
        fh.write(f"n_different = {n_diff}\n")
    return eer, threshold

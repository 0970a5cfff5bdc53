"""Training orchestration: CNN pre-training, full front-end training with the
three-term objective, and back-end classifier training.

All randomness flows from a single seeded generator per run, and the
reference path is single-threaded, so identical (config, seed) reruns
reproduce logs byte-for-byte.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import fit_length, make_batch, pre_emphasis, read_wav
from .backend import BackendDNN, TrialPair, fit_codebook, pair_feature, feature_dim
from .checkpoint import load_checkpoint, load_model, save_model
from .losses import (CenterBank, basis_loss, center_loss, combined_loss,
                     cross_entropy, update_centers)
from .metrics import ScoredTrial, compute_eer
from .model import (PretrainCNN, RawNet, RawNetConfig, build_pretrain_cnn,
                    build_rawnet, extract_embedding, transfer_pretrained)
from .optim import AMSGrad
from .synth import SPLIT_TRAIN, Trial, load_manifest
from .scoring import score_pairs

LOSS_PROFILES = ("soft", "soft_center_bs")


@dataclass
class TrainConfig:
    """Training hyperparameters (desk-scale defaults; full scale in comments)."""

    batch_size: int = 32            # 102 at full scale
    pretrain_epochs: int = 20
    rawnet_epochs: int = 40
    backend_epochs: int = 20
    lam: float = 1e-3               # center-loss weight
    lr0: float = 1e-3
    lr_decay: float = 1e-4
    weight_decay: float = 1e-4
    center_alpha: float = 0.5
    seed: int = 0
    eval_every: int = 5             # epochs between validation EER passes
    train_len: int = 3 ** 9         # 59049 at full scale
    pre_emphasis: float = 0.97
    loss_profile: str = "soft_center_bs"
    val_fraction: float = 0.1
    backend_hidden: int = 1024
    backend_layers: int = 4
    codebook_k: int = 8
    codebook_d_pca: int = 16

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch normalization)")
        for name in ("lr0", "lr_decay", "weight_decay"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.loss_profile not in LOSS_PROFILES:
            raise ValueError(f"loss_profile must be one of {LOSS_PROFILES}")


class TrainLog:
    """Per-step loss records plus per-evaluation validation EER records."""

    def __init__(self):
        self.steps = []  # (step, l_ce, l_center, l_basis, total, lr_t)
        self.evals = []  # (epoch, step, val_eer)

    def log_step(self, step, l_ce, l_center, l_basis, total, lr_t):
        self.steps.append((step, l_ce, l_center, l_basis, total, lr_t))

    def log_eval(self, epoch, step, val_eer):
        self.evals.append((epoch, step, val_eer))

    def save(self, prefix):
        prefix = Path(prefix)
        with open(prefix.with_name(prefix.name + "_steps.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "l_ce", "l_center", "l_basis", "total", "lr_t"])
            for rec in self.steps:
                w.writerow([rec[0]] + [f"{v:.10g}" for v in rec[1:]])
        with open(prefix.with_name(prefix.name + "_val.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "step", "val_eer"])
            for epoch, step, eer in self.evals:
                w.writerow([epoch, step, f"{eer:.10g}"])


# -- corpus loading -------------------------------------------------------------


class TrainingData:
    """Manifest-backed clips with a per-speaker validation holdout."""

    def __init__(self, corpus_dir, train_cfg):
        corpus_dir = Path(corpus_dir)
        self.corpus_dir = corpus_dir
        entries = load_manifest(corpus_dir / "manifest.csv")
        self.entries = entries
        train_entries = [e for e in entries if e.split == SPLIT_TRAIN]
        speakers = sorted({e.speaker_id for e in train_entries})
        if len(speakers) < 2:
            raise ValueError(f"corpus has {len(speakers)} training speakers, need >= 2")
        self.label_of = {spk: i for i, spk in enumerate(speakers)}
        self.num_speakers = len(speakers)

        rng = np.random.default_rng(train_cfg.seed)
        self.train_clips = []
        self.val_clips = []
        for spk in speakers:
            utts = [e for e in train_entries if e.speaker_id == spk]
            n_val = max(1, int(round(train_cfg.val_fraction * len(utts)))) if len(utts) > 1 else 0
            held = set(rng.choice(len(utts), size=n_val, replace=False)) if n_val else set()
            for i, e in enumerate(utts):
                clip = read_wav(corpus_dir / e.path)
                clip.speaker_id = self.label_of[e.speaker_id]
                clip.utterance_id = e.utterance_id
                clip = pre_emphasis(clip, train_cfg.pre_emphasis)
                (self.val_clips if i in held else self.train_clips).append(clip)

    def batches(self, train_cfg, rng):
        """Seeded shuffle, random per-epoch crops, fixed-size batches."""
        order = rng.permutation(len(self.train_clips))
        bs = train_cfg.batch_size
        for start in range(0, len(order) - bs + 1, bs):
            clips = [fit_length(self.train_clips[i], train_cfg.train_len, rng)
                     for i in order[start:start + bs]]
            yield make_batch(clips)

    def validation_batch(self, train_cfg):
        clips = [fit_length(c, train_cfg.train_len) for c in self.val_clips]
        return make_batch(clips)

    def validation_trials(self, seed):
        """Same/different pairs among held-out utterances (already pre-emphasized)."""
        rng = np.random.default_rng(seed)
        by_spk = {}
        for c in self.val_clips:
            by_spk.setdefault(c.speaker_id, []).append(c.utterance_id)
        same = [Trial(a, b, 1) for utts in by_spk.values()
                for i, a in enumerate(utts) for b in utts[i + 1:]]
        spks = sorted(by_spk)
        diff_pool = [(a, b) for i, s in enumerate(spks) for t in spks[i + 1:]
                     for a in by_spk[s] for b in by_spk[t]]
        if not same or not diff_pool:
            return []
        k = min(len(same), len(diff_pool))
        idx = rng.choice(len(diff_pool), size=k, replace=False)
        return same + [Trial(*diff_pool[i], 0) for i in sorted(idx)]


def _val_embeddings(model, data):
    out = {}
    for clip in data.val_clips:
        out[clip.utterance_id] = extract_embedding(model, clip)
    return out


def _validation_eer(model, data, trials):
    if not trials:
        return float("nan")
    embeddings = _val_embeddings(model, data)
    scored = score_pairs(trials, embeddings, "cosine")
    return compute_eer(scored)[0]


def _save_config(ckpt_path, model_cfg):
    Path(str(ckpt_path) + ".cfg.json").write_text(model_cfg.to_json())


def load_front_model(ckpt_path, kind="rawnet"):
    """Rebuild a front-end model from a checkpoint and its sibling config."""
    cfg = RawNetConfig.from_json(Path(str(ckpt_path) + ".cfg.json").read_text())
    model = build_rawnet(cfg) if kind == "rawnet" else build_pretrain_cnn(cfg)
    load_model(ckpt_path, model)
    model.eval()
    return model, cfg


# -- phase 1: CNN pre-training ----------------------------------------------------


def pretrain_cnn(corpus_dir, model_cfg, train_cfg, out_dir):
    """Train the pooling-head CNN with cross-entropy only; returns checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = TrainingData(corpus_dir, train_cfg)
    cfg = _with_speakers(model_cfg, data.num_speakers)
    model = build_pretrain_cnn(cfg)
    opt = AMSGrad(model.parameters(), lr=train_cfg.lr0, decay=train_cfg.lr_decay,
                  weight_decay=train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed + 1)
    log = TrainLog()
    step = 0
    for _ in range(train_cfg.pretrain_epochs):
        model.train()
        for x, labels in data.batches(train_cfg, rng):
            loss = cross_entropy(model(x), labels)
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            step += 1
            log.log_step(step, loss.item(), 0.0, 0.0, loss.item(), opt.lr_t)
    ckpt = out_dir / "cnn.ckpt"
    save_model(ckpt, model, optimizer=opt)
    _save_config(ckpt, cfg)
    log.save(out_dir / "pretrain")
    return ckpt, log


def _with_speakers(model_cfg, num_speakers):
    if model_cfg.num_speakers == num_speakers:
        return model_cfg
    d = asdict(model_cfg)
    d["num_speakers"] = num_speakers
    return RawNetConfig(**d)


# -- phase 2: full front-end training ---------------------------------------------


def train_rawnet(corpus_dir, model_cfg, train_cfg, out_dir, pretrained=None):
    """Train the embedding network with the selected loss profile.

    With ``pretrained`` pointing at a CNN checkpoint, the conv stack is
    transferred before training.  The checkpoint with the best validation
    EER is kept as ``rawnet.ckpt``; returns (path, log).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = TrainingData(corpus_dir, train_cfg)
    cfg = _with_speakers(model_cfg, data.num_speakers)
    model = build_rawnet(cfg)
    if pretrained is not None:
        cnn, cnn_cfg = load_front_model(pretrained, kind="cnn")
        if asdict(cnn_cfg) != asdict(cfg):
            raise ValueError(
                "pretrained checkpoint config is incompatible with this run's config")
        transfer_pretrained(cnn, model)

    use_extra_losses = train_cfg.loss_profile == "soft_center_bs"
    bank = CenterBank(cfg.num_speakers, cfg.scaled(cfg.embedding_dim),
                      alpha=train_cfg.center_alpha)
    opt = AMSGrad(model.parameters(), lr=train_cfg.lr0, decay=train_cfg.lr_decay,
                  weight_decay=train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed + 2)
    val_trials = data.validation_trials(train_cfg.seed + 3)
    log = TrainLog()
    best = (float("inf"), -1)
    ckpt = out_dir / "rawnet.ckpt"
    step = 0
    for epoch in range(1, train_cfg.rawnet_epochs + 1):
        model.train()
        for x, labels in data.batches(train_cfg, rng):
            emb, logits = model.forward(x, rng=rng)
            if use_extra_losses:
                l_ce = cross_entropy(logits, labels)
                l_c = center_loss(emb, labels, bank)
                l_bs = basis_loss(model.output_weight.tensor)
                loss = l_ce + train_cfg.lam * l_c + l_bs
            else:
                l_ce = loss = cross_entropy(logits, labels)
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            if use_extra_losses:
                update_centers(emb, labels, bank)  # once per optimizer step
            step += 1
            log.log_step(step, l_ce.item(),
                         l_c.item() if use_extra_losses else 0.0,
                         l_bs.item() if use_extra_losses else 0.0,
                         loss.item(), opt.lr_t)
        if epoch % train_cfg.eval_every == 0 or epoch == train_cfg.rawnet_epochs:
            eer = _validation_eer(model, data, val_trials)
            log.log_eval(epoch, step, eer)
            if not np.isnan(eer) and eer < best[0]:
                best = (eer, epoch)
                save_model(ckpt, model, optimizer=opt,
                           extra_buffers={"center_bank": bank.centers})
                _save_config(ckpt, cfg)
    if best[1] < 0:  # no validation trials: keep the final model
        save_model(ckpt, model, optimizer=opt,
                   extra_buffers={"center_bank": bank.centers})
        _save_config(ckpt, cfg)
    log.save(out_dir / "train")
    return ckpt, log


# -- phase 3: back-end classifier --------------------------------------------------


def _embedding_pairs(embeddings_by_spk, rng):
    """Balanced 1:1 same/different utterance pairs from training speakers."""
    same = []
    for utts in embeddings_by_spk.values():
        ids = sorted(utts)
        same.extend((a, b, 1) for i, a in enumerate(ids) for b in ids[i + 1:])
    spks = sorted(embeddings_by_spk)
    diff_pool = [(a, b) for i, s in enumerate(spks) for t in spks[i + 1:]
                 for a in sorted(embeddings_by_spk[s]) for b in sorted(embeddings_by_spk[t])]
    k = min(len(same), len(diff_pool))
    idx = rng.choice(len(diff_pool), size=k, replace=False)
    pairs = same + [(*diff_pool[i], 0) for i in sorted(idx)]
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def train_backend(corpus_dir, front_ckpt, kind, train_cfg, out_dir):
    """Train a pair classifier on frozen front-end embeddings.

    ``kind`` selects the feature construction (b-vector, rb-vector,
    concat-mul).  Pairs are sampled 1:1 same/different from the training
    split; the checkpoint with the best held-out pair EER is kept.
    """
    front, front_cfg = load_front_model(front_ckpt)
    corpus_dir = Path(corpus_dir)
    entries = [e for e in load_manifest(corpus_dir / "manifest.csv")
               if e.split == SPLIT_TRAIN]
    if len({e.speaker_id for e in entries}) < 2:
        raise ValueError("back-end training needs utterances from >= 2 speakers")

    emb_by_utt = {}
    spk_of_utt = {}
    for e in entries:
        clip = read_wav(corpus_dir / e.path)
        clip.utterance_id = e.utterance_id
        emb_by_utt[e.utterance_id] = extract_embedding(
            front, clip, pre_emphasis_coeff=train_cfg.pre_emphasis)
        spk_of_utt[e.utterance_id] = e.speaker_id
    return train_backend_on_embeddings(emb_by_utt, spk_of_utt, kind, train_cfg, out_dir,
                                       slope=front_cfg.leaky_slope)


def train_backend_on_embeddings(emb_by_utt, spk_of_utt, kind, train_cfg, out_dir,
                                slope=0.3):
    """Back-end training core over precomputed utterance embeddings."""
    if kind not in ("b-vector", "rb-vector", "concat-mul"):
        raise ValueError(f"unknown back-end kind {kind!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_spk = {}
    for utt, spk in spk_of_utt.items():
        by_spk.setdefault(spk, []).append(utt)

    rng = np.random.default_rng(train_cfg.seed + 4)
    pairs = _embedding_pairs(by_spk, rng)
    n_val = max(2, int(round(train_cfg.val_fraction * len(pairs))))
    val_pairs, fit_pairs = pairs[:n_val], pairs[n_val:]
    # train on both orderings of each pair: trial lists fix an (enrol, test)
    # order, so the classifier must score either ordering sensibly
    fit_pairs = fit_pairs + [(b, a, lab) for a, b, lab in fit_pairs]

    codebook = None
    if kind == "rb-vector":
        codebook = fit_codebook(np.stack(list(emb_by_utt.values())),
                                k=train_cfg.codebook_k, d_pca=train_cfg.codebook_d_pca,
                                seed=train_cfg.seed + 5)

    def features(pair_list):
        feats = np.stack([
            pair_feature(kind, TrialPair(emb_by_utt[a], emb_by_utt[b]), codebook)
            for a, b, _ in pair_list])
        labels = np.array([lab for _, _, lab in pair_list], dtype=np.int64)
        return feats.astype(np.float32), labels

    emb_dim = len(next(iter(emb_by_utt.values())))
    dnn = BackendDNN(feature_dim(kind, emb_dim, codebook),
                     hidden=train_cfg.backend_hidden, num_layers=train_cfg.backend_layers,
                     slope=slope, seed=train_cfg.seed + 6)
    opt = AMSGrad(dnn.parameters(), lr=train_cfg.lr0, decay=train_cfg.lr_decay,
                  weight_decay=train_cfg.weight_decay)
    val_x, val_y = features(val_pairs)

    log = TrainLog()
    best = (float("inf"), -1)
    ckpt = out_dir / f"backend_{kind}.ckpt"
    extra = _codebook_buffers(codebook)
    step = 0
    bs = train_cfg.batch_size
    for epoch in range(1, train_cfg.backend_epochs + 1):
        order = rng.permutation(len(fit_pairs))
        dnn.train()
        for start in range(0, len(order) - 1, bs):
            batch = [fit_pairs[i] for i in order[start:start + bs]]
            x, y = features(batch)
            loss = cross_entropy(dnn(x), y)
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            step += 1
            log.log_step(step, loss.item(), 0.0, 0.0, loss.item(), opt.lr_t)
        dnn.eval()
        probs = dnn.score(val_x)
        scored = [ScoredTrial(a, b, float(p), lab)
                  for (a, b, lab), p in zip(val_pairs, probs)]
        eer = compute_eer(scored)[0] if 0 < val_y.sum() < len(val_y) else float("nan")
        log.log_eval(epoch, step, eer)
        if not np.isnan(eer) and eer < best[0]:
            best = (eer, epoch)
            save_model(ckpt, dnn, optimizer=opt, extra_buffers=extra)
    if best[1] < 0:
        save_model(ckpt, dnn, optimizer=opt, extra_buffers=extra)
    _save_backend_meta(ckpt, kind, dnn, train_cfg)
    log.save(out_dir / f"backend_{kind}")
    return ckpt, log


def _codebook_buffers(codebook):
    if codebook is None:
        return None
    return {"codebook/vectors": codebook.vectors,
            "codebook/pca_mean": codebook.pca.mean,
            "codebook/pca_components": codebook.pca.components}


def _save_backend_meta(ckpt, kind, dnn, train_cfg):
    import json

    meta = {"kind": kind, "input_dim": dnn.input_dim,
            "hidden": train_cfg.backend_hidden, "num_layers": train_cfg.backend_layers,
            "slope": dnn.slope}
    Path(str(ckpt) + ".cfg.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_backend_model(ckpt_path):
    """Rebuild a trained back-end DNN (and codebook, if any) from disk."""
    import json

    from .backend import PCA, RepresentativeCodebook

    meta = json.loads(Path(str(ckpt_path) + ".cfg.json").read_text())
    dnn = BackendDNN(meta["input_dim"], hidden=meta["hidden"],
                     num_layers=meta["num_layers"], slope=meta["slope"])
    leftovers = load_model(ckpt_path, dnn)
    dnn.eval()
    codebook = None
    if "codebook/vectors" in leftovers:
        pca = PCA(leftovers["codebook/pca_components"].shape[1])
        pca.mean = leftovers["codebook/pca_mean"]
        pca.components = leftovers["codebook/pca_components"]
        codebook = RepresentativeCodebook(vectors=leftovers["codebook/vectors"], pca=pca)
    return dnn, meta["kind"], codebook

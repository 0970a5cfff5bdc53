"""Front-end network: strided conv, residual blocks, GRU aggregation.

Two builders share one parameter namespace for the convolutional stack:

* :class:`RawNet` -- front conv -> residual blocks -> GRU -> FC(embedding)
  -> FC(num_speakers).  The FC(embedding) output is the speaker embedding.
* :class:`PretrainCNN` -- same front and blocks, then global average pooling
  and an output layer.  After pre-training, only the pooling head is
  discarded; every convolutional/BN parameter transfers by name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .nn import GRU, BatchNorm1d, Conv1d, Linear, Module
from .tensor import Tensor


class TransferError(ValueError):
    pass


@dataclass
class RawNetConfig:
    """Architecture hyperparameters; defaults match the full-scale network."""

    filter_len: int = 3
    stride: int = 3
    front_channels: int = 128
    block_plan: tuple = ((2, 128), (4, 256))
    pool: int = 3
    gru_hidden: int = 1024
    embedding_dim: int = 128
    num_speakers: int = 1211
    leaky_slope: float = 0.3
    recurrent_dropout: float = 0.3
    bn_momentum: float = 0.99  # lower this for short desk-scale runs
    scale_factor: int = 1  # divides all widths for desk-scale runs
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.block_plan = tuple((int(n), int(c)) for n, c in self.block_plan)
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")
        if self.num_speakers < 2:
            raise ValueError("num_speakers must be at least 2")
        for name, width in [("front_channels", self.front_channels),
                            ("gru_hidden", self.gru_hidden),
                            ("embedding_dim", self.embedding_dim),
                            *[(f"block channels {c}", c) for _, c in self.block_plan]]:
            if width % self.scale_factor != 0:
                raise ValueError(f"scale_factor {self.scale_factor} does not divide {name}")

    # scaled widths -----------------------------------------------------------
    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def scaled(self, width):
        return width // self.scale_factor

    @property
    def num_blocks(self):
        return sum(n for n, _ in self.block_plan)

    @property
    def reduction(self):
        """Total time downsampling from input samples to GRU frames."""
        return self.stride * self.pool ** self.num_blocks

    @property
    def min_input_len(self):
        return self.reduction

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["block_plan"] = tuple(tuple(p) for p in d["block_plan"])
        return cls(**d)


class ResidualBlock(Module):
    """Conv-BN-LReLU-Conv-BN, add skip, then LReLU and MaxPool(pool).

    A 1x1 projection is inserted on the skip path only when the channel
    count increases, keeping the identity addition well-shaped.
    """

    def __init__(self, in_ch, out_ch, cfg, rng):
        super().__init__()
        dt = cfg.np_dtype
        self.slope = cfg.leaky_slope
        self.pool = cfg.pool
        self.conv1 = self.register_child(
            "conv1", Conv1d(in_ch, out_ch, cfg.filter_len, rng=rng, dtype=dt))
        self.bn1 = self.register_child(
            "bn1", BatchNorm1d(out_ch, momentum=cfg.bn_momentum, dtype=dt))
        self.conv2 = self.register_child(
            "conv2", Conv1d(out_ch, out_ch, cfg.filter_len, rng=rng, dtype=dt))
        self.bn2 = self.register_child(
            "bn2", BatchNorm1d(out_ch, momentum=cfg.bn_momentum, dtype=dt))
        self.proj = None
        if in_ch != out_ch:
            self.proj = self.register_child("proj", Conv1d(in_ch, out_ch, 1, rng=rng, dtype=dt))

    def forward(self, x):
        out = T.leaky_relu(self.bn1(self.conv1(x)), self.slope)
        out = self.bn2(self.conv2(out))
        skip = self.proj(x) if self.proj is not None else x
        out = T.leaky_relu(out + skip, self.slope)
        return T.maxpool1d(out, self.pool)


class _ConvStack(Module):
    """Strided front convolution plus the residual block sequence."""

    def __init__(self, cfg, rng):
        super().__init__()
        dt = cfg.np_dtype
        self.slope = cfg.leaky_slope
        front_ch = cfg.scaled(cfg.front_channels)
        front = Module()
        front.register_child("conv", Conv1d(1, front_ch, cfg.filter_len, stride=cfg.stride,
                                            padding="valid", rng=rng, dtype=dt))
        front.register_child("bn", BatchNorm1d(front_ch, momentum=cfg.bn_momentum, dtype=dt))
        self.front = self.register_child("front", front)
        blocks = Module()
        ch = front_ch
        idx = 0
        for n, raw_ch in cfg.block_plan:
            out_ch = cfg.scaled(raw_ch)
            for _ in range(n):
                blocks.register_child(str(idx), ResidualBlock(ch, out_ch, cfg, rng))
                ch = out_ch
                idx += 1
        self.blocks = self.register_child("blocks", blocks)
        self.out_channels = ch

    def forward(self, x):
        h = T.leaky_relu(self.front._children["bn"](self.front._children["conv"](x)), self.slope)
        for block in self.blocks._children.values():
            h = block(h)
        return h


class RawNet(Module):
    """Full embedding network producing (embedding, logits)."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        dt = cfg.np_dtype
        self.stack = self.register_child("stack", _ConvStack(cfg, rng))
        self.gru = self.register_child(
            "gru", GRU(self.stack.out_channels, cfg.scaled(cfg.gru_hidden),
                       recurrent_dropout=cfg.recurrent_dropout, rng=rng, dtype=dt))
        self.fc_embed = self.register_child(
            "fc_embed", Linear(cfg.scaled(cfg.gru_hidden), cfg.scaled(cfg.embedding_dim),
                               rng=rng, dtype=dt))
        self.fc_out = self.register_child(
            "fc_out", Linear(cfg.scaled(cfg.embedding_dim), cfg.num_speakers, rng=rng, dtype=dt))

    def forward(self, x, rng=None):
        """Map waveforms (N, L) to (embedding (N, D), logits (N, M))."""
        if x.ndim != 2:
            raise ValueError(f"expected (N, L) waveform batch, got shape {x.shape}")
        h = Tensor(np.asarray(x, dtype=self.cfg.np_dtype)[:, :, None])
        h = self.stack(h)
        h = self.gru(h, rng=rng)
        emb = self.fc_embed(h)
        logits = self.fc_out(emb)
        return emb, logits

    @property
    def output_weight(self):
        """Output-layer weight (D, M); columns are per-speaker basis vectors."""
        return self.fc_out.weight

    def shape_trace(self, input_len):
        """Per-layer output shapes for one input (front, blocks, GRU, FCs)."""
        x = np.zeros((1, input_len), dtype=self.cfg.np_dtype)
        was_training = self.training
        self.eval()
        trace = []
        with T.no_grad():
            h = Tensor(x[:, :, None])
            h = T.leaky_relu(self.stack.front._children["bn"](
                self.stack.front._children["conv"](h)), self.cfg.leaky_slope)
            trace.append(h.shape[1:])
            blocks = list(self.stack.blocks._children.values())
            i = 0
            for n, _ in self.cfg.block_plan:
                for _ in range(n):
                    h = blocks[i](h)
                    i += 1
                trace.append(h.shape[1:])
            h = self.gru(h)
            trace.append(h.shape[1:])
            emb = self.fc_embed(h)
            trace.append(emb.shape[1:])
            logits = self.fc_out(emb)
            trace.append(logits.shape[1:])
        if was_training:
            self.train()
        return trace


class PretrainCNN(Module):
    """Pre-training variant: shared conv stack, GAP head, output layer."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.stack = self.register_child("stack", _ConvStack(cfg, rng))
        self.gap_fc = self.register_child(
            "gap_fc", Linear(self.stack.out_channels, cfg.num_speakers,
                             rng=rng, dtype=cfg.np_dtype))

    def forward(self, x):
        """Map waveforms (N, L) to logits (N, M) through global average pooling."""
        if x.ndim != 2:
            raise ValueError(f"expected (N, L) waveform batch, got shape {x.shape}")
        h = Tensor(np.asarray(x, dtype=self.cfg.np_dtype)[:, :, None])
        h = self.stack(h)
        pooled = h.mean(axis=1)
        return self.gap_fc(pooled)

    def frame_features(self, x):
        """Last residual block activations (N, T', C), for transfer checks."""
        h = Tensor(np.asarray(x, dtype=self.cfg.np_dtype)[:, :, None])
        return self.stack(h)


def build_rawnet(cfg):
    return RawNet(cfg)


def build_pretrain_cnn(cfg):
    return PretrainCNN(cfg)


def transfer_pretrained(cnn, rawnet):
    """Copy every shared conv/BN parameter and buffer from cnn into rawnet.

    The CNN's pooling head is discarded; GRU/FC layers keep their fresh
    initialization.  Raises if the conv stacks do not match exactly.
    """
    cnn_params = {k: v for k, v in cnn.parameters().items() if k.startswith("stack/")}
    raw_params = rawnet.parameters()
    shared = {k for k in raw_params if k.startswith("stack/")}
    if set(cnn_params) != shared:
        unmatched = sorted(set(cnn_params) ^ shared)
        raise TransferError(f"conv stacks differ; unmatched parameters: {unmatched}")
    for name, p in cnn_params.items():
        if raw_params[name].data.shape != p.data.shape:
            raise TransferError(
                f"shape mismatch for {name}: {p.data.shape} vs {raw_params[name].data.shape}")
        raw_params[name].tensor.data = p.data.copy()
    raw_buffers = rawnet.buffers()
    for name, arr in cnn.buffers().items():
        if name in raw_buffers:
            rawnet.set_buffer(name, arr)
    return rawnet


def extract_embedding(model, clip, pre_emphasis_coeff=None):
    """Deterministic eval-mode embedding for an arbitrary-length clip.

    The clip must be at least ``reduction`` samples long (one GRU frame);
    any tail remainder shorter than one frame is trimmed so the pooling
    schedule divides evenly.
    """
    from .audio import pre_emphasis as apply_pe

    red = model.cfg.reduction
    if pre_emphasis_coeff is not None:
        clip = apply_pe(clip, pre_emphasis_coeff)
    n = len(clip.samples)
    if n < red:
        raise ValueError(
            f"clip {clip.utterance_id!r} has {n} samples; minimum is {red}")
    usable = (n // red) * red
    x = clip.samples[:usable][None, :]
    was_training = model.training
    model.eval()
    with T.no_grad():
        emb, _ = model.forward(x)
    if was_training:
        model.train()
    return emb.data[0].copy()

"""The two subnetworks: dual-stream 3D residual video encoder and the
attribute-text encoder, plus softmax classification heads and checkpointing.

Video side: each stream is a 3D ResNet over one input modality (3-channel
appearance, 2-channel flow) with disjoint parameters. Stage geometry for a
16x112x112 clip: stem 8x56x56, stage2 8x56x56, stage3 4x28x28, stage4
2x14x14, stage5 1x7x7, then global average pool and a 128-d projection per
stream; the two projections concatenate to the 256-d fused feature.

The stem convolution is 3x7x7 with stride (2,2,2): the source table's
stride annotation (1x2x2) contradicts its own output column for 16-frame
input, and the output column wins so every stage size is reproduced.

Attribute side: token embedding (64-d), mean pool over non-pad tokens, and
a two-layer perceptron up to 256-d. This is a deliberate stand-in for a
pretrained text encoder, kept behind the same encode interface so a
transformer can be swapped in.

All computation inside the streams runs channels-last; the public entry
points accept the [N,C,T,H,W] contract and transpose once at the boundary.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ContractError, DegenerateInputError, DimensionError, FormatError
from .facs import PAD_ID
from .flowprep import ClipPair
from .numcore import Tensor

_DEPTH_BLOCKS = {10: (1, 1, 1, 1), 18: (2, 2, 2, 2), 34: (3, 4, 6, 3)}


@dataclass(frozen=True)
class ResNet3DConfig:
    depth: int = 10
    blocks_per_stage: tuple = None
    stage_channels: tuple = (64, 128, 256, 512)
    embed_dim: int = 128

    def __post_init__(self):
        if self.depth not in _DEPTH_BLOCKS:
            raise ConfigError(f"depth must be one of {sorted(_DEPTH_BLOCKS)}, got {self.depth}")
        expect = _DEPTH_BLOCKS[self.depth]
        if self.blocks_per_stage is None:
            object.__setattr__(self, "blocks_per_stage", expect)
        elif tuple(self.blocks_per_stage) != expect:
            raise ConfigError(
                f"depth {self.depth} requires blocks {expect}, got {tuple(self.blocks_per_stage)}"
            )


def _uniform(rng, shape, fan_in):
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _param(data):
    return Tensor(data, requires_grad=True)


class _ConvBN:
    """Convolution (channels-last core) followed by batch normalization.

    Training uses current-batch statistics and folds them into a running
    estimate; inference normalizes with the running estimate so a sample's
    features never depend on its batch companions.
    """

    _MOMENTUM = 0.1

    def __init__(self, rng, in_ch, out_ch, kernel, stride, padding):
        kt, kh, kw = kernel
        self.stride = stride
        self.padding = padding
        self.w = _param(_uniform(rng, (out_ch, in_ch, kt, kh, kw), in_ch * kt * kh * kw))
        self.gamma = _param(np.ones(out_ch, np.float32))
        self.beta = _param(np.zeros(out_ch, np.float32))
        self.running_mean = Tensor(np.zeros(out_ch, np.float32))
        self.running_var = Tensor(np.ones(out_ch, np.float32))
        self._seen_batch = False

    def __call__(self, x, training):
        y = nc.conv3d_cl(x, self.w, stride=self.stride, padding=self.padding)
        if training:
            self._track(y.data)
            return nc.batchnorm(y, self.gamma, self.beta, channel_axis=-1)
        return nc.batchnorm_inference(
            y, self.gamma, self.beta, self.running_mean.data, self.running_var.data, channel_axis=-1
        )

    def _track(self, yd):
        flat = yd.reshape(-1, yd.shape[-1])
        # biased variance, matching what train-mode normalization divides by
        mean = flat.mean(axis=0, dtype=np.float64).astype(np.float32)
        var = flat.var(axis=0, dtype=np.float64).astype(np.float32)
        if not self._seen_batch:
            # first batch seeds the estimate so short runs are not dragged
            # toward the arbitrary (0, 1) init
            self.running_mean.data = mean
            self.running_var.data = var
            self._seen_batch = True
        else:
            m = self._MOMENTUM
            self.running_mean.data = (1.0 - m) * self.running_mean.data + m * mean
            self.running_var.data = (1.0 - m) * self.running_var.data + m * var

    def params(self, prefix):
        return [(f"{prefix}.w", self.w), (f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def state(self, prefix):
        return self.params(prefix) + [
            (f"{prefix}.running_mean", self.running_mean),
            (f"{prefix}.running_var", self.running_var),
        ]


class _BasicBlock:
    """Two 3x3x3 conv+bn with relu, residual shortcut, relu after the add.

    The first block of a downsampling stage carries stride 2 and a 1x1x1
    projection shortcut (also batch-normalized)."""

    def __init__(self, rng, in_ch, out_ch, stride):
        self.conv1 = _ConvBN(rng, in_ch, out_ch, (3, 3, 3), stride, (1, 1, 1))
        self.conv2 = _ConvBN(rng, out_ch, out_ch, (3, 3, 3), (1, 1, 1), (1, 1, 1))
        if stride != (1, 1, 1) or in_ch != out_ch:
            self.down = _ConvBN(rng, in_ch, out_ch, (1, 1, 1), stride, (0, 0, 0))
        else:
            self.down = None

    def __call__(self, x, training):
        y = self.conv2(nc.relu(self.conv1(x, training)), training)
        shortcut = self.down(x, training) if self.down is not None else x
        return nc.relu(nc.add(y, shortcut))

    def params(self, prefix):
        out = self.conv1.params(f"{prefix}.conv1") + self.conv2.params(f"{prefix}.conv2")
        if self.down is not None:
            out += self.down.params(f"{prefix}.down")
        return out

    def state(self, prefix):
        out = self.conv1.state(f"{prefix}.conv1") + self.conv2.state(f"{prefix}.conv2")
        if self.down is not None:
            out += self.down.state(f"{prefix}.down")
        return out


class Stream:
    """One 3D-ResNet over a single modality, producing an embed_dim vector."""

    def __init__(self, config: ResNet3DConfig, in_channels: int, seed: int):
        self.config = config
        self.in_channels = in_channels
        self.seed = seed
        rng = np.random.default_rng(seed)
        ch = config.stage_channels
        self.stem = _ConvBN(rng, in_channels, ch[0], (3, 7, 7), (2, 2, 2), (1, 3, 3))
        self.stages = []
        prev = ch[0]
        for stage_i, (n_blocks, out_ch) in enumerate(zip(config.blocks_per_stage, ch)):
            blocks = []
            for block_i in range(n_blocks):
                stride = (2, 2, 2) if (stage_i > 0 and block_i == 0) else (1, 1, 1)
                blocks.append(_BasicBlock(rng, prev, out_ch, stride))
                prev = out_ch
            self.stages.append(blocks)
        self.fc_w = _param(_uniform(rng, (ch[3], config.embed_dim), ch[3]))
        self.fc_b = _param(np.zeros(config.embed_dim, np.float32))

    def forward(self, x_cl: Tensor, probes: dict = None, training: bool = False) -> Tensor:
        """x_cl: channels-last [N,T,H,W,C] -> [N,embed_dim]."""

        def record(key, h):
            if probes is not None:
                n, t, hh, ww, c = h.shape
                probes[key] = (c, t, hh, ww)

        h = nc.relu(self.stem(x_cl, training))
        record("conv1", h)
        for stage_i, blocks in enumerate(self.stages):
            for block in blocks:
                h = block(h, training)
            record(f"conv{stage_i + 2}_x", h)
        pooled = nc.global_avg_pool(h, channel_axis=-1)
        if probes is not None:
            probes["pool"] = tuple(pooled.shape)
        out = nc.linear(pooled, self.fc_w, self.fc_b)
        if probes is not None:
            probes["fc"] = tuple(out.shape)
        return out

    def params(self, prefix=""):
        out = self.stem.params(f"{prefix}stem")
        for stage_i, blocks in enumerate(self.stages):
            for block_i, block in enumerate(blocks):
                out += block.params(f"{prefix}stage{stage_i + 2}.block{block_i + 1}")
        out += [(f"{prefix}fc.w", self.fc_w), (f"{prefix}fc.b", self.fc_b)]
        return out

    def state(self, prefix=""):
        """params plus the batchnorm running statistics (not optimized)."""
        out = self.stem.state(f"{prefix}stem")
        for stage_i, blocks in enumerate(self.stages):
            for block_i, block in enumerate(blocks):
                out += block.state(f"{prefix}stage{stage_i + 2}.block{block_i + 1}")
        out += [(f"{prefix}fc.w", self.fc_w), (f"{prefix}fc.b", self.fc_b)]
        return out


def build_resnet3d(config: ResNet3DConfig, in_channels: int, seed: int) -> Stream:
    """Stream network per the stage table, deterministically initialized."""
    if in_channels < 1:
        raise ConfigError(f"in_channels must be >= 1, got {in_channels}")
    return Stream(config, in_channels, seed)


class VideoEncoder:
    """Dual-stream video encoder; no parameter is shared between streams."""

    def __init__(self, config: ResNet3DConfig = ResNet3DConfig(), seed: int = 0):
        self.config = config
        self.seed = seed
        self.rgb_stream = build_resnet3d(config, 3, seed)
        self.flow_stream = build_resnet3d(config, 2, seed + 1)

    def encode_batch(self, rgb: Tensor, flow: Tensor, probes: dict = None, training: bool = False) -> Tensor:
        """rgb [N,3,T,H,W] and flow [N,2,T,H,W] -> fused features [N,256]."""
        if rgb.data.ndim != 5 or rgb.shape[1] != 3:
            raise DimensionError(f"encode_batch: rgb must be [N,3,T,H,W], got {rgb.shape}")
        if flow.data.ndim != 5 or flow.shape[1] != 2:
            raise DimensionError(f"encode_batch: flow must be [N,2,T,H,W], got {flow.shape}")
        if rgb.shape[0] != flow.shape[0] or rgb.shape[2:] != flow.shape[2:]:
            raise DimensionError(
                f"encode_batch: stream geometries differ: {rgb.shape} vs {flow.shape}"
            )
        z_rgb = self.rgb_stream.forward(nc.transpose(rgb, (0, 2, 3, 4, 1)), probes, training)
        z_flow = self.flow_stream.forward(nc.transpose(flow, (0, 2, 3, 4, 1)), training=training)
        return nc.concat(z_rgb, z_flow)

    def params(self):
        return dict(self.rgb_stream.params("rgb.") + self.flow_stream.params("flow."))

    def state(self):
        return dict(self.rgb_stream.state("rgb.") + self.flow_stream.state("flow."))

    def save(self, directory, stem="video"):
        meta = {"kind": "video", "depth": self.config.depth, "seed": self.seed}
        _save_params(directory, stem, self.state(), meta)

    @classmethod
    def load(cls, directory, stem="video"):
        arrays, meta = _load_params(directory, stem)
        if meta.get("kind") != "video":
            raise FormatError(f"checkpoint {stem} is kind {meta.get('kind')!r}, expected 'video'")
        enc = cls(ResNet3DConfig(depth=int(meta["depth"])), seed=int(meta["seed"]))
        _restore(enc.state(), arrays, stem)
        return enc


def encode_video(pair: ClipPair, enc: VideoEncoder) -> Tensor:
    """Fused 256-d feature of one clip pair."""
    rgb = Tensor(pair.rgb.data[None])
    flow = Tensor(pair.flow.data[None])
    return nc.row(enc.encode_batch(rgb, flow), 0)


class AttributeEncoder:
    """Token embedding, mean pool over non-pad tokens, two-layer perceptron."""

    def __init__(self, vocab_size: int, seed: int = 0, embed_dim: int = 64, out_dim: int = 256):
        if vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {vocab_size}")
        self.vocab_size = vocab_size
        self.seed = seed
        self.embed_dim = embed_dim
        self.out_dim = out_dim
        rng = np.random.default_rng(seed)
        self.emb = _param(_uniform(rng, (vocab_size, embed_dim), embed_dim))
        self.w1 = _param(_uniform(rng, (embed_dim, out_dim), embed_dim))
        self.b1 = _param(np.zeros(out_dim, np.float32))
        self.w2 = _param(_uniform(rng, (out_dim, out_dim), out_dim))
        self.b2 = _param(np.zeros(out_dim, np.float32))

    def encode_batch(self, tokens) -> Tensor:
        """tokens [N,L] int ids (0 = pad) -> [N,out_dim]."""
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise DimensionError(f"encode_batch: tokens must be [N,L], got shape {tokens.shape}")
        mask = tokens != PAD_ID
        counts = mask.sum(axis=1)
        if (counts == 0).any():
            raise DegenerateInputError("encode_batch: all-pad token sequence")
        e = nc.embedding(self.emb, tokens)
        e = nc.mul(e, mask[:, :, None].astype(np.float32))
        pooled = nc.mul(nc.sum_axis(e, 1), (1.0 / counts)[:, None].astype(np.float32))
        h = nc.relu(nc.linear(pooled, self.w1, self.b1))
        return nc.linear(h, self.w2, self.b2)

    def params(self):
        return {"emb": self.emb, "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def save(self, directory, stem="attr"):
        meta = {
            "kind": "attr",
            "vocab_size": self.vocab_size,
            "seed": self.seed,
            "embed_dim": self.embed_dim,
            "out_dim": self.out_dim,
        }
        _save_params(directory, stem, self.params(), meta)

    @classmethod
    def load(cls, directory, stem="attr"):
        arrays, meta = _load_params(directory, stem)
        if meta.get("kind") != "attr":
            raise FormatError(f"checkpoint {stem} is kind {meta.get('kind')!r}, expected 'attr'")
        enc = cls(
            int(meta["vocab_size"]),
            seed=int(meta["seed"]),
            embed_dim=int(meta["embed_dim"]),
            out_dim=int(meta["out_dim"]),
        )
        _restore(enc.params(), arrays, stem)
        return enc


def encode_attr(tokens, enc: AttributeEncoder) -> Tensor:
    """256-d embedding of one padded token sequence."""
    return nc.row(enc.encode_batch(np.asarray(tokens)[None]), 0)


class ClassifyHead:
    """Linear map plus softmax over n classes."""

    def __init__(self, in_dim: int, n_classes: int, seed: int = 0):
        if n_classes < 2:
            raise ContractError(f"n_classes must be >= 2, got {n_classes}")
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.w = _param(_uniform(rng, (in_dim, n_classes), in_dim))
        self.b = _param(np.zeros(n_classes, np.float32))

    def probabilities(self, features: Tensor) -> Tensor:
        """[N,in_dim] -> [N,n_classes] rows summing to 1."""
        return nc.softmax(nc.linear(features, self.w, self.b))

    def params(self, prefix="head"):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def save(self, directory, stem="head"):
        meta = {
            "kind": "head",
            "in_dim": self.in_dim,
            "n_classes": self.n_classes,
            "seed": self.seed,
        }
        _save_params(directory, stem, self.params(), meta)

    @classmethod
    def load(cls, directory, stem="head"):
        arrays, meta = _load_params(directory, stem)
        if meta.get("kind") != "head":
            raise FormatError(f"checkpoint {stem} is kind {meta.get('kind')!r}, expected 'head'")
        head = cls(int(meta["in_dim"]), int(meta["n_classes"]), seed=int(meta["seed"]))
        _restore(head.params(), arrays, stem)
        return head


def classify(feature: Tensor, head: ClassifyHead) -> Tensor:
    """Probability vector for a single feature vector."""
    if feature.data.ndim != 1:
        raise DimensionError(f"classify: need a 1-d feature, got shape {feature.shape}")
    return nc.row(head.probabilities(nc.reshape(feature, (1, -1))), 0)


# ---------------------------------------------------------------------------
# checkpoint container: one flat MXT1 tensor + JSON index of name -> slice


def _save_params(directory, stem, params: dict, meta: dict):
    os.makedirs(directory, exist_ok=True)
    index = {}
    chunks = []
    offset = 0
    for name in sorted(params):
        flat = params[name].data.ravel()
        index[name] = {"offset": offset, "shape": list(params[name].shape)}
        offset += flat.size
        chunks.append(flat)
    blob = np.concatenate(chunks) if chunks else np.zeros(0, np.float32)
    nc.save_mxt(os.path.join(directory, f"{stem}.mxt"), blob)
    with open(os.path.join(directory, f"{stem}.json"), "w") as fh:
        json.dump({"meta": meta, "params": index}, fh, indent=1, sort_keys=True)


def _load_params(directory, stem):
    json_path = os.path.join(directory, f"{stem}.json")
    if not os.path.exists(json_path):
        raise FormatError(f"missing checkpoint index {json_path}")
    with open(json_path) as fh:
        doc = json.load(fh)
    blob = nc.load_mxt(os.path.join(directory, f"{stem}.mxt"))
    arrays = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        if start + size > blob.size:
            raise FormatError(f"checkpoint {stem}: parameter {name} overruns the tensor block")
        arrays[name] = blob[start : start + size].reshape(shape)
    return arrays, doc["meta"]


def _restore(params: dict, arrays: dict, stem):
    if set(params) != set(arrays):
        missing = set(params) ^ set(arrays)
        raise FormatError(f"checkpoint {stem}: parameter names do not match ({sorted(missing)[:4]}...)")
    for name, tensor in params.items():
        arr = arrays[name]
        if arr.shape != tensor.shape:
            raise FormatError(
                f"checkpoint {stem}: {name} has shape {arr.shape}, expected {tensor.shape}"
            )
        tensor.data = arr.astype(np.float32)

"""Training protocol and experiment harnesses.

Joint optimization of the video and attribute branches under the weighted
objective, subject-disjoint splitting, video-only evaluation, repeated
runs reported as mean plus/minus standard deviation, and the alpha/depth
sweep and ablation drivers.

Everything here is deterministic given config plus seed: batch order,
negative sampling, splits, and parameter updates all derive from seeded
generators keyed by (seed, purpose, epoch), never from iteration order of
unordered containers.
"""

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import facs
from . import losses
from . import numcore as nc
from .encoders import AttributeEncoder, ClassifyHead, ResNet3DConfig, VideoEncoder
from .errors import ConfigError, ContractError, NumericAbort, NumericError
from .flowprep import ClipPair, FrameSequence, clip_to_pair, load_frame_source, resample_time
from .numcore import Tensor, load_mxt

TRAIN_FRACTION = 0.6  # 3:2 train:test split by subject
EVAL_CHUNK = 8  # bounds evaluation memory; predictions are per-sample either way
MAX_TOKENS = 12  # longest two-unit phrase is 7 words; headroom for longer sets

# Full-scale reference accuracies for the ablation arms (not reproducible
# on desk-scale synthetic data; carried as context in ablate's footer).
REFERENCE_FULL_SCALE = {"L_theta": 66.74, "L": 77.82}

_DEPTHS = (10, 18, 34)
_NEGATIVE_MODES = ("different_class", "different_sample")
_LOSS_MODES = ("full", "l_theta")


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale defaults; full_scale() restores the full-size protocol."""

    depth: int = 10
    alpha: float = 0.5
    k: int = 4
    lr: float = 1e-4
    epochs: int = 30
    batch_size: int = 8
    n_repeats: int = 5
    seed: int = 0
    negative_mode: str = "different_class"
    loss_mode: str = "full"

    def __post_init__(self):
        if self.depth not in _DEPTHS:
            raise ConfigError(f"depth must be one of {_DEPTHS}, got {self.depth}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in [0,1], got {self.alpha}")
        if self.k < 0:
            raise ConfigError(f"k must be >= 0, got {self.k}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_repeats < 1:
            raise ConfigError(f"n_repeats must be >= 1, got {self.n_repeats}")
        if self.negative_mode not in _NEGATIVE_MODES:
            raise ConfigError(f"negative_mode must be one of {_NEGATIVE_MODES}, got {self.negative_mode!r}")
        if self.loss_mode not in _LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {_LOSS_MODES}, got {self.loss_mode!r}")

    @classmethod
    def full_scale(cls, **overrides):
        """Preset matching the full-scale reference runs: 200 epochs, batch 32."""
        merged = {"epochs": 200, "batch_size": 32}
        merged.update(overrides)
        return cls(**merged)


@dataclass
class RunReport:
    """Loss curves and accuracies of one training run."""

    config: dict
    seed: int
    l_theta: list = field(default_factory=list)
    l_phi: list = field(default_factory=list)
    l_contrast: list = field(default_factory=list)
    l_total: list = field(default_factory=list)
    epochs: int = 0
    steps: int = 0
    train_accuracy: float = 0.0
    test_accuracy: float = 0.0

    def __post_init__(self):
        for name in ("train_accuracy", "test_accuracy"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ContractError(f"RunReport: {name} must be in [0,1], got {v}")

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass(frozen=True)
class TrainSample:
    pair: ClipPair
    tokens: np.ndarray
    class_id: int
    subject_id: int
    sample_id: int


def build_vocabulary():
    return facs.Vocabulary()


def tokens_for_au_string(au_string, vocab):
    phrase = facs.describe(facs.parse_au_string(au_string))
    return np.asarray(facs.tokenize(phrase, vocab, MAX_TOKENS), dtype=np.int64)


def load_samples(data_dir, frames=16):
    """TrainSamples from a dataset directory.

    A prepped manifest (rows carry flow_path) loads both streams straight
    from disk; a raw manifest computes flow on the fly.
    """
    rows = _read_manifest(os.path.join(data_dir, "manifest.jsonl"))
    vocab = build_vocabulary()
    out = []
    for row in rows:
        tokens = tokens_for_au_string(row["au"], vocab)
        if "flow_path" in row:
            rgb = load_mxt(os.path.join(data_dir, row["rgb_path"]))
            flow = load_mxt(os.path.join(data_dir, row["flow_path"]))
            pair = ClipPair(rgb=Tensor(rgb), flow=Tensor(flow))
        else:
            seq = load_frame_source(os.path.join(data_dir, row["rgb_path"]))
            seq = resample_time(seq, row.get("frames", frames))
            pair = clip_to_pair(seq)
        pair = dataclasses.replace(
            pair,
            sample_id=row["sample_id"],
            subject_id=row["subject_id"],
            class_id=row["class_id"],
            au_string=row["au"],
        )
        out.append(
            TrainSample(
                pair=pair,
                tokens=tokens,
                class_id=row["class_id"],
                subject_id=row["subject_id"],
                sample_id=row["sample_id"],
            )
        )
    return out


def _read_manifest(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def split_by_subject(samples, seed, train_fraction=TRAIN_FRACTION):
    """Partition sample ids so no subject crosses sides.

    Subject count is rounded half-up toward train and clamped so both
    sides are nonempty.
    """
    subjects = sorted({s.subject_id for s in samples})
    if len(subjects) < 5:
        raise ConfigError(f"split_by_subject: needs >= 5 subjects, got {len(subjects)}")
    rng = np.random.default_rng([seed, 3])
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    n_train = int(math.floor(len(subjects) * train_fraction + 0.5))
    n_train = min(max(n_train, 1), len(subjects) - 1)
    train_subjects = set(order[:n_train])
    train_ids = [s.sample_id for s in samples if s.subject_id in train_subjects]
    test_ids = [s.sample_id for s in samples if s.subject_id not in train_subjects]
    return train_ids, test_ids


class _Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data = p.data - (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def _class_round_robin(samples, rng):
    """Per-epoch sample order cycling through classes, so every batch
    carries several classes and in-batch negatives exist."""
    queues = {}
    for i, s in enumerate(samples):
        queues.setdefault(s.class_id, []).append(i)
    class_ids = sorted(queues)
    for c in class_ids:
        idx = queues[c]
        queues[c] = [idx[j] for j in rng.permutation(len(idx))]
    class_order = [class_ids[j] for j in rng.permutation(len(class_ids))]
    out = []
    while any(queues.values()):
        for c in class_order:
            if queues[c]:
                out.append(queues[c].pop())
    return out


def _pair_batch(z_m, z_a, batch, config, rng):
    """In-batch positives with k attribute negatives per anchor.

    k is capped at the smallest candidate pool in the batch, since the
    anchors must share one k.
    """
    candidates = []
    for i, s in enumerate(batch):
        if config.negative_mode == "different_class":
            cand = [j for j, o in enumerate(batch) if o.class_id != s.class_id]
        else:
            cand = [j for j in range(len(batch)) if j != i]
        candidates.append(cand)
    k_eff = min([config.k] + [len(c) for c in candidates])
    positives = []
    negatives = []
    for i, s in enumerate(batch):
        positives.append((nc.row(z_m, i), nc.row(z_a, i), s.sample_id))
        if k_eff == 0:
            negatives.append(())
            continue
        picked = rng.choice(len(candidates[i]), size=k_eff, replace=False)
        negatives.append(
            tuple((nc.row(z_a, candidates[i][j]), batch[candidates[i][j]].sample_id) for j in picked)
        )
    return losses.PairBatch(positives=tuple(positives), negatives=tuple(negatives))


def _stack_batch(batch):
    rgb = Tensor(np.stack([s.pair.rgb.data for s in batch]))
    flow = Tensor(np.stack([s.pair.flow.data for s in batch]))
    tokens = np.stack([s.tokens for s in batch])
    labels = np.array([s.class_id for s in batch])
    return rgb, flow, tokens, labels


def _infer_n_classes(samples):
    ids = sorted({s.class_id for s in samples})
    if ids != list(range(len(ids))):
        raise ContractError(f"class ids must be contiguous from 0, got {ids}")
    if len(ids) < 2:
        raise ContractError("training needs at least 2 classes")
    return len(ids)


def train(config: ExperimentConfig, samples, n_classes=None):
    """Optimize both branches; returns ({models}, RunReport).

    loss_mode 'full' trains video CE + attribute CE + weighted contrast;
    'l_theta' trains the video classifier alone (the ablation baseline).
    A non-finite value anywhere in a step aborts with the step index and
    the last finite loss components.
    """
    if not samples:
        raise ContractError("train: empty sample list")
    if n_classes is None:
        n_classes = _infer_n_classes(samples)
    vocab = build_vocabulary()
    video = VideoEncoder(ResNet3DConfig(depth=config.depth), seed=config.seed)
    attr = AttributeEncoder(len(vocab), seed=config.seed + 1)
    head_video = ClassifyHead(2 * video.config.embed_dim, n_classes, seed=config.seed + 2)
    head_attr = ClassifyHead(attr.out_dim, n_classes, seed=config.seed + 3)
    params = {}
    params.update({f"video.{k}": v for k, v in video.params().items()})
    if config.loss_mode == "full":
        params.update({f"attr.{k}": v for k, v in attr.params().items()})
        params.update({f"head_attr.{k}": v for k, v in head_attr.params("head").items()})
    params.update({f"head_video.{k}": v for k, v in head_video.params("head").items()})
    opt = _Adam(params, lr=config.lr)
    weights = losses.LossWeights(alpha=config.alpha)
    report = RunReport(config=dataclasses.asdict(config), seed=config.seed)
    step = 0
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, 2, epoch])
        order = _class_round_robin(samples, rng)
        sums = {"l_theta": 0.0, "l_phi": 0.0, "l_contrast": 0.0, "l_total": 0.0}
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            for p in params.values():
                p.grad = None
            components = {}
            try:
                with nc.Tape() as tape:
                    rgb, flow, tokens, labels = _stack_batch(batch)
                    z_m = video.encode_batch(rgb, flow, training=True)
                    l_theta = losses.cross_entropy_batch(head_video.probabilities(z_m), labels)
                    components["l_theta"] = float(l_theta.data)
                    if config.loss_mode == "l_theta":
                        l_phi_val = 0.0
                        l_con_val = 0.0
                        total = l_theta
                    else:
                        z_a = attr.encode_batch(tokens)
                        l_phi = losses.cross_entropy_batch(head_attr.probabilities(z_a), labels)
                        components["l_phi"] = l_phi_val = float(l_phi.data)
                        l_con = losses.contrastive_loss(_pair_batch(z_m, z_a, batch, config, rng))
                        components["l_contrast"] = l_con_val = float(l_con.data)
                        total = losses.total_loss(l_theta, l_phi, l_con, weights)
                    components["l_total"] = float(total.data)
                    nc.backward(total, tape)
                opt.step()
            except NumericError as err:
                raise NumericAbort(
                    f"non-finite value during training: {err}", step=step, components=components
                ) from err
            sums["l_theta"] += components["l_theta"]
            sums["l_phi"] += l_phi_val
            sums["l_contrast"] += l_con_val
            sums["l_total"] += components["l_total"]
            n_batches += 1
            step += 1
        report.l_theta.append(sums["l_theta"] / n_batches)
        report.l_phi.append(sums["l_phi"] / n_batches)
        report.l_contrast.append(sums["l_contrast"] / n_batches)
        report.l_total.append(sums["l_total"] / n_batches)
    report.epochs = config.epochs
    report.steps = step
    bundle = {
        "video": video,
        "attr": attr,
        "head_video": head_video,
        "head_attr": head_attr,
        "n_classes": n_classes,
    }
    report.train_accuracy = evaluate(video, head_video, samples)
    return bundle, report


def evaluate(video: VideoEncoder, head: ClassifyHead, samples):
    """Video-only accuracy: argmax over head(encode(rgb, flow)).

    The attribute branch is never consulted. Inference-mode encoding
    normalizes with running statistics, so each sample's prediction is
    independent of the others; chunking only bounds memory.
    """
    if not samples:
        raise ContractError("evaluate: empty sample list")
    correct = 0
    for start in range(0, len(samples), EVAL_CHUNK):
        chunk = samples[start : start + EVAL_CHUNK]
        rgb, flow, _, labels = _stack_batch(chunk)
        probs = head.probabilities(video.encode_batch(rgb, flow))
        correct += int((np.argmax(probs.data, axis=1) == labels).sum())
    return correct / len(samples)


def save_bundle(bundle, directory):
    bundle["video"].save(directory, "video")
    bundle["attr"].save(directory, "attr")
    bundle["head_video"].save(directory, "head_video")
    bundle["head_attr"].save(directory, "head_attr")


def load_eval_bundle(directory):
    """Only what inference needs: the video encoder and its head."""
    video = VideoEncoder.load(directory, "video")
    head = ClassifyHead.load(directory, "head_video")
    return video, head


def _by_id(samples):
    return {s.sample_id: s for s in samples}


def run_once(config, samples, seed):
    """One split + train + test evaluation at the given seed."""
    cfg = dataclasses.replace(config, seed=seed)
    train_ids, test_ids = split_by_subject(samples, seed)
    index = _by_id(samples)
    train_set = [index[i] for i in train_ids]
    test_set = [index[i] for i in test_ids]
    n_classes = _infer_n_classes(samples)
    bundle, report = train(cfg, train_set, n_classes=n_classes)
    report.test_accuracy = evaluate(bundle["video"], bundle["head_video"], test_set)
    return bundle, report, (train_ids, test_ids)


def run_repeated(config, samples, n=None, seeds=None):
    """n runs differing only in seed; sample standard deviation.

    Explicit seeds override the default seed, seed+1, ... sequence (forcing
    equal seeds is how the zero-variance contract is exercised).
    """
    if n is None:
        n = config.n_repeats
    if n < 2:
        raise ContractError(f"run_repeated: needs n >= 2, got {n}")
    if seeds is None:
        seeds = [config.seed + i for i in range(n)]
    if len(seeds) != n:
        raise ContractError(f"run_repeated: {n} runs but {len(seeds)} seeds")
    accuracies = []
    reports = []
    test_id_sets = []
    for seed in seeds:
        _, report, (_, test_ids) = run_once(config, samples, seed)
        accuracies.append(report.test_accuracy)
        reports.append(report)
        test_id_sets.append(sorted(test_ids))
    mean = float(np.mean(accuracies))
    std = float(np.std(accuracies, ddof=1))
    return {
        "mean": mean,
        "std": std,
        "accuracies": accuracies,
        "seeds": list(seeds),
        "test_ids": test_id_sets,
        "summary": format_mean_std(mean, std),
        "reports": reports,
    }


def format_mean_std(mean, std):
    """Percentage form, e.g. accuracy 0.7782 +/- 0.0365 -> '77.82±3.65'."""
    return f"{mean * 100.0:.2f}±{std * 100.0:.2f}"


def sweep_alpha(config, samples, alphas):
    """CSV rows (alpha, mean, std), alpha strictly increasing."""
    if not alphas:
        raise ConfigError("sweep_alpha: empty alpha list")
    for a in alphas:
        if not (0.0 <= a <= 1.0):
            raise ConfigError(f"sweep_alpha: alpha {a} outside [0,1]")
    lines = ["alpha,mean,std"]
    for a in sorted(set(alphas)):
        result = run_repeated(dataclasses.replace(config, alpha=a), samples)
        lines.append(f"{a:g},{result['mean']:.6f},{result['std']:.6f}")
    return "\n".join(lines) + "\n"


def sweep_depth(config, samples, depths=_DEPTHS, modes=("baseline", "full")):
    """CSV rows over depth x mode; baseline drops the attribute branch."""
    for d in depths:
        if d not in _DEPTHS:
            raise ConfigError(f"sweep_depth: depth {d} not in {_DEPTHS}")
    for m in modes:
        if m not in ("baseline", "full"):
            raise ConfigError(f"sweep_depth: unknown mode {m!r}")
    lines = ["depth,mode,alpha,mean,std"]
    for d in depths:
        for m in modes:
            if m == "baseline":
                cfg = dataclasses.replace(config, depth=d, loss_mode="l_theta", alpha=0.0)
            else:
                cfg = dataclasses.replace(config, depth=d, loss_mode="full")
            result = run_repeated(cfg, samples)
            lines.append(f"{d},{m},{cfg.alpha:g},{result['mean']:.6f},{result['std']:.6f}")
    return "\n".join(lines) + "\n"


def ablate(config, samples):
    """Two arms, identical seeds and splits, differing only in the loss.

    Rows are labeled L_theta (video classification only) and L (the full
    objective); the full-scale reference accuracies ride along in the
    footer as context, they are not targets at this scale.
    """
    seeds = [config.seed + i for i in range(config.n_repeats)]
    rows = []
    arm_test_ids = []
    for label, mode in (("L_theta", "l_theta"), ("L", "full")):
        cfg = dataclasses.replace(config, loss_mode=mode)
        result = run_repeated(cfg, samples, seeds=seeds)
        arm_test_ids.append(result["test_ids"])
        rows.append(
            {
                "label": label,
                "mean": result["mean"],
                "std": result["std"],
                "accuracies": result["accuracies"],
                "summary": result["summary"],
                "test_ids": result["test_ids"],
            }
        )
    return {
        "rows": rows,
        "seeds": seeds,
        "splits_identical": arm_test_ids[0] == arm_test_ids[1],
        "reference_full_scale": dict(REFERENCE_FULL_SCALE),
    }

"""Command-line entry point.

One binary with subcommands covering dataset generation, preprocessing,
training, evaluation, the alpha/depth sweeps, ablation, and a built-in
self-verification suite. Exit codes: 0 success, 2 configuration error,
3 numeric abort, 1 any other failure.

Heavy imports happen after thread setup so --threads (or XMODAL_THREADS)
can cap the BLAS pool; nothing numeric is imported at module scope.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

from .errors import ConfigError, NumericError, XModalError

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def _setup_threads(n):
    if n is None:
        env = os.environ.get("XMODAL_THREADS")
        if env is None:
            return
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"XMODAL_THREADS must be an integer, got {env!r}")
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _section_keys(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _load_config_file(path):
    """Sectioned JSON config; any unknown key is named and rejected."""
    from .flowprep import FarnebackParams
    from .synthdata import SynthSpec
    from .trainer import ExperimentConfig

    sections = {
        "experiment": _section_keys(ExperimentConfig),
        "synth": _section_keys(SynthSpec),
        "farneback": _section_keys(FarnebackParams),
    }
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    for key, sub in doc.items():
        if key not in sections:
            raise ConfigError(f"unknown config key: {key}")
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {key} must be a JSON object")
        for name in sub:
            if name not in sections[key]:
                raise ConfigError(f"unknown config key: {key}.{name}")
    return doc


def _merge(section, flag_values):
    """File values first, then any flag the user actually passed."""
    merged = dict(section)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def _config_sections(args):
    return _load_config_file(args.config) if getattr(args, "config", None) else {}


def _experiment_config(args):
    from .trainer import ExperimentConfig

    doc = _config_sections(args)
    flags = {
        "depth": getattr(args, "depth", None),
        "alpha": getattr(args, "alpha", None),
        "k": getattr(args, "k", None),
        "lr": getattr(args, "lr", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "n_repeats": getattr(args, "n_repeats", None),
        "seed": getattr(args, "seed", None),
        "negative_mode": getattr(args, "negative_mode", None),
    }
    return ExperimentConfig(**_merge(doc.get("experiment", {}), flags))


def _farneback_params(args):
    from .flowprep import FarnebackParams

    doc = _config_sections(args)
    return FarnebackParams(**doc.get("farneback", {}))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args):
    from .synthdata import SynthSpec, generate

    doc = _config_sections(args)
    flags = {
        "n_classes": args.classes,
        "samples_per_class": args.per_class,
        "n_subjects": args.subjects,
        "frames": args.frames,
        "size": args.size,
        "motion_amplitude": args.amplitude,
        "noise_sigma": args.noise_sigma,
        "seed": args.seed,
    }
    spec = SynthSpec(**_merge(doc.get("synth", {}), flags))
    rows = generate(spec, args.out)
    print(f"wrote {len(rows)} samples to {args.out}")
    return 0


def _cmd_prep(args):
    from .flowprep import clip_to_pair, load_frame_source, resample_time
    from .numcore import save_mxt
    from .synthdata import read_manifest

    params = _farneback_params(args)
    rows = read_manifest(os.path.join(args.in_dir, "manifest.jsonl"))
    pairs_dir = os.path.join(args.out, "pairs")
    os.makedirs(pairs_dir, exist_ok=True)
    kept = []
    skipped = 0
    for row in rows:
        try:
            seq = load_frame_source(os.path.join(args.in_dir, row["rgb_path"]))
            seq = resample_time(seq, args.frames)
            pair = clip_to_pair(seq, params)
        except (XModalError, OSError) as err:
            if args.strict:
                raise
            skipped += 1
            print(f"skipping sample {row['sample_id']}: {err}", file=sys.stderr)
            continue
        rgb_rel = os.path.join("pairs", f"sample_{row['sample_id']:05d}_rgb.mxt")
        flow_rel = os.path.join("pairs", f"sample_{row['sample_id']:05d}_flow.mxt")
        save_mxt(os.path.join(args.out, rgb_rel), pair.rgb.data)
        save_mxt(os.path.join(args.out, flow_rel), pair.flow.data)
        new_row = dict(row)
        new_row["rgb_path"] = rgb_rel
        new_row["flow_path"] = flow_rel
        new_row["frames"] = args.frames
        kept.append(new_row)
    with open(os.path.join(args.out, "manifest.jsonl"), "w") as fh:
        for row in kept:
            fh.write(json.dumps(row) + "\n")
    print(f"prepared {len(kept)} clip pairs in {args.out}" + (f" ({skipped} skipped)" if skipped else ""))
    return 0


def _cmd_train(args):
    from . import trainer

    config = _experiment_config(args)
    samples = trainer.load_samples(args.data)
    bundle, report, (train_ids, test_ids) = trainer.run_once(config, samples, config.seed)
    os.makedirs(args.out, exist_ok=True)
    trainer.save_bundle(bundle, args.out)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(args.out, "split.json"), "w") as fh:
        json.dump(
            {"seed": config.seed, "train_ids": sorted(train_ids), "test_ids": sorted(test_ids)},
            fh,
            indent=1,
        )
    print(
        f"train_accuracy={report.train_accuracy:.4f} test_accuracy={report.test_accuracy:.4f} "
        f"epochs={report.epochs} steps={report.steps} -> {args.out}"
    )
    return 0


def _cmd_eval(args):
    from . import trainer

    video, head = trainer.load_eval_bundle(args.run)
    samples = trainer.load_samples(args.data)
    if args.split == "all":
        subset = samples
    else:
        with open(os.path.join(args.run, "split.json")) as fh:
            split = json.load(fh)
        wanted = set(split[f"{args.split}_ids"])
        subset = [s for s in samples if s.sample_id in wanted]
    acc = trainer.evaluate(video, head, subset)
    print(json.dumps({"split": args.split, "n": len(subset), "accuracy": acc}))
    return 0


def _cmd_sweep_alpha(args):
    from . import trainer

    config = _experiment_config(args)
    alphas = [float(tok) for tok in args.alphas.split(",") if tok.strip()]
    samples = trainer.load_samples(args.data)
    csv_text = trainer.sweep_alpha(config, samples, alphas)
    _write_text(args.out, csv_text)
    return 0


def _cmd_sweep_depth(args):
    from . import trainer

    config = _experiment_config(args)
    depths = [int(tok) for tok in args.depths.split(",") if tok.strip()]
    modes = [tok.strip() for tok in args.modes.split(",") if tok.strip()]
    samples = trainer.load_samples(args.data)
    csv_text = trainer.sweep_depth(config, samples, depths=depths, modes=modes)
    _write_text(args.out, csv_text)
    return 0


def _cmd_ablate(args):
    from . import trainer

    config = _experiment_config(args)
    samples = trainer.load_samples(args.data)
    result = trainer.ablate(config, samples)
    text = json.dumps(result, indent=1, sort_keys=True)
    _write_text(args.out, text if text.endswith("\n") else text + "\n")
    for row in result["rows"]:
        print(f"{row['label']}: {row['summary']}", file=sys.stderr)
    return 0


def _write_text(path, text):
    if path:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
        print(f"wrote {path}", file=sys.stderr)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# selftest


def _fd_max_rel(make_loss, arrays, probes=6, step=1e-5, seed=0):
    """Worst relative error between backward and central differences."""
    import numpy as np

    from . import numcore as nc

    rng = np.random.default_rng(seed)
    tensors = [nc.Tensor(np.array(a, np.float64), requires_grad=True) for a in arrays]
    with nc.Tape() as tape:
        nc.backward(make_loss(tensors), tape)
    worst = 0.0
    for wi, arr in enumerate(arrays):
        size = int(np.prod(np.shape(arr)))
        for flat in rng.permutation(size)[: min(probes, size)]:
            coord = np.unravel_index(flat, np.shape(arr))
            vals = []
            for sgn in (1.0, -1.0):
                copies = [np.array(a, np.float64) for a in arrays]
                copies[wi][coord] += sgn * step
                vals.append(float(make_loss([nc.Tensor(c) for c in copies]).data.reshape(())))
            want = (vals[0] - vals[1]) / (2 * step)
            got = float(tensors[wi].grad[coord])
            scale = max(abs(want), abs(got))
            if scale >= 1e-6:
                worst = max(worst, abs(want - got) / scale)
    return worst


def _selftest_checks(inject_fault):
    import numpy as np

    from . import losses
    from . import numcore as nc
    from .encoders import ResNet3DConfig, build_resnet3d
    from .flowprep import farneback_flow
    from .numcore import Tensor

    rng = np.random.default_rng(0)
    checks = []

    def add(name, ok, detail):
        checks.append((name, bool(ok), detail))

    def sq_mean(y):
        return nc.mean_all(nc.mul(y, y))

    # gradient checks on the core differentiable ops
    x = rng.uniform(-1, 1, (1, 2, 4, 6, 6))
    w = rng.uniform(-1, 1, (3, 2, 2, 3, 3))
    rel = _fd_max_rel(lambda ts: sq_mean(nc.conv3d(ts[0], ts[1], (1, 2, 2), (0, 1, 1))), [x, w])
    add("grads_conv3d", rel < 1e-3, f"max rel err {rel:.2e}")

    a = rng.uniform(-1, 1, (4, 5))
    wt = rng.uniform(-1, 1, (5, 3))
    b = rng.uniform(-1, 1, 3)
    rel = _fd_max_rel(lambda ts: sq_mean(nc.linear(ts[0], ts[1], ts[2])), [a, wt, b])
    add("grads_linear", rel < 1e-3, f"max rel err {rel:.2e}")

    xb = rng.uniform(-1, 1, (6, 4))
    gm = rng.uniform(0.5, 1.5, 4)
    bt = rng.uniform(-0.5, 0.5, 4)
    rel = _fd_max_rel(lambda ts: sq_mean(nc.batchnorm(ts[0], ts[1], ts[2], channel_axis=-1)), [xb, gm, bt])
    add("grads_batchnorm", rel < 1e-3, f"max rel err {rel:.2e}")

    logits = rng.uniform(-2, 2, (5, 4))
    labels = np.array([0, 3, 1, 2, 2])
    rel = _fd_max_rel(lambda ts: losses.cross_entropy_batch(nc.softmax(ts[0]), labels), [logits])
    add("grads_softmax_ce", rel < 1e-4, f"max rel err {rel:.2e}")

    va = rng.uniform(-1, 1, 8)
    vb = rng.uniform(-1, 1, 8)
    rel = _fd_max_rel(lambda ts: nc.cosine_similarity(ts[0], ts[1]), [va, vb])
    add("grads_cosine", rel < 1e-3, f"max rel err {rel:.2e}")

    feats = [rng.uniform(-1, 1, 6) for _ in range(6)]

    def contrastive(ts):
        positives = tuple((ts[i], ts[i + 1], i) for i in (0, 2))
        negatives = tuple(((ts[4], 90), (ts[5], 91)) for _ in positives)
        return losses.contrastive_loss(losses.PairBatch(positives=positives, negatives=negatives))

    rel = _fd_max_rel(contrastive, feats)
    add("grads_contrastive", rel < 1e-4, f"max rel err {rel:.2e}")

    # loss identities
    z = Tensor(rng.uniform(-1, 1, 16))
    same = float(losses.pair_distance(z, z).data)
    anti = float(losses.pair_distance(z, nc.scale(z, -1.0)).data)
    ok = abs(same - np.e) < 1e-6 and abs(anti - 1.0 / np.e) < 1e-6
    details = [f"d(z,z)={same:.6f}"]
    for k in (0, 1, 2, 3, 7):
        anchor = Tensor(np.ones(4, np.float32))
        positives = ((anchor, anchor, 0),)
        negatives = (tuple((anchor, j + 1) for j in range(k)),)
        got = float(losses.contrastive_loss(losses.PairBatch(positives, negatives)).data)
        want = float(np.log(k + 1.0))
        ok = ok and abs(got - want) < 1e-6
    three = [losses.total_loss(0.7, 0.9, 0.3, losses.LossWeights(alpha=a)) for a in (0.0, 0.5, 1.0)]
    ok = ok and abs(three[0] - 1.6) < 1e-7 and abs(three[1] - 0.95) < 1e-7 and abs(three[2] - 0.3) < 1e-7
    add("loss_identities", ok, "; ".join(details))

    # stage-table probes
    table = {
        "conv1": (64, 8, 56, 56),
        "conv2_x": (64, 8, 56, 56),
        "conv3_x": (128, 4, 28, 28),
        "conv4_x": (256, 2, 14, 14),
        "conv5_x": (512, 1, 7, 7),
    }
    for depth in (10, 18, 34):
        stream = build_resnet3d(ResNet3DConfig(depth=depth), in_channels=3, seed=0)
        if inject_fault == "conv_stride":
            stream.stem.stride = (1, 2, 2)  # fault-injection hook for selftest testing
        probes = {}
        stream.forward(Tensor(np.zeros((1, 16, 112, 112, 3), np.float32)), probes)
        bad = [k for k, want in table.items() if probes.get(k) != want]
        add(
            f"table1_depth{depth}",
            not bad,
            "all stages match" if not bad else f"mismatch at {', '.join(bad)}",
        )

    # flow oracle: known blob shifts and the static case
    yy, xx = np.mgrid[0:64, 0:64]
    blob = np.exp(-(((yy - 32) ** 2 + (xx - 32) ** 2) / 60.0)).astype(np.float32)
    worst_err = 0.0
    for dy, dx in ((3, 0), (0, -2)):
        moved = np.exp(-(((yy - 32 - dy) ** 2 + (xx - 32 - dx) ** 2) / 60.0)).astype(np.float32)
        flow = farneback_flow(Tensor(blob), Tensor(moved)).data
        region = blob > 0.5 * blob.max()
        err = max(abs(float(flow[1][region].mean()) - dy), abs(float(flow[0][region].mean()) - dx))
        worst_err = max(worst_err, err)
    add("flow_blob_shift", worst_err < 0.2, f"worst mean-flow error {worst_err:.3f} px")
    static = farneback_flow(Tensor(blob), Tensor(blob)).data
    peak = float(np.abs(static).max())
    add("flow_static", peak < 1e-3, f"max |flow| {peak:.2e} px")
    return checks


def _cmd_selftest(args):
    start = time.time()
    checks = _selftest_checks(args.inject_fault)
    failed = []
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
        if not ok:
            failed.append(name)
    elapsed = time.time() - start
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed in {elapsed:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_experiment_flags(p):
    p.add_argument("--depth", type=int, choices=(10, 18, 34))
    p.add_argument("--alpha", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--n-repeats", dest="n_repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--negative-mode", dest="negative_mode", choices=("different_class", "different_sample"))
    p.add_argument("--config", help="JSON config file; flags override its values")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="xmodal",
        description="Micro-expression recognition toolkit: dual-stream video encoders "
        "with attribute-text contrastive training, at desk scale.",
    )
    parser.add_argument("--threads", type=int, help="cap BLAS worker threads (or set XMODAL_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--subjects", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("prep", help="compute rgb+flow clip pairs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--strict", action="store_true", help="fail on corrupt inputs instead of skipping")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_prep)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_experiment_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved run (video branch only)")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep-alpha", help="accuracy curve over weighting factors")
    p.add_argument("--data", required=True)
    p.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--out")
    _add_experiment_flags(p)
    p.set_defaults(func=_cmd_sweep_alpha)

    p = sub.add_parser("sweep-depth", help="accuracy grid over depth and training mode")
    p.add_argument("--data", required=True)
    p.add_argument("--depths", default="10,18,34")
    p.add_argument("--modes", default="baseline,full")
    p.add_argument("--out")
    _add_experiment_flags(p)
    p.set_defaults(func=_cmd_sweep_depth)

    p = sub.add_parser("ablate", help="video-loss-only arm vs the full objective")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    _add_experiment_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("selftest", help="gradient checks, loss identities, shape probes, flow oracle")
    p.add_argument("--inject-fault", dest="inject_fault", choices=("conv_stride",), help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_threads(args.threads)
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return 3
    except XModalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: data generation, codec fitting, training,
sampling in the seven modes, evaluation, labeling, refinement, keyframing.

Exit codes: 0 success, 2 usage error, 1 runtime error. All randomness flows
from --seed through named substreams. TRIDIFF_NUM_WORKERS caps torch thread
parallelism.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfg
from .body import build_body_model
from .codec import ContactTextCodec, fit_codec, generate_label, load_codec, save_codec
from .container import read_container, write_container
from .data import generate_dataset, load_dataset, save_dataset
from .denoiser import Denoiser, load_denoiser, save_denoiser
from .diffusion import MODE_STRINGS, make_schedule, parse_mode, sample
from .geometry import (
    HumanParams,
    ObjectParams,
    Pose6DoF,
    interpolate_keyframes,
    parts_in_contact,
    place_object,
)
from .metrics import (
    MetricReport,
    cov,
    diversity,
    human_features,
    mmd,
    multimodality,
    object_features,
    one_nna,
    penetration_report,
)
from .objects import class_by_name, default_class_table, make_object_spec
from .refinement import RefineConfig, refine
from .training import Trainer


class UsageError(Exception):
    pass


def substream(seed: int, name: str) -> int:
    """Stable named substream of the run seed."""
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _load_object_spec(arg: str):
    path = Path(arg)
    if path.exists():
        manifest, arrays = read_container(path)
        if manifest.get("kind") != "object_spec":
            raise UsageError(f"{arg} is not an object spec container")
        from .objects import ObjectSpec

        return ObjectSpec(
            class_id=int(manifest["class_id"]), name=manifest["name"],
            points=arrays["points"].astype(np.float64),
            mirror_perm=arrays["mirror_perm"].astype(np.int64),
            f_o=arrays["f_o"].astype(np.float64),
            one_hot=arrays["one_hot"].astype(np.float64))
    try:
        rule = class_by_name(default_class_table(), arg)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    return make_object_spec(rule)


def save_object_spec(spec, path) -> None:
    write_container(path, manifest={
        "kind": "object_spec", "class_id": spec.class_id, "name": spec.name,
    }, arrays={
        "points": spec.points, "mirror_perm": spec.mirror_perm.astype(np.float32),
        "f_o": spec.f_o, "one_hot": spec.one_hot,
    })


def _load_condition(path: str, modality: str, index: int, codec=None) -> np.ndarray:
    manifest, arrays = read_container(path)
    kind = manifest.get("kind")
    if kind == "samples":
        key = {"h": "h", "o": "o", "i": "i"}[modality]
        if key not in arrays:
            raise UsageError(f"{path} has no {modality!r} channel")
        return arrays[key][index]
    if kind == "dataset":
        if modality == "h":
            return np.concatenate([
                arrays["theta"][index].reshape(-1), arrays["beta"][index],
                arrays["g_h"][index]])
        if modality == "o":
            return arrays["g_o"][index]
        if "z" in arrays:
            return arrays["z"][index]
        if codec is None:
            raise UsageError(
                "interaction condition from a dataset without stored latents "
                "requires --codec")
        return codec.encode_contact(arrays["contact"][index]).astype(np.float32)
    raise UsageError(f"{path} holds {kind!r}, expected samples or dataset")


def _save_samples(path, out: dict, manifest_extra: dict) -> None:
    manifest = {"kind": "samples"}
    manifest.update(manifest_extra)
    arrays = {
        "h": np.atleast_2d(out["h"]), "o": np.atleast_2d(out["o"]),
        "i": np.atleast_2d(out["i"]),
    }
    write_container(path, manifest=manifest, arrays=arrays)


def _cmd_gen_data(args) -> int:
    ds = generate_dataset(args.samples, substream(args.seed, "data"))
    save_dataset(ds, args.out)
    print(f"wrote {ds.count} samples to {args.out}")
    return 0


def _cmd_fit_codec(args) -> int:
    profile = cfg.get_profile(args.profile)
    ds = load_dataset(args.data)
    labeled = [k for k, lb in enumerate(ds.labels) if lb]
    labels = [ds.labels[k] for k in labeled]
    contacts = ds.contact[labeled]
    extras = [np.zeros(690, dtype=np.float32)] * args.include_empty
    unlabeled = ds.contact[[k for k, lb in enumerate(ds.labels) if not lb]]
    if len(unlabeled):
        extras.extend(unlabeled)
    torch.manual_seed(substream(args.seed, "codec-init"))
    codec = ContactTextCodec()
    epochs = args.epochs if args.epochs else profile.codec_epochs
    fit_codec(codec, labels, contacts, epochs=epochs,
              seed=substream(args.seed, "codec-fit"),
              extra_contacts=extras if extras else None)
    save_codec(codec, args.out)
    print(f"fitted codec on {len(labels)} labeled pairs; saved to {args.out}")
    return 0


def _cmd_train(args) -> int:
    profile = cfg.get_profile(args.profile)
    ds = load_dataset(args.data)
    codec = load_codec(args.codec)
    model = build_body_model()
    from .objects import spec_library

    specs = spec_library(ds.class_table)
    sched = profile.schedule()
    torch.manual_seed(substream(args.seed, "denoiser-init"))
    net = Denoiser(profile.denoiser_config())
    train_cfg = profile.train_config(seed=substream(args.seed, "train") % 2**31)
    if args.steps:
        train_cfg.total_steps = args.steps
        train_cfg.warmup_steps = min(train_cfg.warmup_steps, args.steps // 10)
    if args.config:
        for key, value in cfg.load_kv(args.config).items():
            if not hasattr(train_cfg, key):
                raise UsageError(f"unknown training config key {key!r}")
            setattr(train_cfg, key, value)
    trainer = Trainer(ds, specs, model, codec, net, sched, train_cfg,
                      log_path=args.log)
    history = trainer.run(progress=lambda s, t, c: print(f"step {s}: loss {t:.4f}"))
    save_denoiser(net, args.out, {
        "profile": profile.name, "T": profile.T,
        "beta_start": profile.beta_start, "beta_end": profile.beta_end,
        "train_steps": len(history)})
    print(f"trained {len(history)} steps; checkpoint at {args.out}")
    return 0


def _cmd_sample(args) -> int:
    try:
        generate = parse_mode(args.mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    profile = cfg.get_profile(args.profile)
    net, manifest = load_denoiser(args.checkpoint)
    sched = make_schedule(
        int(manifest.get("T", profile.T)),
        beta_start=float(manifest.get("beta_start", profile.beta_start)),
        beta_end=float(manifest.get("beta_end", profile.beta_end)))
    spec = _load_object_spec(args.object)
    codec = load_codec(args.codec) if args.codec else None
    model = build_body_model()

    conditions = {}
    sources = {"h": args.human, "o": args.obj_condition, "i": args.interaction}
    names = {"h": "--human", "o": "--object-pose", "i": "--interaction"}
    for m in "hoi":
        if m in generate:
            continue
        if not sources[m]:
            raise UsageError(
                f"mode {args.mode!r} conditions on {m!r}: supply {names[m]}")
        conditions[m] = _load_condition(sources[m], m, args.index, codec)

    guidance = None
    if args.guidance == "on":
        if codec is None:
            raise UsageError("--guidance on requires --codec")
        guidance = profile.guidance_config(lam=args.lam)
    out = sample(generate, object_spec=spec, denoiser=net, sched=sched,
                 conditions=conditions, n=args.samples, guidance=guidance,
                 codec=codec, model=model,
                 rng=substream(args.seed, "sampling") % 2**63)
    _save_samples(args.out, out, {
        "mode": args.mode, "seed": args.seed, "class_id": spec.class_id,
        "class_name": spec.name, "guidance": args.guidance})
    print(f"wrote {args.samples} samples ({args.mode}) to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    profile = cfg.get_profile(args.profile)
    gen_manifest, gen_arrays = read_container(args.samples)
    ref_manifest, ref_arrays = read_container(args.reference)
    model = build_body_model()
    report = MetricReport()
    rng = np.random.default_rng(substream(args.seed, "eval"))

    def features(manifest, arrays, kind):
        if manifest.get("kind") == "samples":
            if kind == "human":
                from .data import realize_human_vertices

                v = realize_human_vertices(
                    model, torch.as_tensor(arrays["h"], dtype=torch.float32))
                return human_features(model, v.numpy())
            return object_features(arrays["o"])
        if kind == "human":
            h = np.concatenate([
                arrays["theta"].reshape(len(arrays["theta"]), -1),
                arrays["beta"], arrays["g_h"]], axis=1)
            from .data import realize_human_vertices

            v = realize_human_vertices(model, torch.as_tensor(h, dtype=torch.float32))
            return human_features(model, v.numpy())
        return object_features(arrays["g_o"])

    subset = min(args.div_subset or profile.div_subset,
                 len(gen_arrays.get("h", gen_arrays.get("theta", []))) // 2)
    for kind in ("human", "object"):
        gen_f = features(gen_manifest, gen_arrays, kind)
        ref_f = features(ref_manifest, ref_arrays, kind)
        n = min(len(gen_f), len(ref_f))
        gen_t = type(gen_f)(gen_f.kind, gen_f.x[:n])
        ref_t = type(ref_f)(ref_f.kind, ref_f.x[:n])
        report.add(f"{kind}_cov", cov(gen_t, ref_t), n)
        report.add(f"{kind}_mmd", mmd(gen_t, ref_t), n)
        report.add(f"{kind}_1nna", one_nna(gen_t, ref_t), n)
        if len(gen_f) >= 2 * subset and subset >= 1:
            divs = [diversity(gen_f, rng, subset) for _ in range(args.runs)]
            report.add(f"{kind}_div", divs, len(gen_f))

    print(report.render_text())
    if args.out:
        cfg.save_kv(args.out, report.to_kv())
        Path(str(args.out) + ".txt").write_text(report.render_text() + "\n")
    return 0


def _cmd_label(args) -> int:
    ds = load_dataset(args.data)
    model = build_body_model()
    lines = []
    for i in range(ds.count):
        parts = parts_in_contact(ds.contact[i], model)
        if parts:
            rng = np.random.default_rng([substream(args.seed, "label"), i])
            lines.append(generate_label(
                parts, ds.class_table[int(ds.class_ids[i])].name, rng))
        else:
            lines.append("")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} labels to {args.out}")
    return 0


def _cmd_refine(args) -> int:
    manifest, arrays = read_container(args.sample)
    if manifest.get("kind") != "samples":
        raise UsageError(f"{args.sample} is not a samples container")
    spec = _load_object_spec(args.object)
    codec = load_codec(args.codec)
    model = build_body_model()
    h_flat = arrays["h"][args.index]
    h = HumanParams.from_flat(h_flat.astype(np.float64))
    o = ObjectParams.from_flat(arrays["o"][args.index].astype(np.float64))
    z = arrays["i"][args.index].astype(np.float64)
    config = RefineConfig() if not args.iterations else RefineConfig(
        stage1=RefineConfig().stage1.__class__(
            **{**RefineConfig().stage1.__dict__, "iterations": args.iterations}),
        stage2=RefineConfig().stage2.__class__(
            **{**RefineConfig().stage2.__dict__, "iterations": args.iterations}))
    refined, trace = refine(h, o, z, spec, model, codec, config)
    out = dict(arrays)
    h_new = arrays["h"].copy()
    h_new[args.index] = refined.flatten().astype(np.float32)
    out["h"] = h_new
    write_container(args.out, manifest=manifest, arrays=out)
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "e_dis", "e_pen", "e_reg", "e_isect", "total"])
            for item in trace:
                writer.writerow([item.stage, item.e_dis, item.e_pen,
                                 item.e_reg, item.e_isect, item.total])
    print(f"refined sample {args.index}; {len(trace)} accepted steps")
    return 0


def _cmd_keyframe(args) -> int:
    manifest, arrays = read_container(args.poses)
    times = arrays["times"].astype(np.float64).reshape(-1)
    poses = [Pose6DoF.from_vector(v) for v in arrays["poses"].astype(np.float64)]
    if args.times:
        queries = np.array([float(v) for v in args.times.split(",")])
    else:
        queries = np.arange(times[0], times[-1] + 1e-9, 1.0 / args.fps)
    out = np.stack([interpolate_keyframes(poses, times, t).as_vector()
                    for t in queries])
    write_container(args.out, manifest={"kind": "poses"},
                    arrays={"times": queries, "poses": out})
    print(f"interpolated {len(queries)} poses to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tridiff",
        description=(
            "Three-modality human/object/interaction generative workflow. "
            f"Sampling modes (generated subset): {', '.join(MODE_STRINGS)}. "
            f"Profiles: {', '.join(sorted(cfg.PROFILES))}."))
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--profile", choices=sorted(cfg.PROFILES), default="desk",
                       help="size bundle: desk or paper")
        return p

    p = common(sub.add_parser("gen-data", help="generate a synthetic dataset"))
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = common(sub.add_parser("fit-codec", help="fit the contact-text codec"))
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=0, help="0 = profile default")
    p.add_argument("--include-empty", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit_codec)

    p = common(sub.add_parser("train", help="train the denoiser"))
    p.add_argument("--data", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--steps", type=int, default=0, help="0 = profile default")
    p.add_argument("--config", help="key=value training config overrides")
    p.add_argument("--log", help="plain-text metrics log path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = common(sub.add_parser(
        "sample", help=f"sample one of the modes {', '.join(MODE_STRINGS)}"))
    p.add_argument("--mode", required=True,
                   help=f"generated subset, one of: {', '.join(MODE_STRINGS)}")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--object", required=True,
                   help="object spec container or built-in class name")
    p.add_argument("--human", help="condition container for the human modality")
    p.add_argument("--object-pose", dest="obj_condition",
                   help="condition container for the object modality")
    p.add_argument("--interaction", help="condition container for the interaction modality")
    p.add_argument("--index", type=int, default=0,
                   help="row to read from condition containers")
    p.add_argument("--codec", help="codec checkpoint (needed for guidance)")
    p.add_argument("--guidance", choices=("on", "off"), default="off")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = common(sub.add_parser("eval", help="metric suite over sample containers"))
    p.add_argument("--samples", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--div-subset", type=int, default=0, help="0 = profile default")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = common(sub.add_parser("label", help="regenerate text labels for a dataset"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_label)

    p = common(sub.add_parser("refine", help="optimization post-processing"))
    p.add_argument("--sample", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--iterations", type=int, default=0, help="0 = spec default")
    p.add_argument("--trace", help="per-iteration energy CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_refine)

    p = common(sub.add_parser("keyframe", help="interpolate pose keyframes"))
    p.add_argument("--poses", required=True, help="container with times + poses")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--times", help="comma-separated query times")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_keyframe)
    return parser


def main(argv=None) -> int:
    workers = os.environ.get("TRIDIFF_NUM_WORKERS")
    if workers:
        torch.set_num_threads(max(1, int(workers)))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``facereenact <command> ...``.

Commands chain as fit -> nmfc -> reenact -> train-init -> finetune -> render
-> metrics; ``synth-data`` writes a self-consistent synthetic corpus to run
them on. Exit status is 0 on success, 2 on a usage error and 1 when the
command itself fails.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("facereenact")

# flags that must be present after the config file is merged in
REQUIRED = {
    "fit": ("model", "landmarks", "out"),
    "nmfc": ("model", "fit", "size", "out"),
    "reenact": ("model", "source_fit", "target_fit", "size", "out"),
    "train-init": ("data", "out"),
    "finetune": ("checkpoint", "data", "out"),
    "render": ("checkpoint", "nmfc", "out"),
    "metrics": ("fake", "real"),
    "synth-data": ("out",),
}


class UsageError(Exception):
    pass


def _load_config(path):
    text = Path(path).read_bytes()
    if str(path).endswith(".json"):
        return json.loads(text)
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    return tomllib.loads(text.decode())


def build_parser():
    p = argparse.ArgumentParser(prog="facereenact", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--config", help="TOML or JSON file with defaults for any flag")
    p.add_argument("--threads", type=int, default=None, help="worker threads for compiled kernels")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command")

    s = sub.add_parser("fit", help="fit the morphable model to a landmark track")
    s.add_argument("--model", help="model file (.fmm)")
    s.add_argument("--landmarks", help="landmark track (JSON)")
    s.add_argument("--out", help="output fit (JSON)")
    s.add_argument("--w-l", type=float, default=1.0)
    s.add_argument("--w-pr", type=float, default=0.05)
    s.add_argument("--w-sm", type=float, default=0.5)
    s.add_argument("--k-id", type=float, default=3.0)
    s.add_argument("--k-exp", type=float, default=3.0)
    s.add_argument("--max-outer", type=int, default=20)

    s = sub.add_parser("nmfc", help="render NMFC conditioning images of a fit")
    s.add_argument("--model")
    s.add_argument("--fit")
    s.add_argument("--size", type=int, help="square image side in pixels")
    s.add_argument("--out", help="output directory")
    s.add_argument("--preview", action="store_true", help="also write 8-bit PNG previews")

    s = sub.add_parser("reenact", help="transfer source expressions and poses onto a target")
    s.add_argument("--model")
    s.add_argument("--source-fit")
    s.add_argument("--target-fit")
    s.add_argument("--size", type=int)
    s.add_argument("--out", help="output directory (fit.json and nmfc/)")
    s.add_argument("--preview", action="store_true")

    for name, text in (("train-init", "multi-person adversarial training"),
                       ("finetune", "convert and fine-tune on one person")):
        s = sub.add_parser(name, help=text)
        if name == "train-init":
            s.add_argument("--data", nargs="+",
                           help="dataset directories, or one directory holding person_* datasets")
        else:
            s.add_argument("--checkpoint", help="multi-person checkpoint")
            s.add_argument("--data", help="dataset directory of the new person")
            s.add_argument("--test-len", type=int, default=0,
                           help="tail frames held out from fine-tuning")
        s.add_argument("--out", help="output checkpoint")
        s.add_argument("--steps", type=int, default=None)
        s.add_argument("--lr", type=float, default=None)
        s.add_argument("--resolution", type=int, default=None)
        s.add_argument("--log", help="CSV loss log")

    s = sub.add_parser("render", help="synthesise frames from NMFC images")
    s.add_argument("--checkpoint")
    s.add_argument("--nmfc", help="directory of .nmfc images")
    s.add_argument("--out", help="output directory (frames/ and masks/)")
    s.add_argument("--reference", help="dataset whose frames give the identity embedding "
                                       "(multi-person checkpoints only)")
    s.add_argument("--background", help="PNG composited behind the predicted mask")

    s = sub.add_parser("metrics", help="pixel distances and mask IoU between two PNG sequences")
    s.add_argument("--fake")
    s.add_argument("--real")
    s.add_argument("--gt-masks")
    s.add_argument("--pred-masks")
    s.add_argument("--out", help="also write the report as JSON")

    s = sub.add_parser("synth-data", help="write a synthetic model and person datasets")
    s.add_argument("--out")
    s.add_argument("--people", type=int, default=2)
    s.add_argument("--frames", type=int, default=30)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--n-id", type=int, default=30)
    s.add_argument("--n-exp", type=int, default=20)
    return p, sub


def _merge_config(args, parser, argv):
    """Config values fill flags not given on the command line."""
    if not args.config:
        return args
    cfg = _load_config(args.config)
    section = dict(cfg.get(args.command, {})) if isinstance(cfg.get(args.command), dict) else {}
    flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    given = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, value in {**flat, **section}.items():
        dest = key.replace("-", "_")
        if dest in given or not hasattr(args, dest):
            continue
        setattr(args, dest, value)
    args.train = cfg.get("train", {})
    return args


def _train_config(args, base=None):
    from .gan import TrainConfig
    cfg = base.to_dict() if base is not None else {}
    cfg.update(getattr(args, "train", {}) or {})
    for key in ("steps", "lr", "resolution"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    cfg["seed"] = args.seed
    return TrainConfig.from_dict(cfg)


def _dataset_dirs(paths):
    out = []
    for p in paths:
        people = sorted(d for d in Path(p).glob("person_*") if d.is_dir())
        out.extend(people if people and not (Path(p) / "frames").is_dir() else [Path(p)])
    return out


# -- commands --------------------------------------------------------------------

def cmd_fit(args):
    from .fitting import BoxConstraints, EnergyWeights, fit_video, reprojection_rmse
    from .io import read_landmarks, write_fit
    from .morphable_model import load_model
    basis = load_model(args.model)
    lms = read_landmarks(args.landmarks)
    fit = fit_video(basis, lms, EnergyWeights(args.w_l, args.w_pr, args.w_sm),
                    BoxConstraints(args.k_id, args.k_exp), max_outer=args.max_outer)
    write_fit(args.out, fit)
    log.info("fitted %d frames, energy %.6g, landmark RMSE %.4f px", len(lms), fit.final_energy,
             reprojection_rmse(basis, fit, lms))


def _write_nmfc(basis, fit, size, out, preview):
    from .io import write_nmfc_sequence
    from .raster import render_nmfc_sequence
    write_nmfc_sequence(out, render_nmfc_sequence(basis, fit, size, size), preview)


def cmd_nmfc(args):
    from .io import read_fit
    from .morphable_model import load_model
    _write_nmfc(load_model(args.model), read_fit(args.fit), args.size, args.out, args.preview)


def cmd_reenact(args):
    from .io import read_fit, write_fit
    from .morphable_model import load_model
    from .reenactment import TransferSpec, transfer_params
    basis = load_model(args.model)
    source, target = read_fit(args.source_fit), read_fit(args.target_fit)
    fit = transfer_params(TransferSpec(source, target.identity))
    os.makedirs(args.out, exist_ok=True)
    write_fit(os.path.join(args.out, "fit.json"), fit)
    _write_nmfc(basis, fit, args.size, os.path.join(args.out, "nmfc"), args.preview)


def _clip(root, resolution):
    from .gan import PersonClip
    from .io import load_dataset
    return PersonClip.from_dataset(load_dataset(root), resolution)


def cmd_train_init(args):
    from .gan import save_networks, train_init_stage
    config = _train_config(args)
    clips = [_clip(d, config.resolution) for d in _dataset_dirs(args.data)]
    nets, history = train_init_stage(clips, config, args.log)
    save_networks(args.out, nets)
    log.info("trained %d steps on %d identities, final L_G %.4f", len(history), len(clips),
             history[-1]["L_G"] if history else float("nan"))


def cmd_finetune(args):
    from .gan import finetune_init, finetune_train, load_networks, save_networks
    nets = load_networks(args.checkpoint)
    config = _train_config(args, nets.config)
    if config.resolution != nets.config.resolution:
        raise ValueError("fine-tuning must keep the checkpoint resolution")
    clip = _clip(args.data, config.resolution)
    if args.test_len:
        if len(clip) <= args.test_len:
            raise ValueError(f"too short: {len(clip)} frames, need more than {args.test_len}")
        clip = clip.slice(0, len(clip) - args.test_len)
    person, _ = finetune_init(nets, clip.frames)
    history = finetune_train(person, clip, config.steps, config, args.log)
    save_networks(args.out, person)
    log.info("fine-tuned %d steps on %d frames", len(history), len(clip))


def cmd_render(args):
    from .gan import embed_average, load_networks, synthesize
    from .gan.training import area_downsample, downsample_factor
    from .io import DatasetError, read_nmfc_sequence, read_png, to_uint8, write_png_sequence
    from .metrics import composite_background
    nets = load_networks(args.checkpoint)
    res = nets.config.resolution
    nmfc = read_nmfc_sequence(args.nmfc)
    if nmfc is None:
        raise DatasetError(f"no NMFC images in {args.nmfc}")
    nmfc = area_downsample(nmfc, downsample_factor(nmfc.shape[1], res))
    h = None
    if nets.E is not None:
        if not args.reference:
            raise UsageError("a multi-person checkpoint needs --reference frames for the identity")
        h = embed_average(nets.E, _clip(args.reference, res).frames)
    elif args.reference:
        log.warning("--reference ignored: checkpoint is person-specific")
    frames, masks = synthesize(nets, np.transpose(nmfc, (0, 3, 1, 2)), h)
    if args.background:
        bg = read_png(args.background, "RGB").astype(np.float64) / 255.0
        bg = area_downsample(bg[None], downsample_factor(bg.shape[0], res))[0]
        frames = np.stack([composite_background(f, m, bg) for f, m in zip(frames, masks)])
    write_png_sequence(os.path.join(args.out, "frames"), to_uint8(frames))
    write_png_sequence(os.path.join(args.out, "masks"), to_uint8(masks))


def cmd_metrics(args):
    from .io import read_png_sequence
    from .metrics import evaluate_sequence
    fake, real = read_png_sequence(args.fake), read_png_sequence(args.real)
    load_mask = lambda d: read_png_sequence(d, "L").astype(np.float64) / 255.0 if d else None
    report = evaluate_sequence(fake, real, load_mask(args.gt_masks), load_mask(args.pred_masks))
    text = json.dumps(report.to_dict(), indent=1)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")


def cmd_synth_data(args):
    from .synthdata import write_corpus
    from .synthetic import make_synthetic_basis
    basis = make_synthetic_basis(args.n_id, args.n_exp, seed=args.seed)
    dirs = write_corpus(args.out, args.people, args.frames, args.size, args.seed, basis)
    log.info("wrote model and %d people to %s", len(dirs), args.out)


COMMANDS = {
    "fit": cmd_fit, "nmfc": cmd_nmfc, "reenact": cmd_reenact, "train-init": cmd_train_init,
    "finetune": cmd_finetune, "render": cmd_render, "metrics": cmd_metrics,
    "synth-data": cmd_synth_data,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args = _merge_config(args, parser, argv)
    except (OSError, ValueError) as exc:
        print(f"facereenact: error: bad config: {exc}", file=sys.stderr)
        return 2
    args.seed = 0 if args.seed is None else args.seed
    missing = [k for k in REQUIRED[args.command] if getattr(args, k, None) in (None, [])]
    if missing:
        sub.choices[args.command].print_usage(sys.stderr)
        print(f"facereenact {args.command}: error: missing "
              + ", ".join("--" + k.replace("_", "-") for k in missing), file=sys.stderr)
        return 2
    if args.threads:
        import numba
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"facereenact {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("command failed", exc_info=True)
        print(f"facereenact {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

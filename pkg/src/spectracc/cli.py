"""Command-line entry point: ``spectracc <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import colorimetry, dataset, evaluation, io, pipeline
from . import train as kan_train
from .errors import ConfigError, DataError, SpectraccError
from .illuminant import estimator, minkowski_estimate

log = logging.getLogger("spectracc")


# ------------------------------------------------------------------ config


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def section(cfg: dict, name: str, cls) -> dict:
    """Keys for ``cls`` from ``cfg[name]``, or from a flat config when that section is absent."""
    names = {f.name for f in fields(cls)}
    if name in cfg:
        sub = cfg[name]
        unknown = set(sub) - names
        if unknown:
            raise ConfigError(f"unknown keys in '{name}' config: {sorted(unknown)}")
        return dict(sub)
    return {k: v for k, v in cfg.items() if k in names}


def make_dataclass(cls, values: dict):
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def dataset_config(args, cfg: dict) -> dataset.DatasetConfig:
    values = section(cfg, "dataset", dataset.DatasetConfig)
    for key in ("n_scenes", "n_illuminants", "size", "ms_factor", "n_blobs", "white_patch", "camera_variant",
                "split_seed"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.seed is not None:
        values["seed"] = args.seed
    dc = make_dataclass(dataset.DatasetConfig, values)
    dc.validate()
    return dc


def train_config(args, cfg: dict) -> kan_train.TrainConfig:
    values = section(cfg, "train", kan_train.TrainConfig)
    if args.seed is not None:
        values["seed"] = args.seed
    for key in ("lr", "max_epochs", "patience", "n_spectral"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "no_spectral", False):
        values["spectral_path"] = False
    if getattr(args, "freeze_all_but_spectral", False):
        values["freeze"] = kan_train.ENCODER_ONLY
    return make_dataclass(kan_train.TrainConfig, values)


def homography_params(args, cfg: dict) -> dataset.HomographyParams:
    values = section(cfg, "homography", dataset.HomographyParams)
    for key in ("max_translation", "max_rotation", "scale_jitter", "max_perspective"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.seed is not None:
        values["seed"] = args.seed
    return make_dataclass(dataset.HomographyParams, values)


def out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def threads(args) -> int:
    return 1 if args.deterministic else max(1, args.threads)


def parse_methods(text: str, ckpt=None) -> list[evaluation.Method]:
    methods = []
    for token in [t.strip() for t in text.split(",") if t.strip()]:
        if token == "oracle":
            methods.append(evaluation.Method.oracle())
        elif token == "kan":
            methods.append(load_kan_method(ckpt))
        else:
            methods.append(evaluation.Method.traditional(token))
    if ckpt is not None and not any(m.kind == "kan" for m in methods):
        methods.append(load_kan_method(ckpt))
    if not methods:
        raise ConfigError("no methods selected")
    return methods


def load_kan_method(ckpt) -> evaluation.Method:
    if ckpt is None:
        raise ConfigError("method 'kan' needs --ckpt")
    path = Path(ckpt)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    params, _ = kan_train.load_checkpoint(path)
    return evaluation.Method.kan(params, label=f"kan[{path.stem}]")


def write_report(out: Path, stem: str, payload: dict, text: str) -> None:
    io.write_json(payload, out / f"{stem}.json")
    (out / f"{stem}.txt").write_text(text)
    sys.stdout.write(text)


# ---------------------------------------------------------------- commands


def cmd_make_synthetic_scenes(args, cfg):
    dc = dataset_config(args, cfg)
    out = out_dir(args)
    index = dataset.write_scenes(dataset.synth_scenes(dc), out)
    io.write_json({"dataset": asdict(dc)}, out / "scene_config.json")
    print(index)


def cmd_render_dataset(args, cfg):
    dc = dataset_config(args, cfg)
    scenes = dataset.load_scenes(args.scenes, dc.grid) if args.scenes else None
    if scenes is not None:
        dc = dataset.DatasetConfig(**{**asdict(dc), "n_scenes": len(scenes)})
    ds = dataset.build_dataset(dc, threads(args), scenes=scenes)
    print(dataset.write_dataset(ds, out_dir(args)))


def cmd_misalign_dataset(args, cfg):
    ds = dataset.load_dataset(args.manifest)
    mis = dataset.misalign_dataset(ds, homography_params(args, cfg))
    print(dataset.write_dataset(mis, out_dir(args)))


def cmd_estimate_illuminant(args, cfg):
    img = io.load_image(args.input)
    spec = estimator(args.estimator, args.p, args.sigma, args.order)
    est = minkowski_estimate(img, spec, args.saturation)
    result = {"estimator": spec.as_dict(), "rgb": est.rgb.tolist(), "raw_magnitude": est.raw_magnitude}
    io.write_json(result, out_dir(args) / "illuminant.json")
    print(json.dumps(result, sort_keys=True))


def cmd_correct(args, cfg):
    img = io.load_image(args.input)
    out = out_dir(args)
    if args.mode == "traditional":
        if not args.profile:
            raise ConfigError("--mode traditional needs --profile")
        profile = pipeline.load_profile(args.profile)
        spec = estimator(args.estimator, args.p, args.sigma, args.order)
        result, record = pipeline.traditional_correct(img, profile, spec, saturation=args.saturation)
        io.write_json(record.as_dict(), out / "correction.json")
    else:
        if not args.ms:
            raise ConfigError("--mode kan needs --ms")
        params, _ = kan_train.load_checkpoint(load_kan_path(args.ckpt))
        result = kan_train.predict_image(params, img, io.load_image(args.ms))
    io.save_image(result, out / "corrected.mci")
    print(out / "corrected.mci")


def load_kan_path(ckpt) -> Path:
    if not ckpt:
        raise ConfigError("--mode kan needs --ckpt")
    path = Path(ckpt)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    return path


def cmd_train_kan(args, cfg):
    tc = train_config(args, cfg)
    ds = dataset.load_dataset(args.manifest)
    init = kan_train.load_checkpoint(load_kan_path(args.init))[0] if args.init else None
    result = kan_train.train_on_dataset(ds, tc, init)
    out = out_dir(args)
    kan_train.save_checkpoint(result.params, out / "model.kanc", tc,
                              {"best_epoch": result.best_epoch, "best_val_de76": result.best_val})
    io.write_json({"config": asdict(tc), "fingerprint": tc.fingerprint(), "best_epoch": result.best_epoch,
                   "best_val_de76": result.best_val, "stopped_early": result.stopped_early, "log": result.log},
                  out / "train_log.json")
    print(f"best epoch {result.best_epoch}, val dE76 {result.best_val:.4f} -> {out / 'model.kanc'}")


def cmd_evaluate(args, cfg):
    ds = dataset.load_dataset(args.manifest)
    reports = [evaluation.evaluate_method(ds, m, args.partition, threads(args))
               for m in parse_methods(args.methods, args.ckpt)]
    payload = {"reports": [r.as_dict() for r in reports]}
    write_report(out_dir(args), "evaluation", payload, evaluation.format_table(reports))


def cmd_ablate_exposure(args, cfg):
    ds = dataset.load_dataset(args.manifest)
    alphas = [float(a) for a in args.alphas.split(",")] if args.alphas else \
        list(section(cfg, "ablation", evaluation.AblationConfig).get("exposure_alphas", (1.0, 0.75, 0.5)))
    result = evaluation.run_exposure_ablation(ds, parse_methods(args.methods, args.ckpt), alphas,
                                              args.partition, threads(args))
    write_report(out_dir(args), "exposure_ablation", result, evaluation.format_ablation_table(result))


def cmd_ablate_misalignment(args, cfg):
    aligned = dataset.load_dataset(args.manifest)
    misaligned = dataset.load_dataset(args.misaligned)
    params, _ = kan_train.load_checkpoint(load_kan_path(args.ckpt))
    tc = train_config(args, cfg)
    res = evaluation.run_misalignment_experiment(aligned, misaligned, params, tc, threads(args))
    out = out_dir(args)
    kan_train.save_checkpoint(res["finetuned_params"], out / "finetuned.kanc", res["finetune_config"])
    payload = {"unadapted": res["unadapted"].as_dict(), "finetuned": res["finetuned"].as_dict(),
               "delta_de00_mean": res["delta_de00_mean"], "changed_groups": res["changed_groups"],
               "finetune_log": res["finetune_log"]}
    text = evaluation.format_table([res["unadapted"], res["finetuned"]])
    text += f"delta mean dE00 (finetuned - unadapted): {res['delta_de00_mean']:+.4f}\n"
    write_report(out, "misalignment", payload, text)


def cmd_export_srgb(args, cfg):
    img = io.load_image(args.input)
    if img.color_space != "xyz":
        raise DataError(f"export-srgb expects an xyz image, got {img.color_space}")
    target = Path(args.out)
    if target.suffix.lower() != ".png":
        target = out_dir(args) / (Path(args.input).stem + ".png")
    target.parent.mkdir(parents=True, exist_ok=True)
    io.export_png16(colorimetry.xyz_to_srgb_encode(img), target)
    print(target)


# ------------------------------------------------------------------ parser


def _estimator_flags(p):
    p.add_argument("--estimator", default="gw", help="gw, wp, sog, ggw, ge1, ge2")
    p.add_argument("--p", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--order", type=int, choices=(0, 1, 2))
    p.add_argument("--saturation", type=float)


def _dataset_flags(p):
    for name in ("n-scenes", "n-illuminants", "size", "ms-factor", "n-blobs", "white-patch", "camera-variant",
                 "split-seed"):
        p.add_argument(f"--{name}", type=int)


def _train_flags(p):
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--n-spectral", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default="out")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--deterministic", action="store_true", help="force single-threaded execution")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="spectracc", description="Spectral-guided color correction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic-scenes", parents=[common])
    _dataset_flags(p)
    p.set_defaults(func=cmd_make_synthetic_scenes)

    p = sub.add_parser("render-dataset", parents=[common])
    _dataset_flags(p)
    p.add_argument("--scenes", help="scenes.json (synthesized from config when omitted)")
    p.set_defaults(func=cmd_render_dataset)

    p = sub.add_parser("misalign-dataset", parents=[common])
    p.add_argument("--manifest", required=True)
    for name in ("max-translation", "max-rotation", "scale-jitter", "max-perspective"):
        p.add_argument(f"--{name}", type=float)
    p.set_defaults(func=cmd_misalign_dataset)

    p = sub.add_parser("estimate-illuminant", parents=[common])
    p.add_argument("--input", required=True)
    _estimator_flags(p)
    p.set_defaults(func=cmd_estimate_illuminant)

    p = sub.add_parser("correct", parents=[common])
    p.add_argument("--input", required=True)
    p.add_argument("--ms")
    p.add_argument("--mode", choices=("traditional", "kan"), default="traditional")
    p.add_argument("--profile")
    p.add_argument("--ckpt")
    _estimator_flags(p)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("train-kan", parents=[common])
    p.add_argument("--manifest", required=True)
    p.add_argument("--init")
    p.add_argument("--freeze-all-but-spectral", action="store_true")
    p.add_argument("--no-spectral", action="store_true", help="RGB-only ablation")
    _train_flags(p)
    p.set_defaults(func=cmd_train_kan)

    for name, func in (("evaluate", cmd_evaluate), ("ablate-exposure", cmd_ablate_exposure)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--manifest", required=True)
        p.add_argument("--methods", default="gw,wp,sog,ggw,ge1,ge2,oracle")
        p.add_argument("--ckpt")
        p.add_argument("--partition", default="test", choices=("train", "val", "test"))
        if name == "ablate-exposure":
            p.add_argument("--alphas", help="comma-separated exposure factors")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate-misalignment", parents=[common])
    p.add_argument("--manifest", required=True, help="aligned dataset manifest")
    p.add_argument("--misaligned", required=True, help="misaligned dataset manifest")
    p.add_argument("--ckpt", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_ablate_misalignment)

    p = sub.add_parser("export-srgb", parents=[common])
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_export_srgb)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except SpectraccError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

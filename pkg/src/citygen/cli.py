"""Command-line entry point.

Subcommands cover the pipeline end to end: dataset generation, style library
construction, diffusion training, synthesis, the transfer benchmark, and
report rendering.  Re-running any command with the same config and seed
reproduces its outputs byte-for-byte (timing logs under ``logs/`` are the
documented exception).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diffusion
from .benchmark import (
    CONST_DESCRIPTOR,
    CityTransferRun,
    frameset_descriptor,
    run_citytransfer,
)
from .config import RunConfig, build_rig, load_config
from .dataset import DatasetReader, make_dataset, MANIFEST_NAME
from .imgio import write_png, write_ppm
from .model import build_denoiser
from .rng import Rng, derive_seed
from .schedule import make_schedule
from .style import StyleLibrary, build_library, sample_style

log = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON config file (defaults used if omitted)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", type=Path, default=None, help="override the output directory")


def _load(args) -> tuple[RunConfig, Path]:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    cfg = load_config(args.config, overrides)
    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "config.json").write_text(
        json.dumps({"hash": cfg.hash(), "config": cfg.to_dict()}, sort_keys=True, indent=1)
    )
    return cfg, out_root


def cmd_gen_scenes(args) -> int:
    cfg, out_root = _load(args)
    for city in ("A", "B"):
        for split, n in (("train", cfg.dataset.train_scenes), ("test", cfg.dataset.test_scenes)):
            path = make_dataset(cfg, city, split, n, out_root)
            print(f"wrote {path}")
    return 0


def _require_manifest(out_root: Path, city: str, split: str) -> Path:
    path = out_root / "data" / city / split / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"missing dataset manifest {path}; run gen-scenes first")
    return path


def cmd_build_style_lib(args) -> int:
    cfg, out_root = _load(args)
    for city in ("A", "B"):
        reader = DatasetReader(_require_manifest(out_root, city, "train"))
        lib = build_library(reader, cfg.style_lib.k, derive_seed(cfg.seed, "lib", city))
        path = out_root / "styles" / f"style_{city}.json"
        lib.save(path)
        print(f"wrote {path} (K={len(lib)})")
    return 0


def cmd_train_diffusion(args) -> int:
    cfg, out_root = _load(args)
    _require_manifest(out_root, "A", "train")
    _require_manifest(out_root, "B", "train")
    run = CityTransferRun(cfg, out_root)
    model = build_denoiser(Rng(derive_seed(cfg.seed, "diff_init", 0, "full")), cfg.image, cfg.diffusion)
    samples = run._diffusion_samples(constant_style=False)
    sched = make_schedule(cfg.diffusion.t_steps, cfg.diffusion.beta_min, cfg.diffusion.beta_max)
    ckpt_dir = out_root / "diffusion" / cfg.hash()
    res = diffusion.train(
        model,
        samples,
        sched,
        steps=cfg.diffusion.train_steps,
        batch_size=cfg.diffusion.batch,
        lr=cfg.diffusion.lr,
        seed=derive_seed(cfg.seed, "diff_train", 0, "full"),
        structure_dropout=cfg.diffusion.structure_dropout,
        checkpoint_every=cfg.diffusion.checkpoint_every,
        checkpoint_dir=ckpt_dir,
        log_csv=out_root / "logs" / "diffusion_loss.csv",
        resume_from=args.resume if getattr(args, "resume", None) else None,
    )
    print(f"wrote {res.checkpoint_path}")
    return 0


def cmd_synthesize(args) -> int:
    cfg, out_root = _load(args)
    ckpt = args.checkpoint or (out_root / "diffusion" / cfg.hash() / "checkpoint.cgck")
    if not Path(ckpt).exists():
        raise FileNotFoundError(f"missing checkpoint {ckpt}; run train-diffusion first")
    lib_path = out_root / "styles" / "style_B.json"
    if not lib_path.exists():
        raise FileNotFoundError(f"missing style library {lib_path}; run build-style-lib first")
    lib = StyleLibrary.load(lib_path)
    model = build_denoiser(Rng(0), cfg.image, cfg.diffusion)
    diffusion.load_training_checkpoint(ckpt, model)
    sched = make_schedule(cfg.diffusion.t_steps, cfg.diffusion.beta_min, cfg.diffusion.beta_max)
    reader = DatasetReader(_require_manifest(out_root, "A", "train"))
    rng = Rng(derive_seed(cfg.seed, "synthesize_cli"))
    synth_dir = out_root / "synth" / cfg.hash()
    n = min(args.count, len(reader))
    meta = {"config": cfg.hash(), "seed": cfg.seed}
    for start in range(0, n, cfg.diffusion.sample_batch):
        idx = list(range(start, min(start + cfg.diffusion.sample_batch, n)))
        maps = np.stack([reader.load_map(i) for i in idx])
        drawn = [sample_style(lib, rng) for _ in idx]
        y = np.stack([vec for vec, _ in drawn])
        imgs = diffusion.sample(model, maps, y, sched, cfg.diffusion.sampler, rng, cfg.diffusion.sample_steps)
        for j, i in enumerate(idx):
            for v in range(imgs.shape[1]):
                write_ppm(synth_dir / f"sample_{i:04d}_v{v}.ppm", imgs[j, v], meta=meta)
            sidecar = {
                "config_hash": cfg.hash(),
                "seed": cfg.seed,
                "source_entry": i,
                "style_provenance": {
                    "frame_id": drawn[j][1].frame_id,
                    "city": drawn[j][1].city,
                    "seed": drawn[j][1].seed,
                },
                "map_sha256": _array_hash(maps[j]),
            }
            (synth_dir / f"sample_{i:04d}.json").write_text(json.dumps(sidecar, sort_keys=True, indent=1))
    print(f"wrote {n} samples under {synth_dir}")
    return 0


def _array_hash(arr: np.ndarray) -> str:
    import hashlib

    return hashlib.sha256(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).hexdigest()[:16]


def cmd_benchmark(args) -> int:
    cfg, out_root = _load(args)
    report = run_citytransfer(
        cfg,
        out_root,
        stub_generator=args.stub_generator,
        data_fraction=args.data_fraction,
        include_ablations=args.ablations,
    )
    report_path = out_root / "reports" / "benchmark.json"
    report.save(report_path)
    (out_root / "reports" / "benchmark.csv").write_text(report.csv_summary())
    print(f"wrote {report_path}")
    for name, ok in sorted(report.gates.items()):
        print(f"gate {name}: {'PASS' if ok else 'FAIL'}")
    return 0 if report.all_gates_pass() else 1


def cmd_report(args) -> int:
    doc = json.loads(Path(args.report).read_text())
    print(f"config {doc['config_hash']}  seeds {doc['seeds']}")
    print(f"{'metric':34s} value")
    for k in sorted(doc["medians"]):
        print(f"{k:34s} {doc['medians'][k]:.4f}")
    for k in sorted(doc["gates"]):
        print(f"gate {k:29s} {'PASS' if doc['gates'][k] else 'FAIL'}")
    if args.montage_from is not None:
        _write_montages(Path(args.montage_from), Path(args.report).parent / "montages")
    return 0 if all(doc["gates"].values()) else 1


def _write_montages(run_dir: Path, out_dir: Path, limit: int = 8) -> None:
    """Side-by-side PNG: generated | structural overlay | ground truth."""
    from .imgio import read_ppm, read_pgm

    synth_dirs = sorted((run_dir / "synth").glob("*")) if (run_dir / "synth").exists() else []
    if not synth_dirs:
        print("no synth outputs found; skipping montages")
        return
    synth = synth_dirs[0]
    data = run_dir / "data" / "A" / "train"
    reader = DatasetReader(data / MANIFEST_NAME)
    count = 0
    for sidecar in sorted(synth.glob("sample_*.json")):
        meta = json.loads(sidecar.read_text())
        i = meta["source_entry"]
        gen = read_ppm(synth / f"sample_{i:04d}_v0.ppm")
        gt = reader.load_frames(i)[0]
        m = reader.load_map(i)[0]
        overlay = gen.copy()
        band = np.maximum(m[0], m[1]) > 0
        overlay[0][band] = 1.0
        overlay[1][band] = 0.1
        overlay[2][band] = 0.1
        montage = np.concatenate([gen, overlay, gt], axis=2)
        write_png(out_dir / f"montage_{i:04d}.png", montage)
        count += 1
        if count >= limit:
            break
    print(f"wrote {count} montages under {out_dir}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="citygen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate both cities, both splits")
    _add_common(p)
    p.set_defaults(fn=cmd_gen_scenes)

    p = sub.add_parser("build-style-lib", help="build per-city style libraries")
    _add_common(p)
    p.set_defaults(fn=cmd_build_style_lib)

    p = sub.add_parser("train-diffusion", help="train the conditional denoiser")
    _add_common(p)
    p.add_argument("--resume", type=Path, default=None, help="resume from a checkpoint")
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("synthesize", help="sample target-styled images over source maps")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--count", type=int, default=16)
    p.set_defaults(fn=cmd_synthesize)

    p = sub.add_parser("benchmark", help="run the cross-city transfer benchmark")
    _add_common(p)
    p.add_argument("--stub-generator", action="store_true", help="pass source images through unchanged")
    p.add_argument("--ablations", action="store_true", help="also run both style ablations")
    p.add_argument("--data-fraction", type=float, default=1.0, choices=[1.0, 0.5, 0.2])
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("report", help="summarize a benchmark report")
    p.add_argument("report", type=Path)
    p.add_argument("--montage-from", type=Path, default=None, help="run dir to pull montage imagery from")
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Two-city transfer benchmark.

Trains a lane segmenter under three regimes and evaluates all of them on the
held-out target-city test split:

  (a) upper bound: source-train + target-train, with labels;
  (b) source-only: source-train labels only;
  (c) synthesis pipeline: train the diffusion model on labeled source data
      plus *unlabeled* target imagery (structural maps zeroed for the
      unlabeled part), synthesize target-styled images over source geometry,
      pretrain the segmenter on the synthetic set, finetune on real source.

Two ablations rerun (c) with the synthesis style source swapped to the
source-city library, or with all style descriptors replaced by a constant
information-free vector (the latter retrains the diffusion model).

A data-access audit proves regime (c) never touches target-city masks or
target test frames.  Structural fidelity is scored against an oracle ceiling
(ground-truth renders) and a noise floor (untrained model); style fidelity is
the descriptor-space margin between the two city libraries.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffusion, raster, style
from .audit import AccessAudit
from .config import RunConfig, build_rig
from .dataset import DatasetReader, make_dataset, MANIFEST_NAME
from .model import build_denoiser
from .rng import Rng, derive_seed
from .schedule import make_schedule
from .segmenter import SegSample, build_segmenter, eval_iou, train_segmenter
from .style import StyleLibrary, build_library, encode_style, mean_top_k_distance, sample_style

log = logging.getLogger(__name__)

CONST_DESCRIPTOR = np.full(32, 1.0 / math.sqrt(32.0))


# ---------------------------------------------------------------------------
# metrics on generated imagery
# ---------------------------------------------------------------------------


def _sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    p = gray
    gx = ((p[:-2, 2:] + p[2:, 2:]) + 2.0 * p[1:-1, 2:]) - ((p[:-2, :-2] + p[2:, :-2]) + 2.0 * p[1:-1, :-2])
    gy = ((p[2:, :-2] + p[2:, 2:]) + 2.0 * p[2:, 1:-1]) - ((p[:-2, :-2] + p[:-2, 2:]) + 2.0 * p[:-2, 1:-1])
    mag = np.zeros_like(p)
    mag[1:-1, 1:-1] = np.hypot(gx, gy)
    return mag


def structure_consistency(frames: np.ndarray, m: np.ndarray) -> float:
    """IoU between strong image edges and the dilated lane band, mean over views.

    Edges are gradient magnitudes above their own 90th percentile; the band is
    the union of both lane channels dilated by 2 px.  Empty-vs-empty scores 0
    (an edgeless image carries no structure).
    """
    vals = []
    for v in range(frames.shape[0]):
        gray = frames[v].mean(axis=0)
        mag = _sobel_magnitude(gray)
        thr = np.percentile(mag, 90.0)
        edges = mag > thr
        band = raster.dilate_mask(
            np.maximum(m[v, raster.CHANNEL_BOUNDARY], m[v, raster.CHANNEL_CENTERLINE]), 2
        ) > 0
        union = float(np.logical_or(edges, band).sum())
        inter = float(np.logical_and(edges, band).sum())
        vals.append(inter / union if union > 0 else 0.0)
    return float(np.mean(vals))


def style_fidelity(frame_sets: list[np.ndarray], lib_source: StyleLibrary, lib_target: StyleLibrary) -> float:
    """Mean margin: distance-to-source minus distance-to-target (positive = target-like)."""
    src = lib_source.vectors()
    tgt = lib_target.vectors()
    margins = []
    for frames in frame_sets:
        for v in range(frames.shape[0]):
            y = encode_style(frames[v])
            margins.append(mean_top_k_distance(y, src) - mean_top_k_distance(y, tgt))
    return float(np.mean(margins))


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


def ensure_datasets(cfg: RunConfig, out_root) -> dict[tuple[str, str], Path]:
    """Generate any missing (city, split) dataset; returns manifest paths."""
    out_root = Path(out_root)
    paths = {}
    for city in ("A", "B"):
        for split, n in (("train", cfg.dataset.train_scenes), ("test", cfg.dataset.test_scenes)):
            manifest = out_root / "data" / city / split / MANIFEST_NAME
            if not manifest.exists():
                log.info("generating dataset %s/%s (%d scenes)", city, split, n)
                make_dataset(cfg, city, split, n, out_root)
            paths[(city, split)] = manifest
    return paths


def frameset_descriptor(frames: np.ndarray) -> np.ndarray:
    vecs = [encode_style(frames[v]) for v in range(frames.shape[0])]
    m = np.mean(vecs, axis=0)
    return m / np.linalg.norm(m)


def seg_samples(reader: DatasetReader, indices=None) -> list[SegSample]:
    """One sample per (entry, view): image plus lane-boundary ground truth."""
    out = []
    for i in indices if indices is not None else range(len(reader)):
        frames = reader.load_frames(i)
        masks = reader.load_map(i)
        for v in range(frames.shape[0]):
            out.append(SegSample(image=frames[v], mask=masks[v, raster.CHANNEL_BOUNDARY]))
    return out


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    iou: dict[str, dict[str, float]] = field(default_factory=dict)  # regime -> {iou_40, iou_50}
    structure: dict[str, float] = field(default_factory=dict)  # trained/floor/ceiling medians
    style_margin: float | None = None


@dataclass
class MetricsReport:
    config_hash: str
    seeds: list[int]
    stub_generator: bool
    data_fraction: float
    per_seed: list[SeedResult] = field(default_factory=list)
    medians: dict[str, float] = field(default_factory=dict)
    gates: dict[str, bool] = field(default_factory=dict)
    audit_summary: dict[str, int] = field(default_factory=dict)
    audit_violations: list[dict] = field(default_factory=list)

    def all_gates_pass(self) -> bool:
        return all(self.gates.values())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    def csv_summary(self) -> str:
        lines = ["metric,value"]
        for name in sorted(self.medians):
            lines.append(f"{name},{self.medians[name]:.6f}")
        for name in sorted(self.gates):
            lines.append(f"gate:{name},{int(self.gates[name])}")
        return "\n".join(lines) + "\n"


def _median(vals) -> float:
    return float(np.median(np.asarray(vals, dtype=np.float64)))


# ---------------------------------------------------------------------------
# the benchmark itself
# ---------------------------------------------------------------------------


class CityTransferRun:
    """Holds shared data for one benchmark execution."""

    def __init__(self, cfg: RunConfig, out_root, stub_generator=False, data_fraction=1.0,
                 include_ablations=False):
        self.cfg = cfg
        self.out_root = Path(out_root)
        self.stub = stub_generator
        self.fraction = float(data_fraction)
        self.include_ablations = include_ablations
        self.audit = AccessAudit()
        self.rig = build_rig(cfg)
        self.schedule = make_schedule(cfg.diffusion.t_steps, cfg.diffusion.beta_min, cfg.diffusion.beta_max)
        ensure_datasets(cfg, self.out_root)
        self.readers = {
            (city, split): DatasetReader(self.out_root / "data" / city / split / MANIFEST_NAME, audit=self.audit)
            for city in ("A", "B")
            for split in ("train", "test")
        }
        n = len(self.readers[("A", "train")])
        self.a_used = list(range(max(1, round(self.fraction * n))))

    # -- stage helpers ------------------------------------------------------
    def _style_libraries(self) -> tuple[StyleLibrary, StyleLibrary]:
        self.audit.set_stage("c.style_library")
        lib_b = build_library(self.readers[("B", "train")], self.cfg.style_lib.k, derive_seed(self.cfg.seed, "lib", "B"))
        self.audit.set_stage("ablation.style_library")
        lib_a = build_library(self.readers[("A", "train")], self.cfg.style_lib.k, derive_seed(self.cfg.seed, "lib", "A"))
        return lib_a, lib_b

    def _diffusion_samples(self, constant_style: bool) -> list[diffusion.TrainSample]:
        """Labeled source samples (with maps) plus unlabeled target imagery (zero maps)."""
        self.audit.set_stage("c.diffusion_data")
        samples = []
        ra = self.readers[("A", "train")]
        for i in self.a_used:
            frames = ra.load_frames(i)
            struct = ra.load_map(i)
            vec = CONST_DESCRIPTOR if constant_style else frameset_descriptor(frames)
            samples.append(diffusion.TrainSample(frames, struct, vec))
        rb = self.readers[("B", "train")]
        for i in range(len(rb)):
            frames = rb.load_frames(i)
            vec = CONST_DESCRIPTOR if constant_style else frameset_descriptor(frames)
            samples.append(diffusion.TrainSample(frames, np.zeros_like(frames), vec))
        return samples

    def _train_diffusion(self, seed: int, constant_style: bool):
        tag = "const" if constant_style else "full"
        self.audit.set_stage("c.diffusion_train")
        dcfg = self.cfg.diffusion
        model = build_denoiser(Rng(derive_seed(self.cfg.seed, "diff_init", seed, tag)), self.cfg.image, dcfg)
        samples = self._diffusion_samples(constant_style)
        res = diffusion.train(
            model,
            samples,
            self.schedule,
            steps=dcfg.train_steps,
            batch_size=dcfg.batch,
            lr=dcfg.lr,
            seed=derive_seed(self.cfg.seed, "diff_train", seed, tag),
            structure_dropout=dcfg.structure_dropout,
            log_csv=self.out_root / "logs" / f"diffusion_{tag}_seed{seed}.csv",
        )
        return res.model, res.losses

    def _synthesize(self, model, seed: int, lib: StyleLibrary | None, tag: str):
        """Generate target-styled images over source-geometry maps.

        Returns (images list, maps list, y list).  ``lib=None`` means the
        constant descriptor; with the stub flag the source images are passed
        through unchanged.
        """
        self.audit.set_stage("c.synthesize")
        ra = self.readers[("A", "train")]
        maps = []
        for i in self.a_used:
            maps.append(ra.load_map(i))
        maps = maps * self.cfg.benchmark.synth_per_map
        rng = Rng(derive_seed(self.cfg.seed, "synth", seed, tag))
        ys = []
        for _ in maps:
            if lib is None:
                ys.append(CONST_DESCRIPTOR)
            else:
                vec, _entry = sample_style(lib, rng)
                ys.append(vec)
        if self.stub:
            images = [ra.load_frames(i) for i in self.a_used] * self.cfg.benchmark.synth_per_map
            return images, maps, ys
        dcfg = self.cfg.diffusion
        images = []
        bs = dcfg.sample_batch
        for i in range(0, len(maps), bs):
            m = np.stack(maps[i : i + bs])
            y = np.stack(ys[i : i + bs])
            out = diffusion.sample(model, m, y, self.schedule, dcfg.sampler, rng, dcfg.sample_steps)
            images.extend(out)
        return images, maps, ys

    def _seg_train_eval(self, seed: int, regime: str, train_sets: list[list[SegSample]],
                        budgets: list[int]) -> dict[str, float]:
        """Sequential training phases (pretrain -> finetune) then target-test IoU."""
        scfg = self.cfg.segmenter
        model = build_segmenter(Rng(derive_seed(self.cfg.seed, "seg_init", seed, regime)), self.cfg.image, scfg)
        for phase, (data, steps) in enumerate(zip(train_sets, budgets)):
            train_segmenter(
                model,
                data,
                steps=steps,
                batch_size=scfg.batch,
                lr=scfg.lr,
                seed=derive_seed(self.cfg.seed, "seg_train", seed, regime, phase),
                pos_weight=scfg.pos_weight,
            )
        self.audit.set_stage(f"eval.{regime}")
        test = seg_samples(self.readers[("B", "test")])
        iou = eval_iou(model, test)
        return {"iou_40": iou[0.4], "iou_50": iou[0.5]}

    def _structure_metrics(self, synth_images, maps, seed: int, ys) -> dict[str, float]:
        """Median consistency of synthetic/floor/oracle image sets on shared maps."""
        k = min(self.cfg.benchmark.n_structure_samples, len(synth_images))
        trained = [structure_consistency(synth_images[i], maps[i]) for i in range(k)]
        self.audit.set_stage("metrics.ceiling")
        ra = self.readers[("A", "train")]
        ceiling = [
            structure_consistency(ra.load_frames(self.a_used[i % len(self.a_used)]), maps[i]) for i in range(k)
        ]
        floor_model = build_denoiser(
            Rng(derive_seed(self.cfg.seed, "floor_init", seed)), self.cfg.image, self.cfg.diffusion
        )
        rng = Rng(derive_seed(self.cfg.seed, "floor_sample", seed))
        floor_imgs = []
        bs = self.cfg.diffusion.sample_batch
        for i in range(0, k, bs):
            m = np.stack(maps[i : i + bs][: min(bs, k - i)])
            y = np.stack(ys[i : i + bs][: min(bs, k - i)])
            out = diffusion.sample(floor_model, m, y, self.schedule, self.cfg.diffusion.sampler, rng,
                                   self.cfg.diffusion.sample_steps)
            floor_imgs.extend(out)
        floor = [structure_consistency(floor_imgs[i], maps[i]) for i in range(k)]
        return {
            "trained": _median(trained),
            "floor": _median(floor),
            "ceiling": _median(ceiling),
        }

    # -- top level ------------------------------------------------------------
    def run(self) -> MetricsReport:
        cfg = self.cfg
        report = MetricsReport(
            config_hash=cfg.hash(),
            seeds=list(cfg.benchmark.seeds),
            stub_generator=self.stub,
            data_fraction=self.fraction,
        )
        lib_a, lib_b = self._style_libraries()

        for seed in cfg.benchmark.seeds:
            sr = SeedResult(seed=seed)
            scfg = cfg.segmenter

            self.audit.set_stage("a.train_data")
            a_train = seg_samples(self.readers[("A", "train")], self.a_used)
            b_train = seg_samples(self.readers[("B", "train")])
            sr.iou["a"] = self._seg_train_eval(seed, "a", [a_train + b_train], [scfg.train_steps])

            self.audit.set_stage("b.train_data")
            sr.iou["b"] = self._seg_train_eval(seed, "b", [a_train], [scfg.train_steps])

            # regime (c): synthesis pipeline
            model_full, _ = self._train_diffusion(seed, constant_style=False)
            synth, maps, ys = self._synthesize(model_full, seed, lib_b, "full")
            self.audit.set_stage("c.pretrain_data")
            pre = _synthetic_seg_samples(synth, maps)
            half = scfg.train_steps // 2
            self.audit.set_stage("c.finetune_data")
            sr.iou["c"] = self._seg_train_eval(seed, "c", [pre, a_train], [half, scfg.train_steps - half])

            self.audit.set_stage("metrics.structure")
            sr.structure = self._structure_metrics(synth, maps, seed, ys)
            sr.style_margin = style_fidelity(
                synth[: cfg.benchmark.n_structure_samples], lib_a, lib_b
            )

            if self.include_ablations:
                synth1, maps1, _ = self._synthesize(model_full, seed, lib_a, "ab1")
                pre1 = _synthetic_seg_samples(synth1, maps1)
                sr.iou["ablation_source_style"] = self._seg_train_eval(
                    seed, "ab1", [pre1, a_train], [half, scfg.train_steps - half]
                )
                model_const, _ = self._train_diffusion(seed, constant_style=True)
                synth2, maps2, _ = self._synthesize(model_const, seed, None, "ab2")
                pre2 = _synthetic_seg_samples(synth2, maps2)
                sr.iou["ablation_no_style"] = self._seg_train_eval(
                    seed, "ab2", [pre2, a_train], [half, scfg.train_steps - half]
                )

            report.per_seed.append(sr)
            log.info("seed %d done: %s", seed, {k: round(v["iou_40"], 4) for k, v in sr.iou.items()})

        self._finalize(report)
        return report

    def _finalize(self, report: MetricsReport) -> None:
        med = report.medians
        for regime in report.per_seed[0].iou:
            med[f"iou_40_{regime}"] = _median([sr.iou[regime]["iou_40"] for sr in report.per_seed])
            med[f"iou_50_{regime}"] = _median([sr.iou[regime]["iou_50"] for sr in report.per_seed])
        med["structure_trained"] = _median([sr.structure["trained"] for sr in report.per_seed])
        med["structure_floor"] = _median([sr.structure["floor"] for sr in report.per_seed])
        med["structure_ceiling"] = _median([sr.structure["ceiling"] for sr in report.per_seed])
        med["style_margin"] = _median([sr.style_margin for sr in report.per_seed])

        gates = report.gates
        if self.stub:
            gates["stub_equivalence"] = (
                abs(med["iou_40_c"] - med["iou_40_b"]) <= self.cfg.benchmark.stub_tolerance
            )
        else:
            gates["transfer_direction"] = med["iou_40_c"] > med["iou_40_b"]
            gates["upper_bound"] = med["iou_40_a"] >= med["iou_40_b"]
            gates["structure_above_floor"] = med["structure_trained"] > 2.0 * med["structure_floor"]
            gates["structure_near_ceiling"] = med["structure_trained"] >= 0.5 * med["structure_ceiling"]
            gates["style_margin_positive"] = med["style_margin"] > 0.0
        if self.include_ablations:
            gates["ablation_source_style_below"] = med["iou_40_ablation_source_style"] < med["iou_40_c"]
            gates["ablation_no_style_below"] = med["iou_40_ablation_no_style"] < med["iou_40_c"]

        violations = self.audit.violations("B", "c.")
        gates["zero_label_audit"] = not violations
        report.audit_summary = self.audit.summary()
        report.audit_violations = [dataclasses.asdict(v) for v in violations]


def _synthetic_seg_samples(synth_images, maps) -> list[SegSample]:
    out = []
    for frames, m in zip(synth_images, maps):
        for v in range(frames.shape[0]):
            out.append(SegSample(image=frames[v], mask=m[v, raster.CHANNEL_BOUNDARY]))
    return out


def run_citytransfer(cfg: RunConfig, out_root, stub_generator=False, data_fraction=1.0,
                     include_ablations=False) -> MetricsReport:
    run = CityTransferRun(cfg, out_root, stub_generator=stub_generator,
                          data_fraction=data_fraction, include_ablations=include_ablations)
    return run.run()


def run_ablations(cfg: RunConfig, out_root, data_fraction=1.0) -> MetricsReport:
    """Full benchmark including both style ablations."""
    return run_citytransfer(cfg, out_root, data_fraction=data_fraction, include_ablations=True)

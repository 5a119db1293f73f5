"""End-to-end train / detect / eval workflows on files."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import nn_core as nn
from ..detect import TileLayout, tile_and_detect
from ..errors import DataError
from ..evalkit import EvalReport, bucket_report, size_bucket
from ..morphology import postprocess_v1, postprocess_v2
from ..vit_recon import ModelParams, init_params, train_step
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig
from .images import load_image, load_mask, save_heatmap, save_image, to_unit

log = logging.getLogger(__name__)


def list_images(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".pbm"))
        if not files:
            raise DataError(f"no images in {path}")
        return files
    if not path.exists():
        raise DataError(f"no such file or directory: {path}")
    return [path]


def extract_tiles(image: np.ndarray, tile: int) -> np.ndarray:
    """Every tile of the default (non-overlapping, edge-anchored) layout."""
    layout = TileLayout(image.shape[0], image.shape[1], tile, tile)
    return np.stack([image[y : y + tile, x : x + tile] for y, x in layout.origins])


def training_tiles(cfg: PipelineConfig, source=None) -> np.ndarray:
    source = source if source is not None else cfg.data.train_dir
    if not source:
        raise DataError("no training images: set data.train_dir or pass --data")
    tiles = [extract_tiles(to_unit(load_image(p)), cfg.vit.image_size) for p in list_images(source)]
    return np.concatenate(tiles)


def train_model(cfg: PipelineConfig, tiles: np.ndarray, log_every: int = 50) -> tuple[ModelParams, list[float]]:
    """Train from a fresh seeded initialization; minibatches drawn with replacement."""
    params = init_params(cfg.vit, cfg.seed)
    t = cfg.train
    state = nn.AdamState(t.lr, t.beta1, t.beta2, t.eps)
    rng = np.random.Generator(np.random.Philox([cfg.seed, 1]))
    losses = []
    for step in range(t.steps):
        idx = rng.integers(0, len(tiles), t.batch_size)
        losses.append(train_step(tiles[idx], params, state))
        if log_every and step % log_every == 0:
            log.info("step %d loss %.6f", step, losses[-1])
    return params, losses


def cmd_train(cfg: PipelineConfig, out_dir, data=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tiles = training_tiles(cfg, data)
    log.info("training on %d pristine tiles", len(tiles))
    params, losses = train_model(cfg, tiles)
    ckpt = out / "model.ckpt"
    save_checkpoint(params, cfg, ckpt)
    (out / "train_loss.csv").write_text("step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(losses)))
    return ckpt


@dataclass
class DetectOutputs:
    heatmap: np.ndarray
    raw: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    meta: dict


def detect_image(image: np.ndarray, params: ModelParams, cfg: PipelineConfig) -> DetectOutputs:
    img = to_unit(image) if image.dtype != np.float64 else image
    tile = cfg.vit.image_size
    layout = TileLayout(img.shape[0], img.shape[1], tile, cfg.detect.stride or tile)
    det = tile_and_detect(img, params, layout, cfg.threshold.build(), cfg.detect.laplacian, cfg.detect.batch_size)
    v1 = postprocess_v1(det.mask)
    v2, passes = postprocess_v2(det.mask, cfg.post.build())
    meta = {**det.metadata(), "v2_passes": passes, "tiles": len(layout.origins), "stride": layout.stride}
    return DetectOutputs(det.heatmap, det.mask, v1, v2, meta)


def cmd_detect(cfg: PipelineConfig, checkpoint, images, out_dir) -> list[Path]:
    """Write heatmap (16-bit PNG + scale sidecar + .npy) and raw/V1/V2 masks per image."""
    params, _ = load_checkpoint(checkpoint, cfg.vit)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    paths = [p for src in images for p in list_images(src)]
    for path in paths:
        res = detect_image(load_image(path), params, cfg)
        stem = path.stem
        scale = save_heatmap(res.heatmap, out / f"{stem}_heatmap.png")
        np.save(out / f"{stem}_heatmap.npy", res.heatmap)
        for tag, m in (("raw", res.raw), ("v1", res.v1), ("v2", res.v2)):
            save_image(m, out / f"{stem}_mask_{tag}.png")
        meta = {**res.meta, "heatmap_scale": scale, "source": path.name}
        (out / f"{stem}_detect.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        written.append(out / f"{stem}_mask_v2.png")
    return written


def cmd_eval(cfg: PipelineConfig, pred_dir, gt_dir, out_dir, pred_suffix: str = "") -> EvalReport:
    """Match ``<gt stem><pred_suffix>.png`` in ``pred_dir`` to every mask in ``gt_dir``."""
    gts = list_images(gt_dir)
    items, ids = [], []
    for g in gts:
        cand = Path(pred_dir) / f"{g.stem}{pred_suffix}{g.suffix}"
        if not cand.exists():
            cand = Path(pred_dir) / f"{g.stem}{pred_suffix}.png"
        if not cand.exists():
            raise DataError(f"no prediction for {g.name} in {pred_dir}")
        gt = load_mask(g)
        items.append((load_mask(cand), gt, size_bucket(gt)))
        ids.append(g.stem)
    report = bucket_report(items, ids)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.table())
    return report


def cmd_post_process(masks, out_dir, variant: str, cfg: PipelineConfig | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in (p for src in masks for p in list_images(src)):
        m = load_mask(path)
        if variant == "v1":
            res = postprocess_v1(m)
        else:
            res, _ = postprocess_v2(m, cfg.post.build() if cfg else None)
        dest = out / path.name
        save_image(res, dest)
        written.append(dest)
    return written

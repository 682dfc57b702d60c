"""Supervised pre-training of the convolutional base via the vision heads.

A dataset of observations is rendered offline from poses sampled uniformly
over free space; the network then learns depth and segmentation prediction
with Adam before any reinforcement learning happens. Only the convolutional
base and the vision heads are updated; the recurrent core, actor, and critic
stay untouched.

Dataset container format (little-endian):

    bytes 0..7    magic b"NVDSET1\\n"
    bytes 8..15   uint64 offset of the JSON index
    records       concatenated zlib blobs
    index         UTF-8 JSON: version, frame_hw, palette, layout specs, and
                  one entry per record (layout id, pose, blob offsets/lengths)

Each record stores rgb and depth as compressed float32 planes and the
segmentation as a compressed uint8 class map; segmentation colors are
reconstructed exactly through the palette, so every plane regenerates
bit-identically from (layout seed, pose). A record is its own target view:
the target image fed to the second stream is the record's own observation.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np
import torch

from . import renderer
from .auxiliary import vn_aux_losses
from .model import NavModel
from .world import MazeLayout, Pose, position_blocked

MAGIC = b"NVDSET1\n"
DATASET_VERSION = 1


@dataclass
class PretrainRecord:
    layout_id: int
    pose: Pose
    rgb: np.ndarray    # (H, W, 3) float32
    depth: np.ndarray  # (H, W) float32, meters
    seg: np.ndarray    # (H, W, 3) float32


class DatasetWriteError(RuntimeError):
    pass


def _blob(arr: np.ndarray) -> bytes:
    return zlib.compress(np.ascontiguousarray(arr).tobytes(), 6)


class DatasetWriter:
    def __init__(self, path: str, frame_hw: int, palette: renderer.Palette, layouts: list):
        self.path = path
        self.frame_hw = frame_hw
        self.palette = palette
        self.layouts = layouts
        self.records = []
        self.f = open(path, "wb")
        self.f.write(MAGIC)
        self.f.write(struct.pack("<Q", 0))  # index offset patched on close
        self.offset = len(MAGIC) + 8

    def add(self, layout_id: int, pose: Pose, rgb, depth, class_map) -> None:
        blobs = {}
        for name, arr in (("rgb", rgb.astype(np.float32)),
                          ("depth", depth.astype(np.float32)),
                          ("seg_idx", class_map.astype(np.uint8))):
            raw = _blob(arr)
            self.f.write(raw)
            blobs[name] = [self.offset, len(raw)]
            self.offset += len(raw)
        self.records.append({
            "layout": layout_id,
            "pose": [pose.x1, pose.x2, pose.theta, pose.sigma],
            "blobs": blobs,
        })

    def close(self) -> None:
        index = {
            "version": DATASET_VERSION,
            "frame_hw": self.frame_hw,
            "count": len(self.records),
            "palette": [[float(c) for c in row] for row in self.palette.colors],
            "layouts": [{"seed": l.seed, "spec": l.spec.to_dict()} for l in self.layouts],
            "records": self.records,
        }
        payload = json.dumps(index, sort_keys=True).encode("utf-8")
        index_offset = self.offset
        self.f.write(payload)
        self.f.seek(len(MAGIC))
        self.f.write(struct.pack("<Q", index_offset))
        self.f.close()


class Dataset:
    """Read-only view over a dataset file; records decode on demand."""

    def __init__(self, path: str):
        self.path = path
        with open(path, "rb") as f:
            if f.read(len(MAGIC)) != MAGIC:
                raise ValueError(f"{path}: not a dataset file")
            (index_offset,) = struct.unpack("<Q", f.read(8))
            f.seek(index_offset)
            self.index = json.loads(f.read().decode("utf-8"))
        if self.index.get("version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {self.index.get('version')}")
        self.palette = np.array(self.index["palette"], dtype=np.float32)
        self.frame_hw = self.index["frame_hw"]

    def __len__(self) -> int:
        return self.index["count"]

    def record(self, i: int) -> PretrainRecord:
        meta = self.index["records"][i]
        hw = self.frame_hw
        with open(self.path, "rb") as f:
            def load(name, dtype, shape):
                off, ln = meta["blobs"][name]
                f.seek(off)
                raw = zlib.decompress(f.read(ln))
                return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

            rgb = load("rgb", np.float32, (hw, hw, 3))
            depth = load("depth", np.float32, (hw, hw))
            seg_idx = load("seg_idx", np.uint8, (hw, hw))
        return PretrainRecord(
            layout_id=meta["layout"],
            pose=Pose(*meta["pose"]),
            rgb=rgb, depth=depth, seg=self.palette[seg_idx],
        )


def sample_free_pose(layout: MazeLayout, rng: np.random.Generator) -> Pose:
    """Uniform collision-free position over the layout extent, uniform heading."""
    w, h = layout.extent
    for _ in range(10_000):
        x = float(rng.uniform(0.0, w))
        y = float(rng.uniform(0.0, h))
        if not position_blocked(layout, x, y):
            return Pose(x, y, float(rng.uniform(0.0, 360.0)), 0.0)
    raise DatasetWriteError("could not find a free pose (layout almost fully blocked?)")


def generate_dataset(layouts: list, n_records: int, rng: np.random.Generator,
                     path: str, frame_hw: int = 84) -> str:
    """Render n_records observations from random poses into a dataset file."""
    if not layouts:
        raise ValueError("at least one layout is required")
    if n_records < 0:
        raise ValueError("n_records must be >= 0")
    n_classes = max(l.n_classes for l in layouts)
    palette = renderer.class_palette(n_classes)
    settings = renderer.RenderSettings(frame_hw=frame_hw)
    writer = DatasetWriter(path, frame_hw, palette, layouts)
    for _ in range(n_records):
        li = int(rng.integers(len(layouts)))
        pose = sample_free_pose(layouts[li], rng)
        frames = renderer.render_planes(layouts[li], pose, settings, palette)
        writer.add(li, pose, frames.rgb, frames.depth, frames.class_map)
    writer.close()
    return path


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    aux_downsize: int = 4


def pretrain_parameters(model: NavModel) -> list:
    """Parameters updated by pre-training: conv base + vision heads only."""
    modules = [model.stream, model.merged, model.fc,
               model.depth_head, model.obs_seg_head, model.target_seg_head]
    params = []
    for m in modules:
        params.extend(m.parameters())
    return params


def pretrain(model: NavModel, dataset: Dataset, config: PretrainConfig = None,
             max_ray: float = None, seed: int = 0, log=None) -> list:
    """Minimize the summed vision losses over the dataset with Adam.

    Returns per-epoch mean losses. Depth targets are normalized by `max_ray`
    (defaults to the max depth found in the dataset). Each record acts as its
    own target view. Shuffling is seed-deterministic; epochs=0 leaves the
    model untouched.
    """
    config = config or PretrainConfig()
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    records = [dataset.record(i) for i in range(n)]
    if max_ray is None:
        max_ray = max(float(r.depth.max()) for r in records) or 1.0
    ds = config.aux_downsize
    dtype = next(model.parameters()).dtype

    rgb = torch.from_numpy(np.stack([r.rgb for r in records])).permute(0, 3, 1, 2).to(dtype)
    depth_t = torch.from_numpy(np.stack(
        [renderer.downsample(r.depth / max_ray, ds) for r in records])).unsqueeze(1).to(dtype)
    seg_t = torch.from_numpy(np.stack(
        [renderer.downsample(r.seg, ds) for r in records])).permute(0, 3, 1, 2).to(dtype)

    opt = torch.optim.Adam(pretrain_parameters(model), lr=config.learning_rate,
                           betas=config.betas, eps=config.eps)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start:start + config.batch_size].copy())
            d, os_, ts = vn_aux_losses(model, rgb[idx], rgb[idx],
                                       depth_t[idx], seg_t[idx], seg_t[idx])
            loss = d + os_ + ts
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)))
        if log:
            log(f"pretrain epoch {epoch + 1}/{config.epochs}: loss {history[-1]:.6f}")
    return history

"""Staged training: per-frame warm-up, then recurrence, then warp composition.

Stage one trains the per-frame variant at lr 1e-4 on single frames; stage two
adds the LSTM and fine-tunes everything at lr 1e-5 on sequences; stage three
adds the feature-warp blend and fine-tunes all parameters jointly at lr 1e-5.
Batches are a pure function of (seed, stage, iteration), so resuming from a
checkpoint replays the identical batch stream.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import attributes as A
from . import nn
from .model import FrameTargets, LayoutModel, ModelConfig, loss_terms

STAGES = ("basic", "blstm", "full")


def _mirror_perms():
    """Attribute index permutations under a left-right scene flip."""
    binary = list(range(A.N_BINARY))
    cont = list(range(A.N_CONTINUOUS))
    bin_swaps = (
        (A.B_SIDEWALK_LEFT, A.B_SIDEWALK_RIGHT),
        (A.B_XWALK_LEFT_ROAD, A.B_XWALK_RIGHT_ROAD),
        (A.B_SIDE_ROAD_LEFT, A.B_SIDE_ROAD_RIGHT),
    )
    cont_swaps = (
        (A.C_RIGHT_ROAD_WIDTH, A.C_LEFT_ROAD_WIDTH),
        (A.C_DIST_RIGHT_ROAD, A.C_DIST_LEFT_ROAD),
    ) + tuple(
        (A.C_LANE_LEFT0 + k, A.C_LANE_RIGHT0 + k) for k in range(A.MAX_LANES_PER_SIDE)
    )
    for i, j in bin_swaps:
        binary[i], binary[j] = binary[j], binary[i]
    for i, j in cont_swaps:
        cont[i], cont[j] = cont[j], cont[i]
    return np.array(binary), np.array(cont)


_MIRROR_BIN, _MIRROR_CONT = _mirror_perms()


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; an emergency checkpoint was written."""


@dataclass
class StagePlan:
    name: str
    iters: int
    lr: float


@dataclass
class TrainConfig:
    seed: int = 0
    batch: int = 8
    iters_basic: int = 5000
    iters_blstm: int = 3000
    iters_full: int = 3000
    lr_basic: float = 1e-4
    lr_blstm: float = 1e-5
    lr_full: float = 1e-5
    log_every: int = 100
    checkpoint_every: int = 0  # 0: stage ends only
    alpha_matrix: bool = False

    def plans(self, upto: str = "full"):
        plans = [
            StagePlan("basic", self.iters_basic, self.lr_basic),
            StagePlan("blstm", self.iters_blstm, self.lr_blstm),
            StagePlan("full", self.iters_full, self.lr_full),
        ]
        if upto not in STAGES:
            raise ValueError("unknown stage %r" % upto)
        return plans[: STAGES.index(upto) + 1]


@dataclass
class TrainData:
    """In-memory dataset: fused input maps, targets, displacement fields.

    The last four fields are optional augmentation sources; when present the
    trainer replaces each drawn sample's stored input with a freshly degraded
    one (strength drawn per sample) and mirrors eligible samples left-right.
    """

    inputs: np.ndarray    # (S, T, C, H, W)
    binary: np.ndarray    # (S, T, 14)
    lane_counts: np.ndarray  # (S, T, 2)
    reg_bins: np.ndarray  # (S, T, 22, N_BINS)
    fields: np.ndarray    # (S, T-1, H, W, 2)
    gt: np.ndarray = None        # (S, T, H, W, C) rendered maps
    keep: np.ndarray = None      # (S, T, H, W) structural visibility
    mirror_ok: np.ndarray = None  # (S,) safe to flip left-right
    difficulty: object = None    # DifficultyConfig driving fresh degradations
    grid: object = None          # GridSpec of the maps (needed to re-degrade)

    @property
    def n_sequences(self):
        return self.inputs.shape[0]

    @property
    def n_frames(self):
        return self.inputs.shape[0] * self.inputs.shape[1]

    def frame_targets(self, seq_idx, frame_idx) -> FrameTargets:
        return FrameTargets(
            self.binary[seq_idx, frame_idx],
            self.lane_counts[seq_idx, frame_idx],
            self.reg_bins[seq_idx, frame_idx],
        )

    def sequence_targets(self, seq_idx) -> FrameTargets:
        """Time-major frame targets for a batch of sequences."""
        t = self.inputs.shape[1]
        b = len(seq_idx)
        sel = lambda a: np.ascontiguousarray(
            a[seq_idx].transpose((1, 0) + tuple(range(2, a.ndim)))
        ).reshape((t * b,) + a.shape[2:])
        return FrameTargets(sel(self.binary), sel(self.lane_counts), sel(self.reg_bins))


def _batch_rng(seed: int, stage: str, iteration: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((seed, STAGES.index(stage), iteration))
    )


def _mirror_targets(binary, lanes, reg, flip):
    """Swap left/right attribute targets on the flagged rows (any lead shape)."""
    binary[flip] = binary[flip][..., _MIRROR_BIN]
    lanes[flip] = lanes[flip][..., ::-1]
    sub = reg[flip][..., _MIRROR_CONT, :]
    sub[..., A.C_ROTATION, :] = sub[..., A.C_ROTATION, ::-1]
    reg[flip] = sub


def _augment_basic(data: TrainData, seq_idx, frame_idx, rng, batch):
    """Freshly degraded, possibly mirrored single frames plus their targets."""
    from .synth import augment_batch

    frames = data.inputs[seq_idx, frame_idx].copy()
    u = rng.uniform(0.0, 1.0, size=batch)
    fused = augment_batch(
        data.gt[seq_idx, frame_idx], data.keep[seq_idx, frame_idx],
        data.grid, data.difficulty, u, rng,
    )
    n_bg = fused.shape[3]
    frames[:, :n_bg] = np.moveaxis(fused, 3, 1)
    binary = data.binary[seq_idx, frame_idx].copy()
    lanes = data.lane_counts[seq_idx, frame_idx].copy()
    reg = data.reg_bins[seq_idx, frame_idx].copy()
    flip = (rng.random(batch) < 0.5) & data.mirror_ok[seq_idx]
    if np.any(flip):
        frames[flip] = frames[flip][..., ::-1]
        _mirror_targets(binary, lanes, reg, flip)
    return frames, FrameTargets(binary, lanes, reg)


def _augment_sequences(data: TrainData, seq_idx, rng, with_fields):
    """Freshly degraded, possibly mirrored sequences; one strength per sequence."""
    from .synth import augment_batch

    b = len(seq_idx)
    t = data.inputs.shape[1]
    h, w = data.grid.height_px, data.grid.width_px
    seqs = data.inputs[seq_idx].copy()
    u = np.repeat(rng.uniform(0.0, 1.0, size=b), t)
    fused = augment_batch(
        data.gt[seq_idx].reshape(b * t, h, w, -1),
        data.keep[seq_idx].reshape(b * t, h, w),
        data.grid, data.difficulty, u, rng,
    )
    n_bg = fused.shape[3]
    seqs[:, :, :n_bg] = fused.reshape(b, t, h, w, n_bg).transpose(0, 1, 4, 2, 3)
    fields = data.fields[seq_idx].copy() if with_fields else None
    binary = data.binary[seq_idx].copy()
    lanes = data.lane_counts[seq_idx].copy()
    reg = data.reg_bins[seq_idx].copy()
    flip = (rng.random(b) < 0.5) & data.mirror_ok[seq_idx]
    if np.any(flip):
        seqs[flip] = seqs[flip][..., ::-1]
        if fields is not None:
            fsub = fields[flip][:, :, :, ::-1, :].copy()
            fsub[..., 1] *= -1.0
            fields[flip] = fsub
        _mirror_targets(binary, lanes, reg, flip)
    tm = lambda a: np.ascontiguousarray(
        a.transpose((1, 0) + tuple(range(2, a.ndim)))
    ).reshape((t * b,) + a.shape[2:])
    return seqs, fields, FrameTargets(tm(binary), tm(lanes), tm(reg))


def _meta(cfg: ModelConfig, stage: str, iteration: int):
    return {
        "grid": np.array([cfg.grid_h, cfg.grid_w], dtype=np.float64),
        "in_channels": np.array([cfg.in_channels], dtype=np.float64),
        "variant": np.array([STAGES.index(stage)], dtype=np.float64),
        "iteration": np.array([iteration], dtype=np.float64),
        "alpha_matrix": np.array([1.0 if cfg.alpha_matrix else 0.0]),
    }


def train_staged(
    data: TrainData,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir,
    upto: str = "full",
    resume: str = None,
    log_hook=None,
):
    """Run the staged schedule; writes <stage>.lnwt checkpoints and log.csv.

    Returns the ParamStore holding the final weights.
    """
    from pathlib import Path

    from .model import ParamStore

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = ParamStore(np.random.default_rng(np.random.SeedSequence((cfg.seed, 997))))

    resume_stage, resume_iter = None, 0
    if resume:
        loaded, meta = nn.load_checkpoint(resume)
        store.load_values(loaded)
        resume_stage = STAGES[int(meta["variant"][0])]
        resume_iter = int(meta["iteration"][0])

    log_path = out / "log.csv"
    mode = "a" if resume else "w"
    with open(log_path, mode, newline="") as log_fh:
        writer = csv.writer(log_fh)
        if mode == "w":
            writer.writerow(
                ["stage", "iter", "loss_total", "loss_bce", "loss_ce", "loss_l1", "wall_ms"]
            )
        skipping = resume_stage is not None
        for plan in cfg.plans(upto):
            model = LayoutModel(store, model_cfg, plan.name)
            params = model.parameters()
            start_iter = 1
            if skipping:
                if plan.name != resume_stage:
                    continue  # earlier stages already folded into the weights
                start_iter = resume_iter + 1
                skipping = False
            else:
                for p in params:
                    p.m[...] = 0.0
                    p.v[...] = 0.0
                    p.step = 0
            _run_stage(model, params, data, cfg, plan, start_iter, writer, log_fh, out, log_hook)
            nn.save_checkpoint(
                out / (plan.name + ".lnwt"), params, _meta(model_cfg, plan.name, plan.iters)
            )
    return store


def _run_stage(model, params, data, cfg, plan, start_iter, writer, log_fh, out, log_hook):
    t_frames = data.inputs.shape[1]
    for it in range(start_iter, plan.iters + 1):
        t0 = time.perf_counter()
        rng = _batch_rng(cfg.seed, plan.name, it)
        for p in params:
            p.zero_grad()
        augment = data.difficulty is not None
        if plan.name == "basic":
            flat = rng.integers(0, data.n_frames, size=cfg.batch)
            seq_idx, frame_idx = np.divmod(flat, t_frames)
            if augment:
                frames, targets = _augment_basic(data, seq_idx, frame_idx, rng, cfg.batch)
            else:
                frames = data.inputs[seq_idx, frame_idx]
                targets = FrameTargets(
                    data.binary[seq_idx, frame_idx],
                    data.lane_counts[seq_idx, frame_idx],
                    data.reg_bins[seq_idx, frame_idx],
                )
            logits = model.forward_frames(frames)
            total, parts = loss_terms(logits, targets, frames_per_sample=1)
        else:
            seq_idx = rng.integers(0, data.n_sequences, size=cfg.batch)
            if augment:
                seqs, fields, targets = _augment_sequences(
                    data, seq_idx, rng, plan.name == "full"
                )
            else:
                seqs = data.inputs[seq_idx]
                fields = data.fields[seq_idx] if plan.name == "full" else None
                targets = data.sequence_targets(seq_idx)
            logits = model.forward_sequence(seqs, fields)
            total, parts = loss_terms(logits, targets, frames_per_sample=t_frames)

        if not np.isfinite(total.item()):
            nn.save_checkpoint(
                out / ("%s_diverged.lnwt" % plan.name),
                params,
                _meta(model.cfg, plan.name, it - 1),
            )
            raise TrainingDiverged(
                "non-finite loss at stage %s iteration %d; checkpoint saved" % (plan.name, it)
            )

        total.backward()
        nn.adam_step(params, lr=plan.lr)

        if cfg.log_every and it % cfg.log_every == 0:
            wall_ms = (time.perf_counter() - t0) * 1000.0
            row = [plan.name, it, "%.9g" % total.item(), "%.9g" % parts[0],
                   "%.9g" % parts[1], "%.9g" % parts[2], "%.3f" % wall_ms]
            writer.writerow(row)
            log_fh.flush()
            if log_hook:
                log_hook(plan.name, it, total.item())
        if cfg.checkpoint_every and it % cfg.checkpoint_every == 0 and it < plan.iters:
            nn.save_checkpoint(
                out / ("%s_it%06d.lnwt" % (plan.name, it)),
                params,
                _meta(model.cfg, plan.name, it),
            )

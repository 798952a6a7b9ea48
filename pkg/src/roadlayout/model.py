"""Layout estimation networks: per-frame, recurrent, and warp-composed variants.

All three share the same trunk: a single stem convolution lifts the input map
into feature space, a seven-layer encoder (six 3x3 convolutions, stride 2 on
every second one, then a flatten-projection) produces a 128-wide frame code,
and a three-headed MLP scores the 14 binary flags, the two 7-way lane counts,
and 100 regression bins per continuous attribute.

The recurrent variant threads an LSTM (hidden size = frame-code size) over
the per-frame codes. The full variant additionally warps the previous frame's
stem features along the pose-derived displacement field and blends them with
the current ones through a learnable weight before encoding.
"""

from dataclasses import dataclass, field

import numpy as np

from . import attributes as A
from . import nn
from .nn.ops import LstmParams
from .nn.tensor import Tensor, concat, take_rows

VARIANTS = ("basic", "blstm", "full")


@dataclass
class ModelConfig:
    in_channels: int = 5
    feat_channels: int = 4
    grid_h: int = 32
    grid_w: int = 16
    hidden: int = 128
    reg_rank: int = 64  # low-rank factorization of the widest (bin-score) head
    alpha_matrix: bool = False  # blend weight per feature cell instead of scalar

    def encoded_hw(self):
        h, w = self.grid_h, self.grid_w
        for _ in range(3):  # three stride-2 stages
            h = (h + 1) // 2
            w = (w + 1) // 2
        return h, w


# (out_channels, stride) for the six encoder convolutions: stride 2 on every
# second layer, leading with the downsample so only the stem runs at full
# resolution, and channels kept lean. Both choices hold the per-step cost to
# what a single CPU core finishes in minutes while the flattened feature
# still projects to the 128-wide code.
_ENCODER_PLAN = ((10, 2), (12, 1), (14, 2), (16, 1), (20, 2), (24, 1))


class ParamStore:
    """Named parameter registry shared by all model variants."""

    def __init__(self, rng: np.random.Generator = None):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {}

    def param(self, name: str, shape, init: str = "he", scale: float = 1.0) -> nn.Parameter:
        if name in self.params:
            return self.params[name]
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "const":
            data = np.full(shape, scale)
        elif init == "eye":
            if len(shape) != 2 or shape[0] != shape[1]:
                raise ValueError("eye init needs a square matrix, got %r" % (shape,))
            data = np.eye(shape[0]) * scale
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
            if init == "he":
                std = np.sqrt(2.0 / fan_in)
            elif init == "glorot":
                std = np.sqrt(1.0 / fan_in)
            else:
                raise ValueError("unknown init %r" % init)
            data = self.rng.normal(0.0, std * scale, size=shape)
        p = nn.Parameter(name, data)
        self.params[name] = p
        return p

    def get(self, name: str) -> nn.Parameter:
        return self.params[name]

    def load_values(self, values: dict):
        """Overwrite matching parameters (and ADAM state) from a checkpoint."""
        for name, p in values.items():
            if name in self.params:
                mine = self.params[name]
                mine.tensor.data[...] = p.tensor.data
                mine.m[...] = p.m
                mine.v[...] = p.v
                mine.step = p.step
            else:
                self.params[name] = p


def _fan_in_linear(store, name, d_in, d_out):
    w = store.param(name + ".w", (d_in, d_out), "glorot")
    b = store.param(name + ".b", (d_out,), "zeros")
    return w, b


class LayoutModel:
    """Shared trunk; variant selects the temporal wiring."""

    def __init__(self, store: ParamStore, cfg: ModelConfig, variant: str):
        if variant not in VARIANTS:
            raise ValueError("unknown variant %r" % variant)
        self.store = store
        self.cfg = cfg
        self.variant = variant
        self._build()

    def _build(self):
        cfg = self.cfg
        s = self.store
        s.param("gi.conv.w", (cfg.feat_channels, cfg.in_channels, 3, 3))
        s.param("gi.conv.b", (cfg.feat_channels,), "zeros")
        c_in = cfg.feat_channels
        for k, (c_out, _) in enumerate(_ENCODER_PLAN):
            s.param("gj.conv%d.w" % k, (c_out, c_in, 3, 3))
            s.param("gj.conv%d.b" % k, (c_out,), "zeros")
            c_in = c_out
        eh, ew = cfg.encoded_hw()
        self.enc_flat = c_in * eh * ew
        _fan_in_linear(s, "gj.fc", self.enc_flat, cfg.hidden)
        _fan_in_linear(s, "head.shared", cfg.hidden, cfg.hidden)
        _fan_in_linear(s, "head.bin", cfg.hidden, A.N_BINARY)
        _fan_in_linear(s, "head.mc", cfg.hidden, A.N_MULTICLASS * (A.MAX_LANES_PER_SIDE + 1))
        # The bin-score head is by far the widest output (22 attributes * 100
        # bins); factoring it through a low-rank middle keeps its parameter
        # count (and the optimizer's memory traffic) proportionate.
        _fan_in_linear(s, "head.regmid", cfg.hidden, cfg.reg_rank)
        _fan_in_linear(s, "head.reg", cfg.reg_rank, A.N_CONTINUOUS * A.N_BINS)
        if self.variant in ("blstm", "full"):
            h = cfg.hidden
            # Near-pass-through start: the candidate path opens as a scaled
            # identity and the gates sit at fixed openings, so at the stage
            # handoff the cell approximately reproduces its input code and the
            # pre-trained heads keep their calibration. The candidate scale
            # leans against the double tanh squashing for codes in (-1, 1);
            # all temporal mixing is learned from zero-initialized couplings.
            gate_bias = {"i": 2.0, "f": -1.0, "g": 0.0, "o": 2.0}
            for gate in LstmParams.GATES:
                if gate == "g":
                    s.param("lstm.wx%s.w" % gate, (h, h), "eye", scale=1.15)
                else:
                    s.param("lstm.wx%s.w" % gate, (h, h), "zeros")
                s.param("lstm.wh%s.w" % gate, (h, h), "zeros")
                s.param("lstm.b%s" % gate, (h,), "const", scale=gate_bias[gate])
        if self.variant == "full":
            shape = (cfg.grid_h, cfg.grid_w) if cfg.alpha_matrix else ()
            s.param("ftm.alpha", shape, "const", scale=0.5)

    def parameters(self):
        """Parameters the current variant actually uses, in a stable order."""
        names = ["gi.conv.w", "gi.conv.b"]
        for k in range(len(_ENCODER_PLAN)):
            names += ["gj.conv%d.w" % k, "gj.conv%d.b" % k]
        names += ["gj.fc.w", "gj.fc.b", "head.shared.w", "head.shared.b",
                  "head.bin.w", "head.bin.b", "head.mc.w", "head.mc.b",
                  "head.regmid.w", "head.regmid.b", "head.reg.w", "head.reg.b"]
        if self.variant in ("blstm", "full"):
            for gate in LstmParams.GATES:
                names += ["lstm.wx%s.w" % gate, "lstm.wh%s.w" % gate, "lstm.b%s" % gate]
        if self.variant == "full":
            names.append("ftm.alpha")
        return [self.store.get(n) for n in names]

    # Trunk pieces -----------------------------------------------------------

    def stem(self, x: Tensor) -> Tensor:
        """g_i: one padded conv + relu, keeps the spatial grid."""
        s = self.store
        return nn.conv2d(x, s.get("gi.conv.w").tensor, s.get("gi.conv.b").tensor,
                         stride=1, padding=1).relu()

    def encode(self, feat: Tensor) -> Tensor:
        """g_j: six convs (relu on the first five) then flatten-projection.

        The code is squashed into (-1, 1); a bounded code space keeps the
        recurrent stage's tanh cell close to linear over the values it sees,
        so the later stages start from the calibration stage one learned.
        """
        s = self.store
        out = feat
        for k, (_, stride) in enumerate(_ENCODER_PLAN):
            out = nn.conv2d(out, s.get("gj.conv%d.w" % k).tensor,
                            s.get("gj.conv%d.b" % k).tensor, stride=stride, padding=1)
            if k < len(_ENCODER_PLAN) - 1:
                out = out.relu()
        n = out.data.shape[0]
        flat = out.reshape(n, self.enc_flat)
        return nn.linear(flat, s.get("gj.fc.w").tensor, s.get("gj.fc.b").tensor).tanh()

    def heads(self, code: Tensor):
        """Three-headed MLP on the frame code."""
        s = self.store
        hid = nn.linear(code, s.get("head.shared.w").tensor, s.get("head.shared.b").tensor).relu()
        n = code.data.shape[0]
        logits_bin = nn.linear(hid, s.get("head.bin.w").tensor, s.get("head.bin.b").tensor)
        logits_mc = nn.linear(hid, s.get("head.mc.w").tensor, s.get("head.mc.b").tensor)
        reg_mid = nn.linear(hid, s.get("head.regmid.w").tensor, s.get("head.regmid.b").tensor)
        logits_reg = nn.linear(reg_mid, s.get("head.reg.w").tensor, s.get("head.reg.b").tensor)
        return (
            logits_bin,
            logits_mc.reshape(n, A.N_MULTICLASS, A.MAX_LANES_PER_SIDE + 1),
            logits_reg.reshape(n, A.N_CONTINUOUS, A.N_BINS),
        )

    def lstm_params(self) -> LstmParams:
        s = self.store
        tensors = {}
        for gate in LstmParams.GATES:
            tensors["wx" + gate] = s.get("lstm.wx%s.w" % gate).tensor
            tensors["wh" + gate] = s.get("lstm.wh%s.w" % gate).tensor
            tensors["b" + gate] = s.get("lstm.b%s" % gate).tensor
        return LstmParams(tensors)

    def compose(self, current: Tensor, warped: Tensor) -> Tensor:
        """Blend current features with warped previous ones: a*F_t + (1-a)*W."""
        alpha = self.store.get("ftm.alpha").tensor
        return alpha * current + (1.0 - alpha) * warped

    # Forward passes ---------------------------------------------------------

    def forward_frames(self, frames: np.ndarray):
        """Independent per-frame pass: (N, C, H, W) -> head logits."""
        x = Tensor(frames)
        return self.heads(self.encode(self.stem(x)))

    def forward_sequence(self, seqs: np.ndarray, fields: np.ndarray = None):
        """(B, T, C, H, W) [+ (B, T-1, h, w, 2) fields] -> logits over T*B frames.

        Output rows are time-major: frame t of sequence b sits at row t*B + b.
        """
        b, t, c, h, w = seqs.shape
        tm = np.ascontiguousarray(seqs.transpose(1, 0, 2, 3, 4)).reshape(t * b, c, h, w)
        feats = self.stem(Tensor(tm))

        if self.variant == "basic":
            return self.heads(self.encode(feats))

        if self.variant == "full":
            if fields is None:
                raise ValueError("full variant needs displacement fields")
            if fields.shape[:2] != (b, t - 1):
                raise ValueError(
                    "fields shape %s does not match batch (%d, %d)"
                    % (fields.shape, b, t - 1)
                )
            # One batched warp: time-major rows 0..(t-1)*b hold every frame's
            # predecessor, and the matching fields stack the same way.
            prev = take_rows(feats, 0, (t - 1) * b)
            fields_tm = np.ascontiguousarray(
                fields.transpose(1, 0, 2, 3, 4)
            ).reshape(((t - 1) * b,) + fields.shape[2:])
            warped = nn.bilinear_sample_nchw(prev, fields_tm)
            composed = self.compose(take_rows(feats, b, t * b), warped)
            feats = concat([take_rows(feats, 0, b), composed], axis=0)

        codes = self.encode(feats)  # (T*B, hidden)
        params = self.lstm_params()
        hidden = Tensor(np.zeros((b, self.cfg.hidden)))
        cell = Tensor(np.zeros((b, self.cfg.hidden)))
        outs = []
        for k in range(t):
            step = take_rows(codes, k * b, (k + 1) * b)
            hidden, cell = nn.lstm_cell(step, hidden, cell, params)
            outs.append(hidden)
        return self.heads(concat(outs, axis=0))


@dataclass
class FrameTargets:
    """Training targets for a block of frames."""

    binary: np.ndarray      # (N, 14) float 0/1
    lane_counts: np.ndarray  # (N, 2) int
    reg_bins: np.ndarray    # (N, 22, N_BINS)


def loss_terms(logits, targets: FrameTargets, frames_per_sample: int = 1):
    """BCE + CE + L1, summed over a sample's frames (mean over the batch).

    The mean-reduced terms are scaled by frames_per_sample, which equals the
    per-video frame count for sequence batches and 1 for frame batches.
    """
    logits_bin, logits_mc, logits_reg = logits
    bce = nn.bce_with_logits(logits_bin, targets.binary)
    ce = nn.ce_with_logits(logits_mc, targets.lane_counts)
    l1 = nn.l1_loss(nn.softmax(logits_reg, axis=-1), targets.reg_bins)
    scale = float(frames_per_sample)
    total = (bce + ce + l1) * Tensor(scale)
    return total, (scale * bce.item(), scale * ce.item(), scale * l1.item())


def decode_logits(logits_bin, logits_mc, logits_reg):
    """Hard attribute decode for a block of frames.

    Returns (binary bool (N,14), lane counts (N,2), continuous argmax (N,22),
    continuous expectation (N,22)).
    """
    zb = logits_bin if isinstance(logits_bin, np.ndarray) else logits_bin.data
    zm = logits_mc if isinstance(logits_mc, np.ndarray) else logits_mc.data
    zr = logits_reg if isinstance(logits_reg, np.ndarray) else logits_reg.data
    binary = zb > 0.0  # sigmoid(z) > 0.5
    lanes = zm.argmax(axis=2)
    n = zr.shape[0]
    shifted = zr - zr.max(axis=2, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=2, keepdims=True)
    cont_argmax = np.zeros((n, A.N_CONTINUOUS))
    cont_expect = np.zeros((n, A.N_CONTINUOUS))
    for i in range(A.N_CONTINUOUS):
        lo, hi = A.CONTINUOUS_RANGES[i]
        centers = A.bin_centers(lo, hi)
        cont_argmax[:, i] = centers[probs[:, i].argmax(axis=1)]
        cont_expect[:, i] = probs[:, i] @ centers
    return binary, lanes, cont_argmax, cont_expect


def attrs_from_decoded(binary_row, lanes_row, cont_row) -> A.SceneAttributes:
    return A.SceneAttributes(
        tuple(bool(v) for v in binary_row),
        tuple(int(v) for v in lanes_row),
        tuple(float(v) for v in cont_row),
    )

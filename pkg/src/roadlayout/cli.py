"""Command-line entry points: synth, train, eval, render, warp-demo, report.

Every command that produces an output directory drops a config.resolved.json
there so runs are reproducible from the artifacts alone. LAYOUT_THREADS caps
worker threads during dataset emission.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import attributes as A
from . import metrics as M
from .grid import GridSpec, TopViewMap
from .model import (
    VARIANTS,
    LayoutModel,
    ModelConfig,
    ParamStore,
    attrs_from_decoded,
    decode_logits,
)
from .nn import Tensor, bilinear_sample, load_checkpoint
from .render import render, save_png
from .synth import (
    SynthConfig,
    build_train_data,
    displacement_fields,
    emit_dataset,
    evolve_sequence,
    load_dataset,
    sample_attributes,
)
from .train import TrainConfig, train_staged


def _write_resolved(out_dir: str, payload: dict):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved.json"), "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _parse_grid(text: str) -> GridSpec:
    try:
        h, w = text.lower().split("x")
        return GridSpec(int(h), int(w))
    except Exception:
        raise SystemExit("expected --grid HxW (e.g. 32x16), got %r" % text)


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


# synth -----------------------------------------------------------------------


def cmd_synth(args) -> int:
    overrides = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.grid is not None:
        g = _parse_grid(args.grid)
        overrides["grid_h"], overrides["grid_w"] = g.height_px, g.width_px
    cfg = SynthConfig.from_dict(overrides)
    manifest = emit_dataset(cfg, args.out)
    _write_resolved(args.out, {"command": "synth", "config": cfg.to_dict()})
    print(
        "wrote %d train + %d test sequences to %s (hash %s)"
        % (cfg.n_train, cfg.n_test, args.out, manifest["config_hash"][:12])
    )
    return 0


# train -----------------------------------------------------------------------


def cmd_train(args) -> int:
    overrides = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.alpha_matrix:
        overrides["alpha_matrix"] = True
    cfg = TrainConfig(**overrides)
    records, manifest = load_dataset(args.data, "train")
    grid = GridSpec(*manifest["grid"])
    difficulty = None
    if not args.no_augment:
        difficulty = SynthConfig.from_dict(manifest["config"]).difficulty
    data = build_train_data(records, grid, difficulty=difficulty)
    model_cfg = ModelConfig(
        grid_h=grid.height_px, grid_w=grid.width_px, alpha_matrix=cfg.alpha_matrix
    )
    _write_resolved(
        args.out,
        {
            "command": "train",
            "config": cfg.__dict__,
            "data": os.path.abspath(args.data),
            "variant": args.variant,
        },
    )
    store = train_staged(
        data, model_cfg, cfg, args.out, upto=args.variant, resume=args.resume
    )
    del store
    print("training complete; checkpoints in %s" % args.out)
    return 0


# eval ------------------------------------------------------------------------


def _model_from_checkpoint(path):
    params, meta = load_checkpoint(path)
    grid_meta = meta.get("grid")
    if grid_meta is None:
        raise SystemExit("checkpoint %s carries no grid metadata" % path)
    gh, gw = int(grid_meta.ravel()[0]), int(grid_meta.ravel()[1])
    variant = VARIANTS[int(meta["variant"].ravel()[0])]
    cfg = ModelConfig(
        in_channels=int(meta["in_channels"].ravel()[0]),
        grid_h=gh,
        grid_w=gw,
        alpha_matrix=bool(int(meta.get("alpha_matrix", np.zeros(1)).ravel()[0])),
    )
    store = ParamStore(np.random.default_rng(0))
    model = LayoutModel(store, cfg, variant)
    store.load_values(params)
    return model, cfg, variant


def _predict_records(model, records, grid, clean=False, batch=16):
    """Decoded per-frame attributes for every sequence."""
    preds = []
    for lo in range(0, len(records), batch):
        chunk = records[lo : lo + batch]
        data = build_train_data(chunk, grid)
        inputs = data.inputs
        if clean:
            clean_in = inputs.copy()  # keep the object channel
            for i, rec in enumerate(chunk):
                clean_in[i, :, : rec.gt.shape[3]] = np.moveaxis(rec.gt, 3, 1)
            inputs = clean_in
        b, t = inputs.shape[:2]
        fields = data.fields if model.variant == "full" else None
        logits_bin, logits_mc, logits_reg = model.forward_sequence(inputs, fields)
        dec_b, dec_m, dec_c, _ = decode_logits(logits_bin, logits_mc, logits_reg)
        for i in range(b):
            seq = []
            for ft in range(t):
                row = ft * b + i  # time-major layout
                seq.append(attrs_from_decoded(dec_b[row], dec_m[row], dec_c[row]))
            preds.append(seq)
    return preds


def cmd_eval(args) -> int:
    model, cfg, variant = _model_from_checkpoint(args.checkpoint)
    records, manifest = load_dataset(args.data, args.split)
    gh, gw = manifest["grid"]
    if (cfg.grid_h, cfg.grid_w) != (gh, gw):
        print(
            "grid mismatch: checkpoint %dx%d vs dataset %dx%d"
            % (cfg.grid_h, cfg.grid_w, gh, gw),
            file=sys.stderr,
        )
        return 1
    grid = GridSpec(gh, gw)
    preds = _predict_records(model, records, grid, clean=args.clean)
    gts = [rec.attrs for rec in records]
    report = M.compute_report(preds, gts, grid)

    os.makedirs(args.out, exist_ok=True)
    _write_resolved(
        args.out,
        {
            "command": "eval",
            "checkpoint": os.path.abspath(args.checkpoint),
            "data": os.path.abspath(args.data),
            "split": args.split,
            "clean": bool(args.clean),
            "variant": variant,
        },
    )
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(args.out, "predictions.jsonl"), "w") as fh:
        for i, seq in enumerate(preds):
            name = manifest[args.split][i]
            for t, at in enumerate(seq):
                fh.write(
                    '{"sequence": %s, "frame": %d, "attrs": %s}\n'
                    % (json.dumps(name), t, at.to_json())
                )

    # Self-check: metrics recomputed from the written predictions must match.
    reread = []
    with open(os.path.join(args.out, "predictions.jsonl")) as fh:
        cur = []
        for line in fh:
            obj = json.loads(line)
            if obj["frame"] == 0 and cur:
                reread.append(cur)
                cur = []
            cur.append(A.SceneAttributes.from_json(json.dumps(obj["attrs"])))
        if cur:
            reread.append(cur)
    if M.compute_report(reread, gts, grid).to_json() != report.to_json():
        print("metrics recomputation mismatch after serialization", file=sys.stderr)
        return 1

    print(
        "accu_bi=%.4f accu_mc=%.4f f1_bi=%.4f mse=%.5f iou=%.4f sem=%.4f temp=%.4f"
        % (
            report.accu_bi,
            report.accu_mc,
            report.f1_bi,
            report.mse,
            report.iou_mean,
            report.semantic_consistency,
            report.temporal_consistency,
        )
    )
    failed = []
    if args.threshold_f1 is not None and report.f1_bi < args.threshold_f1:
        failed.append("f1_bi %.4f < %.4f" % (report.f1_bi, args.threshold_f1))
    if args.threshold_iou is not None and report.iou_mean < args.threshold_iou:
        failed.append("iou %.4f < %.4f" % (report.iou_mean, args.threshold_iou))
    if failed:
        for msg in failed:
            print("threshold not met: " + msg, file=sys.stderr)
        return 2
    return 0


# render ----------------------------------------------------------------------


def cmd_render(args) -> int:
    if args.attrs:
        with open(args.attrs) as fh:
            attrs = A.SceneAttributes.from_json(fh.read())
    else:
        rng = np.random.default_rng(args.seed or 0)
        attrs = sample_attributes(rng)
    grid = _parse_grid(args.grid) if args.grid else GridSpec()
    tv = render(attrs, grid)
    save_png(tv, args.out, scale=args.scale)
    if args.dump_attrs:
        with open(args.dump_attrs, "w") as fh:
            fh.write(attrs.to_json())
    print("rendered %dx%d layout to %s" % (grid.height_px, grid.width_px, args.out))
    return 0


# warp-demo -------------------------------------------------------------------


def cmd_warp_demo(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    grid = _parse_grid(args.grid) if args.grid else GridSpec(32, 16)
    cfg = SynthConfig(seed=args.seed or 0, frames=2, grid_h=grid.height_px,
                      grid_w=grid.width_px, aligned_motion=True)
    attrs0 = sample_attributes(rng, curved_ok=False)
    attrs0 = attrs0.replace_continuous(A.C_ROTATION, 0.0)
    attrs, poses = evolve_sequence(attrs0, 2, cfg, rng)
    prev = render(attrs[0], grid)
    cur = render(attrs[1], grid)
    field = displacement_fields(poses, grid)[0]
    warped = bilinear_sample(Tensor(prev.data), field).data

    os.makedirs(args.out, exist_ok=True)
    _write_resolved(args.out, {"command": "warp-demo", "seed": args.seed or 0,
                               "grid": [grid.height_px, grid.width_px]})
    save_png(prev, os.path.join(args.out, "frame0.png"), scale=args.scale)
    save_png(cur, os.path.join(args.out, "frame1.png"), scale=args.scale)
    save_png(TopViewMap(grid, warped), os.path.join(args.out, "warped.png"),
             scale=args.scale)
    valid = (cur.data.sum(axis=2) > 0) & (warped.sum(axis=2) > 0)
    agree = float(
        (cur.data.argmax(axis=2) == warped.argmax(axis=2))[valid].mean()
    ) if valid.any() else 0.0
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump({"agreement_on_overlap": agree}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print("warp demo in %s (overlap agreement %.4f)" % (args.out, agree))
    return 0


# report ----------------------------------------------------------------------


def cmd_report(args) -> int:
    rows = []
    for path in args.metrics:
        rep = M.MetricsReport.from_json(open(path).read())
        rows.append((path, rep))
    header = "%-40s %8s %8s %8s %9s %8s %8s %8s" % (
        "metrics", "accu_bi", "accu_mc", "f1_bi", "mse", "iou", "sem", "temp"
    )
    print(header)
    for path, rep in rows:
        print(
            "%-40s %8.4f %8.4f %8.4f %9.5f %8.4f %8.4f %8.4f"
            % (
                path if len(path) <= 40 else "..." + path[-37:],
                rep.accu_bi,
                rep.accu_mc,
                rep.f1_bi,
                rep.mse,
                rep.iou_mean,
                rep.semantic_consistency,
                rep.temporal_consistency,
            )
        )
    if args.out:
        with open(args.out, "w") as fh:
            for i, (path, rep) in enumerate(rows):
                lines = rep.to_csv().splitlines()
                if i == 0:
                    fh.write("source," + lines[0] + "\n")
                fh.write(json.dumps(path) + "," + lines[1] + "\n")
        print("combined CSV written to %s" % args.out)
    return 0


# parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="roadlayout",
        description="Parametric road-layout estimation: data, training, evaluation.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic dataset")
    ps.add_argument("--config", help="JSON file with generator settings")
    ps.add_argument("--seed", type=int)
    ps.add_argument("--grid", help="grid as HxW, e.g. 32x16")
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_synth)

    pt = sub.add_parser("train", help="train a model on a dataset")
    pt.add_argument("--data", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--variant", choices=VARIANTS, default="full")
    pt.add_argument("--seed", type=int)
    pt.add_argument("--config", help="JSON file with training settings")
    pt.add_argument("--resume", help="checkpoint to resume from")
    pt.add_argument("--no-augment", action="store_true",
                    help="train on the stored degraded inputs only")
    pt.add_argument("--alpha-matrix", action="store_true",
                    help="per-cell fusion weights instead of a scalar")
    pt.set_defaults(func=cmd_train)

    pe = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    pe.add_argument("--data", required=True)
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--out", required=True)
    pe.add_argument("--split", choices=("train", "test"), default="test")
    pe.add_argument("--clean", action="store_true",
                    help="feed ground-truth maps instead of degraded inputs")
    pe.add_argument("--threshold-f1", type=float)
    pe.add_argument("--threshold-iou", type=float)
    pe.set_defaults(func=cmd_eval)

    pr = sub.add_parser("render", help="render one layout to a PNG")
    pr.add_argument("--attrs", help="attribute JSON file; omit to sample one")
    pr.add_argument("--seed", type=int)
    pr.add_argument("--grid", help="grid as HxW")
    pr.add_argument("--scale", type=int, default=8)
    pr.add_argument("--out", required=True)
    pr.add_argument("--dump-attrs", help="also write the attributes JSON here")
    pr.set_defaults(func=cmd_render)

    pw = sub.add_parser("warp-demo", help="show ground-plane warping between frames")
    pw.add_argument("--seed", type=int)
    pw.add_argument("--grid", help="grid as HxW")
    pw.add_argument("--scale", type=int, default=8)
    pw.add_argument("--out", required=True)
    pw.set_defaults(func=cmd_warp_demo)

    pp = sub.add_parser("report", help="summarize metrics.json files")
    pp.add_argument("metrics", nargs="+")
    pp.add_argument("--out", help="write a combined CSV here")
    pp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

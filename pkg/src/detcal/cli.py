"""Command-line front end.

Subcommands::

    detcal eval       --dets D.json --annotations A.json [-o report.json]
    detcal calibrate  --val-dets V.json --val-annotations VA.json
                      --test-dets T.json --test-annotations TA.json
    detcal tcd-eval   --batch B.json|B.tcb [--grads]
    detcal ict        --mc M.json [--annotations A.json]
    detcal synth      --dets OUT.json --annotations OUT_ANN.json --n 100000

Reports are JSON by default (``--format csv`` for flat tables); identical
inputs and flags produce byte-identical report files. ``--svg PATH``
additionally renders the reliability diagram as a static bar chart. Any
error exits nonzero with a single ``error: ...`` line on stderr. The
``DETCAL_THREADS`` environment variable caps worker parallelism (the
current implementation evaluates sequentially, which respects any cap).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import io as dio
from . import metrics, posthoc, synth, tcd, uncertainty
from .matching import match, scored_outcomes


class CliError(Exception):
    pass


def _thread_cap() -> int | None:
    raw = os.environ.get("DETCAL_THREADS")
    if raw is None:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise CliError(f"DETCAL_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise CliError(f"DETCAL_THREADS must be >= 1, got {cap}")
    return cap


def _emit(payload, args) -> None:
    if getattr(args, "output", None):
        dio.write_report(args.output, payload, format=args.format)
    else:
        text = (
            dio._dump_json(payload)
            if args.format == "json"
            else dio._to_csv(payload)
        )
        sys.stdout.write(text)


def _match_pairs(dets_path, ann_path, gamma, min_score):
    dets = dio.load_coco_detections(dets_path)
    if not dets:
        raise CliError(f"no detections in {dets_path}")
    annotations = dio.load_coco_annotations(ann_path)
    bundle = dio.DatasetBundle.build(dets, annotations, source=dets_path)
    results = match(bundle.detections, bundle.ground_truth, gamma, min_score=min_score)
    return bundle, results, scored_outcomes(bundle.detections, results)


def cmd_eval(args) -> int:
    _, results, pairs = _match_pairs(args.dets, args.annotations, args.gamma, args.min_score)
    value, table = metrics.d_ece(pairs, args.bins)
    payload = {
        "metric": "d_ece",
        "d_ece": value,
        "detections": len(results),
        "gamma": args.gamma,
        "bins": args.bins,
        "min_score": args.min_score,
        "reliability": metrics.reliability_records(table),
    }
    if args.format == "csv":
        _emit(metrics.reliability_records(table), args)
    else:
        _emit(payload, args)
    if args.svg:
        dio._atomic_write_text(args.svg, reliability_svg(metrics.reliability_data(table)))
    return 0


def cmd_calibrate(args) -> int:
    _, _, val_pairs = _match_pairs(
        args.val_dets, args.val_annotations, args.gamma, args.min_score
    )
    objective = {"nll": "nll", "dece": "d_ece"}[args.objective]
    model = posthoc.fit_temperature(val_pairs, objective=objective, bins=args.bins)

    _, _, test_pairs = _match_pairs(
        args.test_dets, args.test_annotations, args.gamma, args.min_score
    )
    before, _ = metrics.d_ece(test_pairs, args.bins)
    scaled = model.apply_all([s for s, _ in test_pairs])
    after, _ = metrics.d_ece(
        [(float(s), u) for s, (_, u) in zip(scaled, test_pairs)], args.bins
    )
    payload = {
        "temperature": model.temperature,
        "objective": args.objective,
        "bins": args.bins,
        "gamma": args.gamma,
        "d_ece_before": before,
        "d_ece_after": after,
        "test_detections": len(test_pairs),
    }
    if args.model_out:
        dio._atomic_write_text(args.model_out, model.to_json())
    _emit(payload, args)
    return 0


def cmd_tcd_eval(args) -> int:
    batch = dio.load_tcd_batch(args.batch)
    result = tcd.tcd_loss(batch)
    payload = {
        "loss": result.loss,
        "d_cls": result.d_cls,
        "d_det": result.d_det,
    }
    if args.grads:
        payload["grad_s"] = [float(v) for v in result.grad_s.ravel()]
        payload["grad_shat"] = [[float(v) for v in g] for g in result.grad_shat]
        payload["grad_iou"] = [[float(v) for v in g] for g in result.grad_iou]
    _emit(payload, args)
    return 0


def cmd_ict(args) -> int:
    mc = dio.load_mc_passes(args.mc)
    mode = {"combined": "combined", "within": "within_only"}[args.mode]
    result = uncertainty.ict_pipeline(
        mc.passes,
        gamma=args.gamma,
        kappa1=args.kappa1,
        kappa2=args.kappa2,
        mode=mode,
        image_width=mc.width,
        image_height=mc.height,
    )
    payload = {
        "image_id": mc.image_id,
        "mode": args.mode,
        "gamma": args.gamma,
        "kappa1": args.kappa1,
        "kappa2": args.kappa2,
        "targets": [
            {
                "anchor": list(t.anchor),
                "class": t.class_id,
                "sbar": t.sbar,
                "u": t.u,
                "value": t.value,
                "status": t.status,
            }
            for t in result.targets
        ],
        "anchors": [
            {
                "anchor": list(a.anchor),
                "class": a.class_id,
                "sbar": a.sbar,
                "u": a.u,
                "status": a.status,
            }
            for a in result.anchors
        ],
    }
    if args.annotations:
        annotations = dio.load_coco_annotations(args.annotations)
        anchor_dets = _anchor_detections(mc, result)
        results = match(anchor_dets, annotations.ground_truth, args.gamma)
        errors = [metrics.detection_error(r) for r in results]
        value, _ = metrics.d_uce(result.uncertainty_pairs(errors), args.bins)
        payload["d_uce"] = value
    _emit(payload, args)
    return 0


def _anchor_detections(mc: dio.McPassFile, result):
    by_index = {p.index: p for p in mc.passes}
    return [by_index[n].detections[m] for n, m in (a.anchor for a in result.anchors)]


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        n_detections=args.n,
        classes=args.classes,
        curve=synth.Curve.parse(args.curve),
        alpha=args.alpha,
        beta=args.beta,
        score_lo=args.score_min,
        score_hi=args.score_max,
        seed=args.seed,
    )
    result = synth.generate(spec)
    dio.write_coco_detections(args.dets, result.detections, metadata=result.metadata)
    dio.write_coco_annotations(
        args.annotations,
        result.ground_truth,
        result.categories,
        result.image_dims,
        metadata=result.metadata,
    )
    sys.stdout.write(
        f"wrote {len(result.detections)} detections and "
        f"{len(result.ground_truth)} ground-truth boxes\n"
    )
    return 0


def reliability_svg(records, width: int = 640, height: int = 400) -> str:
    """Self-contained reliability bar chart: outcome bars, gap overlays,
    and the identity diagonal."""
    pad = 40
    plot_w = width - 2 * pad
    plot_h = height - 2 * pad

    def sx(v: float) -> float:
        return pad + v * plot_w

    def sy(v: float) -> float:
        return height - pad - v * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{sx(0):.1f}" y1="{sy(0):.1f}" x2="{sx(1):.1f}" y2="{sy(1):.1f}" '
        'stroke="#888" stroke-dasharray="4,3"/>',
    ]
    for r in records:
        x0, x1 = sx(r.bin_lo), sx(r.bin_hi)
        bar_w = (x1 - x0) * 0.9
        x = x0 + (x1 - x0 - bar_w) / 2
        if r.count:
            top = sy(r.mean_outcome)
            parts.append(
                f'<rect x="{x:.1f}" y="{top:.1f}" width="{bar_w:.1f}" '
                f'height="{sy(0) - top:.1f}" fill="#4878d0" fill-opacity="0.8"/>'
            )
            lo, hi = sorted((r.mean_outcome, r.mean_conf))
            parts.append(
                f'<rect x="{x:.1f}" y="{sy(hi):.1f}" width="{bar_w:.1f}" '
                f'height="{sy(lo) - sy(hi):.1f}" fill="#d65f5f" fill-opacity="0.5"/>'
            )
    parts.append(
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        'stroke="black"/>'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _common_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output", "-o", help="report path (stdout when omitted)")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detcal", description="Object-detection calibration toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="detection calibration error and reliability data")
    p.add_argument("--dets", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--min-score", type=float, default=0.0)
    p.add_argument("--svg", help="write a reliability diagram to this path")
    _common_output_flags(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("calibrate", help="fit temperature scaling on a hold-out split")
    p.add_argument("--val-dets", required=True)
    p.add_argument("--val-annotations", required=True)
    p.add_argument("--test-dets", required=True)
    p.add_argument("--test-annotations", required=True)
    p.add_argument("--objective", choices=("nll", "dece"), default="nll")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--min-score", type=float, default=0.0)
    p.add_argument("--model-out", help="write the fitted model JSON here")
    _common_output_flags(p)
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("tcd-eval", help="evaluate the calibration loss on a batch file")
    p.add_argument("--batch", required=True)
    p.add_argument("--grads", action="store_true", help="include gradients")
    _common_output_flags(p)
    p.set_defaults(handler=cmd_tcd_eval)

    p = sub.add_parser("ict", help="soft pseudo-targets from MC-dropout passes")
    p.add_argument("--mc", required=True)
    p.add_argument("--annotations", help="optional ground truth for an uncertainty error report")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--kappa1", type=float, default=0.75)
    p.add_argument("--kappa2", type=float, default=0.5)
    p.add_argument("--mode", choices=("combined", "within"), default="combined")
    p.add_argument("--bins", type=int, default=10)
    _common_output_flags(p)
    p.set_defaults(handler=cmd_ict)

    p = sub.add_parser("synth", help="generate a synthetic detector benchmark")
    p.add_argument("--dets", required=True, help="output detections path")
    p.add_argument("--annotations", required=True, help="output annotations path")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--classes", type=int, default=1)
    p.add_argument("--curve", default="identity", help="identity | gap:D | temperature:T")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--score-min", type=float, default=0.0)
    p.add_argument("--score-max", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _thread_cap()
        return args.handler(args)
    except (CliError, ValueError, OSError) as exc:
        # ParseError and JSON decode errors are ValueErrors; one line, exit 2
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())

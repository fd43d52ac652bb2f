"""Command-line harness: ``cbinfer {synth,init-net,run,calibrate,sweep,analyze-prop}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .calibration import DEFAULT_BUDGET, pixel_disagreement
from .errors import GeometryError, LoadError, ShapeError
from .network import (
    Network,
    NetworkSpec,
    demo_spec,
    fit_head,
    init_weights,
    load_network,
    save_weights,
)
from .synth import Sprite, SynthConfig, load_sequence, synth_generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text}") from exc


def _ints(text: str) -> list[int]:
    return [int(v) for v in _floats(text)]


def _sprite(text: str) -> Sprite:
    # size:vy:vx:intensity[:y0:x0]
    parts = text.split(":")
    if len(parts) not in (4, 6):
        raise argparse.ArgumentTypeError(f"sprite must be size:vy:vx:intensity[:y0:x0], got {text}")
    size, vy, vx = (int(p) for p in parts[:3])
    start = (int(parts[4]), int(parts[5])) if len(parts) == 6 else None
    return Sprite(size, (vy, vx), float(parts[3]), start)


def _load(args, engine="cbinfer"):
    spec = NetworkSpec.load(args.net)
    net = load_network(spec, args.weights or Path(args.net).parent, engine=engine)
    if args.thresholds is not None:
        net.set_thresholds(args.thresholds)
    return net


def _scaled(net, factor):
    if factor != 1.0:
        net.set_thresholds([factor * t for t in net.thresholds])
    return net


def cmd_synth(args) -> int:
    if args.config:
        cfg = SynthConfig.from_json(json.loads(Path(args.config).read_text()))
    else:
        cfg = SynthConfig(args.height, args.width, args.channels, args.frames,
                          args.sprite or [], args.noise, args.seed)
    manifest = synth_generate(cfg, args.out)
    print(f"wrote {manifest['frames']} frames to {args.out}")
    return EXIT_OK


def cmd_init_net(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = demo_spec(args.channels, args.height, args.width, tuple(args.widths), args.kernel,
                     args.pool, args.classes, args.thresholds)
    net = Network(spec, init_weights(spec, args.seed), engine="baseline")
    if args.fit_seq:
        seq = load_sequence(args.fit_seq)
        if seq.labels is None:
            raise LoadError(f"{args.fit_seq} has no labels to fit the classifier on")
        fit_head(net, seq.frames[0], seq.labels[0])
    spec.save(out / "net.json")
    save_weights(spec, net.filters, out)
    print(f"wrote {out / 'net.json'}")
    return EXIT_OK


def cmd_run(args) -> int:
    engines = ("baseline", "cbinfer") if args.engine == "both" else (args.engine,)
    nets = {"baseline": _load(args, "baseline"),
            "cbinfer": _scaled(_load(args, "cbinfer"), args.factor)}
    frames = load_sequence(args.seq[0]).frames
    rows, labels = bench.run_benchmark(nets, frames, engines)
    if args.csv:
        bench.write_csv(args.csv, rows, bench.run_fields(nets["cbinfer"]))
    if args.verify:
        worst = max(pixel_disagreement(a, b)
                    for a, b in zip(labels["baseline"], _cb_labels(nets, labels, frames)))
        if all(t == 0 for t in nets["cbinfer"].thresholds):
            if worst != 0:
                print(f"verification FAILED: labels differ on up to {worst:.4f}% of pixels")
                return EXIT_VERIFY
            print("verification passed: cbinfer labels identical to baseline")
        else:
            print(f"max disagreement vs baseline: {worst:.4f}%")
    return EXIT_OK


def _cb_labels(nets, labels, frames):
    if "cbinfer" in labels:
        return labels["cbinfer"]
    _, more = bench.run_benchmark(nets, frames, ("cbinfer",))
    return more["cbinfer"]


def cmd_calibrate(args) -> int:
    net = _load(args)
    sequences = [load_sequence(p) for p in args.seq]
    thresholds, rows = bench.calibration_rows(net, sequences, args.budget, args.grid)
    if args.csv:
        bench.write_csv(args.csv, rows, bench.CALIBRATION_FIELDS)
    text = ",".join(f"{t:.6g}" for t in thresholds)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    net = _load(args)
    sequences = [load_sequence(p) for p in args.seq]
    rows = bench.sweep_rows(net, sequences, net.thresholds, args.factors)
    if args.csv:
        bench.write_csv(args.csv, rows, bench.SWEEP_FIELDS)
    for r in rows:
        print(f"{r['sequence']} factor={r['factor']:g} err={r['errorIncrease']:.4f}% "
              f"changed={r['numChangeTotal']} fps={r['throughput']:.1f}")
    return EXIT_OK


def cmd_analyze_prop(args) -> int:
    net = _scaled(_load(args), args.factor)
    rows = bench.propagation_rows(net, load_sequence(args.seq[0]).frames)
    if args.csv:
        bench.write_csv(args.csv, rows, bench.PROPAGATION_FIELDS)
    for r in rows:
        print(f"frame {r['frame']} layer {r['layer']}: detected {r['detectedFraction']:.4%} "
              f"worst-case {r['worstCaseFraction']:.4%}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cbinfer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def net_flags(p):
        p.add_argument("--net", required=True, help="network spec JSON")
        p.add_argument("--weights", help="weights directory (default: next to --net)")
        p.add_argument("--seq", action="append", required=True,
                       help="sequence directory (repeatable)")
        p.add_argument("--csv", help="CSV output path")
        p.add_argument("--thresholds", type=_floats, help="per-CB-layer thresholds")
        p.add_argument("--factor", type=float, default=1.0, help="threshold scale factor")

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="SynthConfig JSON (overrides the flags below)")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--sprite", type=_sprite, action="append",
                   help="size:vy:vx:intensity[:y0:x0] (repeatable)")
    p.add_argument("--noise", type=float, default=0.0, help="uniform noise amplitude")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-net", help="write a demo network spec with random weights")
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--widths", type=_ints, default=[8, 16])
    p.add_argument("--kernel", type=int, default=7)
    p.add_argument("--pool", action="store_true")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--thresholds", type=_floats)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fit-seq", help="labelled sequence to fit the 1x1 classifier on")
    p.set_defaults(func=cmd_init_net)

    p = sub.add_parser("run", help="benchmark baseline and/or cbinfer on a sequence")
    net_flags(p)
    p.add_argument("--engine", choices=("baseline", "cbinfer", "both"), default="both")
    p.add_argument("--verify", action="store_true",
                   help="at zero thresholds fail unless labels match the baseline exactly")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="layer-by-layer threshold selection")
    net_flags(p)
    p.add_argument("--budget", type=float, default=DEFAULT_BUDGET,
                   help="max error increase in percentage points")
    p.add_argument("--grid", type=_floats, help="candidate thresholds for every layer")
    p.add_argument("--out", help="write the selected thresholds here")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="joint threshold-factor sweep")
    net_flags(p)
    p.add_argument("--factors", type=_floats, default=[0, 0.5, 1, 1.5, 2])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze-prop", help="detected vs worst-case change propagation")
    net_flags(p)
    p.set_defaults(func=cmd_analyze_prop)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LoadError, ShapeError, GeometryError, OSError) as exc:
        print(f"cbinfer: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"cbinfer: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

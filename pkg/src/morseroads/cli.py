"""Command-line interface.

Machine-readable results go to standard output as tab-separated fields,
diagnostics to standard error.  Exit status is 0 on success, 1 for bad
input or parameters and 2 when an internal invariant breaks.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import __version__
from .enhance import compose, detect_tips, enhance_tips, format_tips
from .errors import MorseRoadsError
from .metrics import DEFAULT_MAX, score
from .netgraph import decompose_arcs, read_graph, rasterize, write_graph
from .pipeline import PRESETS, Dataset, Pipeline, PipelineConfig, PipelineState, apply_preset, extract_graph
from .raster import load_density, load_rgb, preprocess, save_density, save_mask
from .render import write_svg
from .synthetic import write_corpus
from .topology import compute_persistence

class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 like every other input error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _preset_defaults(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--preset", choices=sorted(PRESETS))
    known, _ = pre.parse_known_args(argv)
    if known.preset is None:
        return {}
    config = apply_preset(PipelineConfig(), known.preset)
    return {k: getattr(config, k) for k in PRESETS[known.preset]}


def _add_tip_flags(p, d: PipelineConfig) -> None:
    p.add_argument("--tip-window", type=int, default=d.tip_window, help="odd side of the tip test window (px)")
    p.add_argument("--tip-high", type=float, default=d.tip_high, help="minimum density of a tip pixel")
    p.add_argument("--tip-low", type=float, default=d.tip_low, help="density counted as road on the window ring")
    p.add_argument("--tip-radius", type=float, default=d.tip_radius, help="enhancement disk radius (px)")


def _tip_params(args) -> dict:
    return dict(window=args.tip_window, t_high=args.tip_high, t_low=args.tip_low, radius=args.tip_radius)


def build_parser(preset: dict | None = None) -> argparse.ArgumentParser:
    d = PipelineConfig(**(preset or {}))
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="morseroads", description="Road-network graphs from density rasters.",
                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("reconstruct", help="extract a graph from a density raster", formatter_class=fmt)
    p.add_argument("raster", help="density raster (.pgm/.ppm/.f32grid)")
    p.add_argument("--out", required=True, help="output graph file")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None, help="parameter preset (tau uses its high value)")
    p.add_argument("--delta", type=float, default=d.delta, help="persistence threshold")
    p.add_argument("--tau", type=float, default=d.tau_high, help="arc intensity threshold; negative disables filtering")
    p.add_argument("--blur", type=float, default=0.0, help="preprocess: grayscale, blur with this sigma and normalise (0 = use raster as is)")
    p.add_argument("--tips", action="store_true", help="enhance detected tips before reconstruction")
    _add_tip_flags(p, d)

    p = sub.add_parser("score", help="compare a predicted graph with a reference", formatter_class=fmt)
    p.add_argument("gt", help="reference graph file")
    p.add_argument("pred", help="predicted graph file")
    p.add_argument("--max", type=float, default=DEFAULT_MAX, dest="max_value", help="Hausdorff value for an empty graph (px)")
    p.add_argument("--sample-step", type=float, default=1.0, help="Hausdorff sampling step along edges (px)")
    p.add_argument("--densify", type=float, default=None, help="APLS control-point spacing (px); unset = arc endpoints only")
    p.add_argument("--max-snap", type=float, default=math.inf, help="APLS snapping radius (px)")
    p.add_argument("--nodes", choices=("junctions", "all"), default="junctions", help="APLS node set")

    p = sub.add_parser("rasterize", help="draw a graph as a binary mask", formatter_class=fmt)
    p.add_argument("graph", help="graph file")
    p.add_argument("--width", type=int, required=True, help="mask width (px)")
    p.add_argument("--height", type=int, required=True, help="mask height (px)")
    p.add_argument("--half-width", type=float, default=d.mask_half_width, help="band half width (px)")
    p.add_argument("--out", required=True, help="output .pgm mask")

    p = sub.add_parser("enhance", help="detect and enhance road tips", formatter_class=fmt)
    p.add_argument("raster", help="density raster")
    p.add_argument("--out", required=True, help="enhanced field (.f32grid or .pgm)")
    p.add_argument("--layer", action="append", default=[], help="extra density layer to add before clamping (repeatable)")
    p.add_argument("--tips-out", default=None, help="write detected tips as 'x y' lines")
    _add_tip_flags(p, d)

    p = sub.add_parser("persistence", help="print the max-saddle persistence pairs", formatter_class=fmt)
    p.add_argument("raster", help="density raster")

    p = sub.add_parser("render", help="SVG of graphs over a raster", formatter_class=fmt)
    p.add_argument("raster", help="density raster")
    p.add_argument("graphs", nargs="*", help="graph files, drawn in order")
    p.add_argument("--out", required=True, help="output .svg")
    p.add_argument("--stroke-width", type=float, default=2.0, help="polyline width (px)")

    p = sub.add_parser("synth", help="write a synthetic image/graph corpus", formatter_class=fmt)
    p.add_argument("out", help="output directory")
    p.add_argument("--n", type=int, default=20, help="number of scenes")
    p.add_argument("--size", type=int, default=160, help="image side (px)")
    p.add_argument("--seed", type=int, default=0, help="random seed")

    p = sub.add_parser("pipeline", help="run the self-training loop", formatter_class=fmt)
    p.add_argument("data", help="dataset directory with images/ and optional graphs/")
    p.add_argument("--workdir", required=True, help="state directory (resumed if present)")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None, help="parameter preset")
    p.add_argument("--mode", choices=("semi", "label-free", "partial"), default=d.mode, help="labelling regime")
    p.add_argument("--delta", type=float, default=d.delta, help="persistence threshold")
    p.add_argument("--delta-late", type=float, default=None, help="persistence threshold from --delta-from on")
    p.add_argument("--delta-from", type=int, default=8, help="first field index using --delta-late")
    p.add_argument("--tau-high", type=float, default=d.tau_high, help="arc threshold for most images")
    p.add_argument("--tau-low", type=float, default=d.tau_low, help="arc threshold for the dimmest images")
    p.add_argument("--low-fraction", type=float, default=d.low_fraction, help="share of images getting --tau-low")
    p.add_argument("--mask-half-width", type=float, default=d.mask_half_width, help="label band half width (px)")
    p.add_argument("--iterations", type=int, default=d.iterations, help="iteration budget")
    p.add_argument("--labeled-fraction", type=float, default=d.labeled_fraction, help="partial mode: share of training images with reference labels")
    p.add_argument("--tips-from", type=int, default=d.tips_from, help="first field index with tip enhancement in labels")
    p.add_argument("--arc-filter-from", type=int, default=d.arc_filter_from, help="first field index with arc filtering in labels")
    _add_tip_flags(p, d)
    p.add_argument("--ratios", type=float, nargs=3, default=list(d.ratios), metavar=("TRAIN", "VAL", "TEST"), help="split ratios")
    p.add_argument("--seed", type=int, default=d.seed, help="random seed")
    p.add_argument("--segmenter", default=d.segmenter, help="builtin:blur, builtin:linear or an external command")
    p.add_argument("--blur-sigma", type=float, default=d.blur_sigma, help="preprocessing and builtin blur sigma")
    p.add_argument("--timeout", type=float, default=None, help="segmenter timeout per call (s)")
    p.add_argument("--epsilon", type=float, default=d.epsilon, help="stop when training fields change less than this")
    p.add_argument("--jobs", type=int, default=d.jobs, help="parallel workers per iteration")
    p.add_argument("--restart", action="store_true", help="discard existing state instead of resuming")
    return parser


def _emit(*pairs) -> None:
    print("\t".join(str(x) for x in pairs))


def _load_field(path, blur: float = 0.0) -> np.ndarray:
    if blur > 0:
        return preprocess(load_rgb(path), blur)
    return load_density(path)


def cmd_reconstruct(args) -> int:
    field = _load_field(args.raster, args.blur)
    tau = args.tau if args.tau >= 0 else None
    tips = _tip_params(args) if args.tips else None
    g, _ = extract_graph(field, args.delta, tau, tips)
    write_graph(g, args.out)
    _emit("vertices", g.n_vertices, "edges", g.n_edges, "arcs", len(decompose_arcs(g)))
    return 0


def cmd_score(args) -> int:
    rep = score(read_graph(args.gt), read_graph(args.pred), densify_step=args.densify,
                max_snap=args.max_snap, nodes=args.nodes, sample_step=args.sample_step,
                max_value=args.max_value)
    _emit("APLS", rep.apls, "SH", rep.avg_hausdorff)
    return 0


def cmd_rasterize(args) -> int:
    mask = rasterize(read_graph(args.graph), args.half_width, (args.width, args.height))
    save_mask(mask, args.out)
    _emit("pixels", int(mask.sum()))
    return 0


def cmd_enhance(args) -> int:
    field = load_density(args.raster)
    params = _tip_params(args)
    radius = params.pop("radius")
    tips = detect_tips(field, **params)
    out = enhance_tips(field, tips, radius)
    if args.layer:
        out = compose(out, [load_density(p) for p in args.layer])
    save_density(out, args.out)
    if args.tips_out:
        Path(args.tips_out).write_text(format_tips(tips))
    _emit("tips", len(tips))
    return 0


def cmd_persistence(args) -> int:
    for p in compute_persistence(load_density(args.raster)):
        _emit(p.max_vertex, p.saddle_edge, repr(p.birth), repr(p.death))
    return 0


def cmd_render(args) -> int:
    field = load_density(args.raster)
    graphs = [read_graph(p) for p in args.graphs]
    labels = [f"layer{k}-{Path(p).stem}" for k, p in enumerate(args.graphs)]
    write_svg(field, graphs, args.out, stroke_width=args.stroke_width, labels=labels)
    return 0


def cmd_synth(args) -> int:
    ids = write_corpus(args.out, args.n, args.size, args.seed)
    _emit("images", len(ids))
    return 0


def cmd_pipeline(args) -> int:
    names = {f.name for f in dc_fields(PipelineConfig)}
    values = {k: v for k, v in vars(args).items() if k in names}
    values["ratios"] = tuple(args.ratios)
    if args.delta_late is not None:
        values["delta_schedule"] = {args.delta_from: args.delta_late}
    config = PipelineConfig(**values)
    pipe = Pipeline(Dataset.from_dir(args.data), args.workdir, config)
    pipe.run(resume=not args.restart)
    for i in pipe.completed():
        st = PipelineState.load(pipe.state_dir(i))
        _emit("iteration", i, "APLS", st.apls, "SH", st.avg_hausdorff)
    return 0


COMMANDS = {
    "reconstruct": cmd_reconstruct,
    "score": cmd_score,
    "rasterize": cmd_rasterize,
    "enhance": cmd_enhance,
    "persistence": cmd_persistence,
    "render": cmd_render,
    "synth": cmd_synth,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        preset = _preset_defaults(argv)
    except SystemExit:
        preset = {}
    parser = build_parser(preset)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (MorseRoadsError, ValueError, OSError) as exc:
        print(f"morseroads {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"morseroads {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

``lapse3d [--config PATH] [--threads N] [--seed U64] {segment,features,track,evaluate,synth}``

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .cellgraph import build_adjacency, write_edges_csv, write_vertices_csv
from .config import Config, default_config, load_config
from .crf import CrfParams
from .equivconv import read_weights
from .errors import ConfigError, Lapse3DError
from .pipeline import PipelineParams, segment
from .stackio import read_stack, write_stack
from .subcellular import (
    detect_junctions,
    extract_segments,
    feature_rows,
    read_junctions_csv,
    read_segments_csv,
    write_features_csv,
    write_junctions_csv,
    write_segments_csv,
)
from .synth import SynthParams, gen_timelapse
from .tracking import build_tracks, read_tracks_csv, write_tracks_csv
from .watershed import SeedParams

log = logging.getLogger("lapse3d")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(s):
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="pipeline config file")
    common.add_argument("--threads", type=_positive, help="worker threads for per-frame stages (default 1)")
    common.add_argument("--seed", type=_u64, help="PRNG seed (synth)")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    parser = _Parser(prog="lapse3d", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "segment": "intensity stacks -> label grids",
        "features": "label grids -> adjacency, features, junctions and segments CSVs",
        "track": "label grids -> tracks.csv",
        "evaluate": "GT vs predicted artifacts -> metrics.csv",
        "synth": "synthetic tissue sequence with ground truth",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text, parents=[common], argument_default=argparse.SUPPRESS)
        # subcommand copies must not reset values given before the subcommand
        for action in sp._actions:
            if action.dest in ("config", "threads", "seed", "quiet"):
                action.default = argparse.SUPPRESS
    return parser


# ---------------------------------------------------------------- helpers


def frame_name(prefix: str, t: int, ext: str) -> str:
    return f"{prefix}_t{t:03d}.{ext}"


def _out_dir(cfg: Config) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _existing(cfg: Config, section, key) -> list[Path]:
    paths = cfg.require(section, key)
    if isinstance(paths, Path):
        paths = [paths]
    for p in paths:
        if not p.exists():
            raise cfg.error(f"no such file: {p}", section, key)
    return list(paths)


def _labels_input(cfg: Config) -> list[Path]:
    if cfg["input"]["labels"]:
        return _existing(cfg, "input", "labels")
    found = sorted(Path(cfg["output"]["dir"]).glob("labels_t*.vxg"))
    if not found:
        raise cfg.error("no label grids: set [input] labels or run segment first", "input")
    return found


def _pool_map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))  # ordered by input index


def pipeline_params(cfg: Config) -> PipelineParams:
    s, c, f = cfg["seeds"], cfg["crf"], cfg["frontend"]
    try:
        seeds = SeedParams(s["smooth_sigma"], s["h_min"], s["border_bg_threshold"])
    except ValueError as exc:
        raise cfg.error(str(exc), "seeds") from None
    crf = None
    if c["enabled"]:
        try:
            crf = CrfParams(
                gamma1=c["gamma1"], gamma2=c["gamma2"], sigma_alpha=c["sigma_alpha"], sigma_beta=c["sigma_beta"],
                sigma_gamma=c["sigma_gamma"], label_weights=c["label_weights"], iterations=c["iterations"],
                epsilon=c["epsilon"], mode=c["mode"], band=c["band"], grid_step=c["grid_step"],
            )
        except ValueError as exc:
            raise cfg.error(str(exc), "crf") from None
    layers = None
    if f["mode"] == "network":
        layers = read_weights(_existing(cfg, "frontend", "weights")[0])
    return PipelineParams(seeds=seeds, crf=crf, invert=f["invert"], layers=layers)


# ---------------------------------------------------------------- commands


def cmd_segment(cfg: Config, threads: int = 1) -> list[Path]:
    stacks = _existing(cfg, "input", "stacks")
    params = pipeline_params(cfg)
    out = _out_dir(cfg)

    def one(item):
        t, path = item
        timings = {}
        t0 = time.perf_counter()
        grid = read_stack(path)
        timings["read"] = time.perf_counter() - t0
        labels = segment(grid, params, timings)
        dest = out / frame_name("labels", t, "vxg")
        write_stack(labels, dest)
        stages = ", ".join(f"{k} {v:.2f}s" for k, v in timings.items())
        log.info("segment frame %d (%s): %d cells; %s", t, path.name, int(labels.data.max()), stages)
        return dest

    return _pool_map(one, list(enumerate(stacks)), threads)


def cmd_features(cfg: Config, threads: int = 1) -> list[Path]:
    inputs = _labels_input(cfg)
    out = _out_dir(cfg)
    max_d = cfg["graph"]["max_d"]

    def one(item):
        t, path = item
        t0 = time.perf_counter()
        labels = read_stack(path)
        g = build_adjacency(labels, max_d)
        t1 = time.perf_counter()
        junctions = detect_junctions(labels, g)
        t2 = time.perf_counter()
        segs, failed = extract_segments(labels, g, junctions)
        t3 = time.perf_counter()
        write_edges_csv(g, out / frame_name("edges", t, "csv"))
        write_vertices_csv(g, out / frame_name("vertices", t, "csv"))
        write_features_csv(feature_rows(labels, g), out / frame_name("features", t, "csv"))
        write_junctions_csv(junctions, out / frame_name("junctions", t, "csv"))
        write_segments_csv(segs, out / frame_name("segments", t, "csv"))
        t4 = time.perf_counter()
        for pair, err in sorted(failed.items()):
            log.warning("frame %d: no segment for cells %s: %s", t, pair, err)
        log.info(
            "features frame %d: %d cells, %d edges, %d junctions, %d segments; "
            "graph %.2fs, junctions %.2fs, segments %.2fs, write %.2fs",
            t, len(g.vertices), len(g.edges), len(junctions), len(segs), t1 - t0, t2 - t1, t3 - t2, t4 - t3,
        )
        return t

    _pool_map(one, list(enumerate(inputs)), threads)
    return [out]


def cmd_track(cfg: Config, threads: int = 1) -> Path:
    inputs = _labels_input(cfg)
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    frames = _pool_map(read_stack, inputs, threads)
    tg = build_tracks(frames, cfg["tracking"]["threshold"], cfg["graph"]["max_d"])
    dest = out / "tracks.csv"
    write_tracks_csv(tg, dest)
    log.info(
        "track: %d frames, %d nodes, %d links, %d tracks; %.2fs",
        len(frames), len(tg.nodes), len(tg.edges), len(tg.tracks()), time.perf_counter() - t0,
    )
    return dest


def _mean(values):
    return float(np.mean(values)) if values else float("nan")


def evaluate_frames(gt_frames, pred_frames, e: dict, gt_junctions=None, pred_junctions=None,
                    gt_segments=None, pred_segments=None, max_d=10):
    """Metric rows ``(frame, metric, value)`` for a sequence; ``"all"`` rows aggregate.

    Missing predicted junctions/segments are derived from the predicted labels.
    """
    rows = []
    fs, jfp, jfn, jgt, seg_scores = [], 0, 0, 0, []
    for t, (g, p) in enumerate(zip(gt_frames, pred_frames)):
        prec, rec, f = metrics.boundary_prf(g, p, e["boundary_tol"])
        fs.append(f)
        rows += [(t, "boundary_precision", prec), (t, "boundary_recall", rec), (t, "boundary_f", f)]
        rows += [(t, "cells_gt", metrics.count_cells(g)), (t, "cells_pred", metrics.count_cells(p))]
        graph = None
        if gt_junctions is not None:
            if pred_junctions is not None:
                pj = pred_junctions[t]
            else:
                graph = build_adjacency(p, max_d)
                pj = detect_junctions(p, graph)
            if gt_junctions[t]:
                fp, fn, err = metrics.junction_error(gt_junctions[t], pj, e["junction_tol"], e["planar"])
                jfp, jfn, jgt = jfp + fp, jfn + fn, jgt + len(gt_junctions[t])
                rows += [(t, "junction_fp", fp), (t, "junction_fn", fn), (t, "junction_e", err)]
        if gt_segments is not None:
            if pred_segments is not None:
                ps = pred_segments[t]
            else:
                graph = graph or build_adjacency(p, max_d)
                ps, _ = extract_segments(p, graph, detect_junctions(p, graph))
            pairs = _pair_segments(g, p, gt_segments[t], ps)
            scores = [metrics.score_segment(a, b, e["planar"]) for a, b in pairs if a.length > 0]
            seg_scores += scores
            rows.append((t, "segments_matched", len(scores)))
            rows.append((t, "segments_missed", len(gt_segments[t]) - len(scores)))
            for name in ("ede_start", "ede_end", "fd", "ld", "dp"):
                rows.append((t, f"segment_{name}", _mean([getattr(s, name) for s in scores])))
    mean, std = metrics.count_stats(pred_frames)
    gmean, gstd = metrics.count_stats(gt_frames)
    rows += [("all", "cells_gt_mean", gmean), ("all", "cells_gt_std", gstd)]
    rows += [("all", "cells_pred_mean", mean), ("all", "cells_pred_std", std), ("all", "boundary_f", _mean(fs))]
    if jgt:
        rows.append(("all", "junction_e", (jfp + jfn) / jgt))
    if gt_segments is not None:
        for name in ("ede_start", "ede_end", "fd", "ld", "dp"):
            rows.append(("all", f"segment_{name}", _mean([getattr(s, name) for s in seg_scores])))
    return rows


def _label_map(gt, pred):
    """GT label -> predicted label by majority overlap (> 0.5)."""
    m = metrics.match_graph_nodes([gt], [pred])
    return {g: p for (_, g), (_, p) in m.items()}


def _pair_segments(gt_labels, pred_labels, gt_segs, pred_segs):
    lab = _label_map(gt_labels, pred_labels)
    by_cells = {tuple(sorted(s.cells)): s for s in pred_segs}
    pairs = []
    for s in gt_segs:
        a, b = lab.get(s.cells[0]), lab.get(s.cells[1])
        if a is None or b is None:
            continue
        hit = by_cells.get(tuple(sorted((a, b))))
        if hit is not None:
            pairs.append((s, hit))
    return pairs


def cmd_evaluate(cfg: Config, threads: int = 1) -> Path:
    e = cfg["evaluate"]
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    gt_paths = _existing(cfg, "evaluate", "gt_labels")
    pred_paths = _existing(cfg, "evaluate", "pred_labels")
    if len(gt_paths) != len(pred_paths):
        raise cfg.error(f"{len(gt_paths)} GT frames vs {len(pred_paths)} predicted frames", "evaluate", "pred_labels")
    gt = _pool_map(read_stack, gt_paths, threads)
    pred = _pool_map(read_stack, pred_paths, threads)

    def per_frame(key, reader):
        if not e[key]:
            return None
        paths = _existing(cfg, "evaluate", key)
        if key.endswith("segments"):
            paths = [q for q in paths if not q.stem.endswith("_points")]  # sidecars travel with their table
        if len(paths) != len(gt):
            raise cfg.error(f"expected {len(gt)} files, got {len(paths)}", "evaluate", key)
        return [reader(p) for p in paths]

    rows = evaluate_frames(
        gt, pred, e,
        per_frame("gt_junctions", read_junctions_csv), per_frame("pred_junctions", read_junctions_csv),
        per_frame("gt_segments", read_segments_csv), per_frame("pred_segments", read_segments_csv),
        cfg["graph"]["max_d"],
    )
    if e["gt_tracks"]:
        gt_tg = read_tracks_csv(_existing(cfg, "evaluate", "gt_tracks")[0])
        if e["pred_tracks"]:
            pred_tg = read_tracks_csv(_existing(cfg, "evaluate", "pred_tracks")[0])
        else:
            pred_tg = build_tracks(pred, cfg["tracking"]["threshold"], cfg["graph"]["max_d"])
        a = cfg["aogm"]
        w = metrics.AogmWeights(a["ns"], a["fn"], a["fp"], a["ed"], a["ea"], a["ec"])
        matching = metrics.match_graph_nodes(gt, pred)
        rows.append(("all", "aogm", metrics.aogm(gt_tg, pred_tg, w, matching)))
        rows.append(("all", "tra", metrics.tra(gt_tg, pred_tg, w, matching)))
    dest = out / "metrics.csv"
    with open(dest, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "metric", "value"])
        for frame, name, value in rows:
            wr.writerow([frame, name, f"{value:.6g}" if isinstance(value, float) else value])
    log.info("evaluate: %d frames, %d metric rows; %.2fs", len(gt), len(rows), time.perf_counter() - t0)
    return dest


def synth_params(cfg: Config, seed=None) -> SynthParams:
    s = cfg["synth"]
    try:
        if len(s["dims"]) != 3 or len(s["drift"]) != 3 or len(s["spacing"]) != 3:
            raise ValueError("dims, drift and spacing need three components")
        return SynthParams(
            dims=tuple(s["dims"]), n_cells=s["n_cells"], seed=s["seed"] if seed is None else seed,
            wall_width=s["wall_width"], noise_sigma=s["noise_sigma"], drift=tuple(s["drift"]),
            growth=s["growth"], n_frames=s["n_frames"], spacing=tuple(s["spacing"]),
        )
    except ValueError as exc:
        raise cfg.error(str(exc), "synth") from None


def cmd_synth(cfg: Config, threads: int = 1, seed=None) -> Path:
    p = synth_params(cfg, seed)
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    tl = gen_timelapse(p)
    t1 = time.perf_counter()
    for t, (tissue, image) in enumerate(zip(tl.frames, tl.images)):
        write_stack(image, out / frame_name("image", t, "vxg"))
        write_stack(tissue.labels, out / frame_name("gt_labels", t, "vxg"))
        write_junctions_csv(tissue.junctions, out / frame_name("gt_junctions", t, "csv"))
        write_segments_csv(tissue.segments, out / frame_name("gt_segments", t, "csv"))
    write_tracks_csv(tl.tracks, out / "gt_tracks.csv")
    log.info(
        "synth: %d frames of %s with %d cells (seed %d); generate %.2fs, write %.2fs",
        p.n_frames, p.dims, p.n_cells, p.seed, t1 - t0, time.perf_counter() - t1,
    )
    return out


COMMANDS = {
    "segment": cmd_segment,
    "features": cmd_features,
    "track": cmd_track,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    threads = getattr(args, "threads", None) or 1
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else default_config()
        if args.command == "synth":
            cmd_synth(cfg, threads, getattr(args, "seed", None))
        else:
            COMMANDS[args.command](cfg, threads)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (Lapse3DError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""``mdis`` command line: saliency maps, model training and batch evaluation."""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .hmt import em_train_scalar, em_train_vector, load_params, save_params
from .image_io import ImageLoadError, load_image, save_map_png
from .inference import pyramid_forests
from .metrics import (
    DEFAULT_BLUR,
    DEFAULT_THRESHOLDS,
    DegenerateMetricWarning,
    density_from_fixations,
    isroc,
    lcc,
    nss,
    read_fixations_csv,
    roc,
    auc,
)
from .saliency import ModeConfig, compute_saliency_maps, prepare
from .tree import Forest
from .wavelet import BANDS, dwt2_haar

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm"}
METRICS_HEADER = ("image", "mode", "lcc", "nss", "auc", "time_s")
SUMMARY_HEADER = ("mode", "n_images", "lcc", "nss", "auc", "time_s")
SKIPPED = "skipped:no-fixations"


# --------------------------------------------------------------------------
# argument types


def mode_arg(text: str) -> ModeConfig:
    try:
        return ModeConfig.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def mode_list_arg(text: str) -> list[ModeConfig]:
    """Comma-separated modes; ``uhmt0..uhmt5`` expands to the selector range."""
    out: list[ModeConfig] = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if ".." in part:
            a, b = (mode_arg(x) for x in part.split("..", 1))
            if a.model != b.model or a.scale > b.scale:
                raise argparse.ArgumentTypeError(f"bad mode range {part!r}")
            out.extend(ModeConfig(a.model, k) for k in range(a.scale, b.scale + 1))
        else:
            out.append(mode_arg(part))
    if not out:
        raise argparse.ArgumentTypeError("empty mode list")
    seen = []
    for m in out:
        if m not in seen:
            seen.append(m)
    return seen


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def image_files(paths) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES and f.is_file()))
        else:
            files.append(p)
    return files


# --------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    modes: list[ModeConfig]
    inputs: list[Path]
    out_dir: Path
    fixations: Path | None = None
    depth: int = 5
    max_iter: int = 50
    tol: float = 1e-5
    blur: float = DEFAULT_BLUR
    thresholds: int = DEFAULT_THRESHOLDS
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    model: Path | None = None

    def check(self) -> None:
        missing = [p for p in self.inputs + [self.fixations, self.model] if p is not None and not p.exists()]
        if missing:
            raise FileNotFoundError(f"no such file or directory: {missing[0]}")
        self.out_dir.mkdir(parents=True, exist_ok=True)


def _analysis_kw(cfg: RunConfig) -> dict:
    kw = {"max_iter": cfg.max_iter, "tol": cfg.tol}
    if cfg.model is not None:
        kw["params"] = load_params(cfg.model)
    return kw


# --------------------------------------------------------------------------
# saliency


def cmd_saliency(args) -> int:
    cfg = RunConfig(
        modes=[args.mode],
        inputs=[Path(p) for p in args.inputs],
        out_dir=Path(args.out_dir) if args.out_dir else Path("."),
        depth=args.depth,
        max_iter=args.max_iter,
        model=Path(args.model) if args.model else None,
    )
    cfg.check()
    files = image_files(cfg.inputs)
    if not files:
        print("error: no images found", file=sys.stderr)
        return 1
    kw = _analysis_kw(cfg)
    mode = args.mode
    status = 0
    for f in files:
        try:
            img = load_image(f)
        except ImageLoadError as exc:
            print(f"error: {f}: {exc}", file=sys.stderr)
            status = 1
            continue
        t0 = time.perf_counter()
        smap = compute_saliency_maps(img, mode.model, [mode.scale], cfg.depth, **kw)[mode.scale]
        dt = time.perf_counter() - t0
        dest = (Path(args.out_dir) if args.out_dir else f.parent) / f"{f.stem}.{mode.name}.png"
        save_map_png(smap, dest)
        print(f"{f.name}\t{mode.name}\t{dt:.3f}s\t{dest}")
    return status


# --------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    img = load_image(args.image)
    lum, _ = prepare(img, max(64, 1 << args.depth))
    pyr = dwt2_haar(lum, args.depth)
    init = load_params(args.init) if args.init else None
    if args.kind == "scalar":
        forests = pyramid_forests(pyr)
        res = em_train_scalar(Forest.concat(forests[b] for b in BANDS), init, args.max_iter, args.tol)
    else:
        res = em_train_vector(pyramid_forests(pyr, vector=True), init, args.max_iter, args.tol)
    if res.degenerate:
        print("warning: degenerate data, large-state variance floored", file=sys.stderr)
    save_params(res.params, args.out, loglik=res.loglik)
    print(f"loglik={res.loglik!r} iterations={res.iterations} levels={res.params.levels} out={args.out}")
    return 0


# --------------------------------------------------------------------------
# eval


def _fmt(x: float) -> str:
    return repr(float(x))


def _evaluate_image(job):
    """Worker: all modes for one image. Returns (name, rows, rocs, isroc pairs)."""
    path, fx, modes, cfg_kw = job
    img = load_image(path)
    name = Path(path).name
    if fx is None:
        return name, [[name, SKIPPED, "", "", "", ""]], {}, {}
    fx = fx.with_shape(img.shape[:2])
    g = density_from_fixations(fx, cfg_kw["blur"])
    by_model: dict[str, list[int]] = {}
    for m in modes:
        by_model.setdefault(m.model, []).append(m.scale)
    rows, rocs, pairs = [], {}, {}
    maps, times = {}, {}
    for model, scales in by_model.items():
        t0 = time.perf_counter()
        out = compute_saliency_maps(img, model, scales, cfg_kw["depth"], **cfg_kw["analysis"])
        dt = time.perf_counter() - t0
        for s, smap in out.items():
            maps[(model, s)] = smap
            times[(model, s)] = dt
    for m in modes:
        smap = maps[(m.model, m.scale)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateMetricWarning)
            curve = roc(smap, fx, cfg_kw["thresholds"])
            rec = (lcc(smap, g), nss(smap, fx), auc(curve))
            if fx.n_subjects >= 2:
                r = isroc(smap, fx, cfg_kw["blur"], cfg_kw["thresholds"])
                pairs[m.name] = (r.inter_subject_auc, r.model_auc)
        rocs[m.name] = (curve.fpr, curve.tpr)
        rows.append([name, m.name, *map(_fmt, rec), f"{times[(m.model, m.scale)]:.6f}"])
    return name, rows, rocs, pairs


def _svg_plot(path: Path, title: str, xlabel: str, ylabel: str, series, diagonal: bool = True) -> None:
    """Unit-square line plot: fixed 800x600 viewBox, 0.1 gridlines."""
    left, top, w, h = 80, 40, 680, 480

    def px(x, y):
        return left + x * w, top + (1 - y) * h

    out = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 800 600" width="800" height="600">',
        '<rect x="0" y="0" width="800" height="600" fill="white"/>',
        f'<text x="400" y="25" text-anchor="middle" font-size="16">{title}</text>',
    ]
    for k in range(11):
        v = k / 10
        x0, y0 = px(v, 0)
        x1, y1 = px(0, v)
        out.append(f'<line x1="{x0:.1f}" y1="{top}" x2="{x0:.1f}" y2="{top + h}" stroke="#ddd"/>')
        out.append(f'<line x1="{left}" y1="{y1:.1f}" x2="{left + w}" y2="{y1:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{x0:.1f}" y="{top + h + 18}" text-anchor="middle" font-size="11">{v:.1f}</text>')
        out.append(f'<text x="{left - 8}" y="{y1 + 4:.1f}" text-anchor="end" font-size="11">{v:.1f}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="black"/>')
    out.append(f'<text x="400" y="{top + h + 45}" text-anchor="middle" font-size="13">{xlabel}</text>')
    out.append(
        f'<text x="20" y="{top + h / 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 20 {top + h / 2})">{ylabel}</text>'
    )
    if diagonal:
        (ax, ay), (bx, by) = px(0, 0), px(1, 1)
        out.append(f'<line x1="{ax}" y1="{ay}" x2="{bx}" y2="{by}" stroke="gray" stroke-dasharray="6,4"/>')
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    for k, (label, xs, ys) in enumerate(series):
        pts = " ".join("{:.2f},{:.2f}".format(*px(x, y)) for x, y in zip(xs, ys))
        c = colours[k % len(colours)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{pts}"/>')
        out.append(f'<text x="{left + 10}" y="{top + 20 + 16 * k}" font-size="12" fill="{c}">{label}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def summarise(rows, modes) -> list[list[str]]:
    """Per-mode column means of metric rows (skipped rows excluded)."""
    out = []
    for m in modes:
        vals = np.array([[float(v) for v in r[2:]] for r in rows if r[1] == m.name])
        if len(vals) == 0:
            out.append([m.name, "0", "nan", "nan", "nan", "nan"])
            continue
        means = [math.fsum(col) / len(col) for col in vals.T]
        out.append([m.name, str(len(vals)), *map(_fmt, means)])
    return out


def cmd_eval(args) -> int:
    cfg = RunConfig(
        modes=args.modes,
        inputs=[Path(args.images)],
        out_dir=Path(args.out_dir),
        fixations=Path(args.fixations),
        depth=args.depth,
        max_iter=args.max_iter,
        blur=args.blur,
        thresholds=args.thresholds,
        workers=args.workers or (os.cpu_count() or 1),
        model=Path(args.model) if args.model else None,
    )
    cfg.check()
    files = image_files(cfg.inputs)
    if not files:
        print("error: no images found", file=sys.stderr)
        return 1
    fixsets = read_fixations_csv(cfg.fixations)
    cfg_kw = {
        "blur": cfg.blur,
        "thresholds": cfg.thresholds,
        "depth": cfg.depth,
        "analysis": _analysis_kw(cfg),
    }
    jobs = []
    for f in files:
        fx = fixsets.get(f.name) or fixsets.get(f.stem)
        if fx is None:
            print(f"warning: {f.name}: no fixations, skipped", file=sys.stderr)
        jobs.append((str(f), fx, cfg.modes, cfg_kw))
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            results = list(pool.map(_evaluate_image, jobs))
    else:
        results = [_evaluate_image(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    rows = [row for _, rs, _, _ in results for row in rs]
    _write_csv(cfg.out_dir / "metrics.csv", METRICS_HEADER, rows)
    valid = [r for r in rows if r[1] != SKIPPED]
    _write_csv(cfg.out_dir / "summary.csv", SUMMARY_HEADER, summarise(valid, cfg.modes))

    for m in cfg.modes:
        curves = [r[2][m.name] for r in results if m.name in r[2]]
        if curves:
            fpr = np.mean([c[0] for c in curves], axis=0)
            tpr = np.mean([c[1] for c in curves], axis=0)
            _svg_plot(cfg.out_dir / f"roc_{m.name}.svg", f"ROC {m.name}", "false positive rate",
                      "true positive rate", [(m.name, fpr, tpr)])
        pairs = sorted(r[3][m.name] for r in results if m.name in r[3])
        if pairs:
            xs, ys = zip(*pairs)
            _svg_plot(cfg.out_dir / f"isroc_{m.name}.svg", f"inter-subject ROC {m.name}",
                      "inter-subject AUC", "model AUC", [(m.name, xs, ys)])
    for r in summarise(valid, cfg.modes):
        print("\t".join(r))
    return 0


def cmd_version(args) -> int:
    print(f"mdis {__version__}")
    return 0


# --------------------------------------------------------------------------
# parser and config file


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdis", description="Multi-scale discriminant saliency.")
    p.add_argument("--config", help="INI-style key=value file; flags given here override it")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("saliency", help="compute saliency maps")
    s.add_argument("inputs", nargs="+", help="image files or directories")
    s.add_argument("--mode", type=mode_arg, default=mode_arg("uhmt0"), help="e.g. uhmt0, thmt3, vhmt6")
    s.add_argument("--out-dir", help="output directory (default: next to each image)")
    s.add_argument("--depth", type=positive_int, default=5)
    s.add_argument("--max-iter", type=positive_int, default=50)
    s.add_argument("--model", help="model file: fixed parameters (u) or EM start (t, v)")
    s.set_defaults(func=cmd_saliency)

    t = sub.add_parser("train", help="fit an HMT to one image by EM")
    t.add_argument("image")
    t.add_argument("--kind", choices=("scalar", "vector"), default="scalar")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--init", help="model file to start EM from")
    t.add_argument("--depth", type=positive_int, default=5)
    t.add_argument("--max-iter", type=positive_int, default=50)
    t.add_argument("--tol", type=float, default=1e-5)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score modes against fixations")
    e.add_argument("--images", required=True, help="image directory")
    e.add_argument("--fixations", required=True, help="CSV with header image,subject,x,y")
    e.add_argument("--modes", type=mode_list_arg, default=mode_list_arg("uhmt0"),
                   help="comma list, ranges allowed: uhmt0..uhmt5,uhmt6")
    e.add_argument("--out-dir", default="mdis-eval")
    e.add_argument("--depth", type=positive_int, default=5)
    e.add_argument("--max-iter", type=positive_int, default=50)
    e.add_argument("--blur", type=float, default=DEFAULT_BLUR, help="fixation density sigma (pixels)")
    e.add_argument("--thresholds", type=positive_int, default=DEFAULT_THRESHOLDS)
    e.add_argument("--workers", type=positive_int, default=None, help="worker processes (default: cores)")
    e.add_argument("--model", help="model file: fixed parameters (u) or EM start (t, v)")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("version", help="print the version")
    v.set_defaults(func=cmd_version)
    return p


def read_config(path) -> dict[str, dict[str, str]]:
    """Sections of an INI-style file; bare ``key=value`` lines go to ``DEFAULT``."""
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = lambda k: k.strip().replace("-", "_")
    cp.read_string("[DEFAULT]\n" + text)
    out = {"DEFAULT": dict(cp.defaults())}
    for sec in cp.sections():
        out[sec] = {k: v for k, v in cp.items(sec) if k not in cp.defaults() or cp.get(sec, k) != cp.defaults()[k]}
    return out


def _subparsers(parser):
    for act in parser._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices
    return {}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            conf = read_config(known.config)
        except (OSError, configparser.Error) as exc:
            parser.error(f"cannot read config {known.config}: {exc}")
        for name, sp in _subparsers(parser).items():
            values = {**conf.get("DEFAULT", {}), **conf.get(name, {})}
            dests = {a.dest: a for a in sp._actions}
            applied = {}
            for k, v in values.items():
                act = dests.get(k)
                if act is None or k in ("help", "func") or act.nargs not in (None, "?"):
                    continue
                try:
                    applied[k] = act.type(v) if act.type else v
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    parser.error(f"config key {k}: {exc}")
                act.required = False
            sp.set_defaults(**applied)
        unknown = set(conf.get("DEFAULT", {})) - {
            a.dest for sp in _subparsers(parser).values() for a in sp._actions
        }
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ImageLoadError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

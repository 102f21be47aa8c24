"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 input error, 4 a metric
family failed (partial output was still written). The SARVAL_THREADS
environment variable caps worker parallelism; results are identical for
any thread count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, alignment, ampstats, checkpoint, diffusion, labeling
from . import preprocess, report as report_mod, texture
from .errors import ConfigError, InputError, MetricError, SarvalError
from .manifest import Manifest, ManifestEntry, entry_label, load_manifest, save_manifest
from .raster import AmplitudeImage, write_raster


def _parse_list(text: str, cast):
    return tuple(cast(part) for part in text.split(",") if part)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sarval",
        description="Prepare SAR amplitude datasets and evaluate generated imagery.")
    parser.add_argument("--version", action="version", version=f"sarval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="normalize amplitudes to [0, 1] with clipping")
    p.add_argument("--in", dest="manifest", required=True, help="input manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--k", type=float, default=3.0, help="sigma multiplier (default 3.0)")

    p = sub.add_parser("tile", help="cut fixed-size tiles from each image")
    p.add_argument("--in", dest="manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=1024)
    p.add_argument("--stride", type=int, default=1024)

    p = sub.add_parser("histo", help="pooled amplitude histogram as CSV")
    p.add_argument("--in", dest="manifest", required=True)
    p.add_argument("--bins", type=int, default=ampstats.DEFAULT_BIN_COUNT)
    p.add_argument("--out", required=True, help="output CSV (bin_center, density)")

    p = sub.add_parser("kl", help="KL divergence between real and generated sets")
    p.add_argument("--real", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--bins", type=int, default=ampstats.DEFAULT_BIN_COUNT)
    p.add_argument("--per-category", action="store_true")
    p.add_argument("--histo-csv", help="directory for per-category histogram CSVs")
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--out-csv", help="optional CSV copy of the report")

    p = sub.add_parser("glcm", help="texture feature profile as CSV")
    p.add_argument("--manifest", required=True, help="real-set manifest")
    p.add_argument("--gen", help="optional generated-set manifest")
    p.add_argument("--levels", type=int, default=texture.DEFAULT_LEVELS)
    p.add_argument("--distances", default="1,2,4,8")
    p.add_argument("--angles", default="0,45,90,135")
    p.add_argument("--patch", type=int, default=texture.DEFAULT_PATCH)
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--symmetric", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("align", help="embedding rank and cosine statistics")
    p.add_argument("--img-emb", required=True)
    p.add_argument("--txt-emb", required=True)
    p.add_argument("--batch", type=int, default=alignment.DEFAULT_BATCH_SIZE)
    p.add_argument("--per-label", action="store_true")
    p.add_argument("--manifest", help="manifest supplying labels (required for --per-label)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("noise-check", help="verify the noise-offset variance law")
    p.add_argument("--gamma", type=float, default=diffusion.DEFAULT_GAMMA)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output JSON (default stdout)")

    p = sub.add_parser("mawc", help="per-layer mean absolute weight change")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--threshold", type=float, default=checkpoint.DEFAULT_MAWC_THRESHOLD)
    p.add_argument("--groups", help="grouping rules JSON")
    p.add_argument("--weighted", action="store_true",
                   help="parameter-weighted block means instead of unweighted")
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("lora-merge", help="materialize low-rank updates into a checkpoint")
    p.add_argument("--base", required=True)
    p.add_argument("--lora", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="run every configured metric family")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    return parser


def _cmd_normalize(args) -> int:
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    rows = {}
    for i, entry in enumerate(manifest.entries):
        loaded = manifest.load_image(entry)
        # inputs to this command are raw amplitudes by definition, even if
        # their value range made the reader infer a normalized flag
        image = AmplitudeImage(width=loaded.width, height=loaded.height,
                               data=loaded.data, normalized=False,
                               source_id=loaded.source_id)
        params = preprocess.compute_norm_params(image, k=args.k)
        normalized, saturation = preprocess.normalize_clip(image, params)
        # index prefix keeps names unique when stems collide across directories
        name = f"{i:04d}_{Path(entry.image).stem}.ras"
        write_raster(normalized, out_dir / name)
        entries.append(ManifestEntry(image=name, mask=entry.mask, caption=entry.caption,
                                     labels=entry.labels, split=entry.split))
        rows[entry.image] = {
            "mu": params.mu, "sigma": params.sigma, "k": params.k,
            "saturated_fraction": saturation.fraction,
        }
    save_manifest(Manifest(entries=tuple(entries), root=out_dir), out_dir / "manifest.json")
    (out_dir / "normalize_report.json").write_text(
        json.dumps(report_mod.round6(rows), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    print(f"normalized {len(entries)} images into {out_dir}")
    return 0


def _cmd_tile(args) -> int:
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, entry in enumerate(manifest.entries):
        image = manifest.load_image(entry)
        for j, piece in enumerate(preprocess.tile(image, args.size, args.stride)):
            name = f"{i:04d}_{Path(entry.image).stem}_t{j:04d}.ras"
            write_raster(piece, out_dir / name)
            entries.append(ManifestEntry(image=name, caption=entry.caption,
                                         labels=entry.labels, split=entry.split))
    save_manifest(Manifest(entries=tuple(entries), root=out_dir), out_dir / "manifest.json")
    print(f"wrote {len(entries)} tiles into {out_dir}")
    return 0


def _cmd_histo(args) -> int:
    manifest = load_manifest(args.manifest)
    hist = ampstats.histogram((manifest.load_image(e) for e in manifest.entries), args.bins)
    _write_histogram_csv(hist, args.out)
    print(f"histogram over {hist.n_images} images "
          f"(saturated fraction {hist.saturated_fraction:.6g}) -> {args.out}")
    return 0


def _write_histogram_csv(hist: ampstats.AmplitudeHistogram, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_center", "density"])
        for center, dens in zip(hist.bin_centers, hist.density):
            writer.writerow([f"{center:.6g}", f"{dens:.6g}"])


def _cmd_kl(args) -> int:
    real = load_manifest(args.real)
    gen = load_manifest(args.gen)
    if args.per_category:
        reports = ampstats.kl_by_category(real, gen, bin_count=args.bins)
    else:
        p = ampstats.histogram((real.load_image(e) for e in real.entries), args.bins)
        q = ampstats.histogram((gen.load_image(e) for e in gen.entries), args.bins)
        reports = [ampstats.kl_divergence(p, q)]
    payload = {
        (r.category or "global"): {
            "kl_nats": r.kl_nats, "n_real": r.n_real, "n_gen": r.n_gen,
            "saturation_gap": r.saturation_gap, "absent": r.absent,
        }
        for r in reports
    }
    Path(args.out).write_text(
        json.dumps(report_mod.round6(payload), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    if args.out_csv:
        with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["category", "kl_nats", "n_real", "n_gen",
                             "saturation_gap", "absent"])
            for name in sorted(payload, key=lambda c: (c != "global", c)):
                row = payload[name]
                writer.writerow([name,
                                 "" if row["absent"] else f"{row['kl_nats']:.6g}",
                                 row["n_real"], row["n_gen"],
                                 f"{row['saturation_gap']:.6g}", row["absent"]])
    if args.histo_csv:
        hist_dir = Path(args.histo_csv)
        hist_dir.mkdir(parents=True, exist_ok=True)
        for side, manifest in (("real", real), ("gen", gen)):
            for category, hist in sorted(
                    ampstats.category_histograms(manifest, bin_count=args.bins).items(),
                    key=lambda kv: kv[0] or ""):
                name = category or "global"
                _write_histogram_csv(hist, hist_dir / f"{side}_{name}.csv")
    print(f"kl report -> {args.out}")
    return 0


def _cmd_glcm(args) -> int:
    real = load_manifest(args.manifest)
    gen = load_manifest(args.gen) if args.gen else None
    rows = texture.texture_profile(
        real, gen,
        distances=_parse_list(args.distances, int),
        angles=_parse_list(args.angles, float),
        levels=args.levels, patch=args.patch, stride=args.stride,
        symmetric=args.symmetric)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["set", "label", "feature", "d", "theta", "mean", "std", "n_patches"])
        for r in rows:
            writer.writerow([r.set_name, r.label, r.feature, r.distance, f"{r.angle:g}",
                             "" if r.absent else f"{r.mean:.6g}",
                             "" if r.absent else f"{r.std:.6g}", r.n_patches])
    print(f"texture profile ({len(rows)} rows) -> {args.out}")
    return 0


def _cmd_align(args) -> int:
    img = alignment.read_embeddings(args.img_emb)
    txt = alignment.read_embeddings(args.txt_emb)
    matrix = alignment.cosine_matrix(img, txt)
    stats = alignment.rank_stats(matrix, args.batch)
    payload: dict = {
        "rank_mean": stats.mean,
        "rank_median": stats.median,
        "rank_variance": stats.variance,
        "rank_variance_about_median": stats.variance_about_median,
        "n_items": stats.n_items,
        "batch_size": stats.batch_size,
        "cosine_mean": float(np.mean(alignment.diagonal_cosine(img, txt))),
    }
    if args.per_label:
        if not args.manifest:
            raise ConfigError("missing-input", "--per-label requires --manifest for labels")
        manifest = load_manifest(args.manifest)
        labels_by_image = {e.image: entry_label(e) for e in manifest.entries}
        pair_labels = [labels_by_image.get(i) for i in img.ids]
        payload["per_label"] = {
            lc.label: (None if lc.absent else lc.mean)
            for lc in alignment.per_label_cosine(img, txt, pair_labels,
                                                 labeling.DEFAULT_LABELS)
        }
    Path(args.out).write_text(
        json.dumps(report_mod.round6(payload), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    print(f"alignment report -> {args.out}")
    return 0


def _cmd_noise_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    eps = rng.standard_normal(args.samples)
    delta = rng.standard_normal(args.samples)
    shifted = diffusion.offset_noise(eps, delta, diffusion.NoiseOffsetConfig(args.gamma))
    payload = {
        "gamma": args.gamma,
        "samples": args.samples,
        "seed": args.seed,
        "mean": float(shifted.mean()),
        "variance": float(shifted.var()),
        "expected_variance": 1.0 + args.gamma ** 2,
    }
    text = json.dumps(report_mod.round6(payload), sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_mawc(args) -> int:
    before = checkpoint.parse_archive(args.before)
    after = checkpoint.parse_archive(args.after)
    result = checkpoint.mawc(before, after, args.threshold)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["layer", "mawc", "param_count", "changed_fraction"])
        for delta in result.deltas:
            writer.writerow([delta.layer_name, f"{delta.mawc:.6g}", delta.param_count,
                             f"{delta.changed_fraction:.6g}"])
        if args.groups:
            rules = checkpoint.load_rules(args.groups)
            writer.writerow([])
            writer.writerow(["block/subblock", "mawc", "param_count", "n_layers"])
            for summary in checkpoint.block_aggregate(result.deltas, rules, args.weighted):
                writer.writerow([f"{summary.block}/{summary.subblock}",
                                 f"{summary.mawc:.6g}", summary.param_count,
                                 summary.n_layers])
    for name in result.only_before:
        print(f"warning: {name} only in --before", file=sys.stderr)
    for name in result.only_after:
        print(f"warning: {name} only in --after", file=sys.stderr)
    print(f"mawc over {len(result.deltas)} layers -> {args.out}")
    return 0


def _cmd_lora_merge(args) -> int:
    base = checkpoint.parse_archive(args.base)
    lora = checkpoint.parse_archive(args.lora)
    merged = checkpoint.merge_lora_archive(base, lora, alpha=args.alpha, rank=args.rank)
    checkpoint.write_archive(merged, args.out)
    print(f"merged {len(merged)} tensors -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    config = report_mod.load_config(args.config, seed_override=args.seed)
    result = report_mod.run_eval(config)
    written = report_mod.emit_all(result, args.out_dir)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for path in written:
        print(path)
    if result.failed:
        raise MetricError("family-failed",
                          "one or more metric families failed; partial output written")
    return 0


_COMMANDS = {
    "normalize": _cmd_normalize,
    "tile": _cmd_tile,
    "histo": _cmd_histo,
    "kl": _cmd_kl,
    "glcm": _cmd_glcm,
    "align": _cmd_align,
    "noise-check": _cmd_noise_check,
    "mawc": _cmd_mawc,
    "lora-merge": _cmd_lora_merge,
    "report": _cmd_report,
}


def _apply_thread_cap() -> None:
    """Validate SARVAL_THREADS and propagate it to the common BLAS pools.

    All reductions here are order-independent, so output bytes do not
    depend on the cap; this only bounds worker counts (best effort for
    pools that read their env at first use).
    """
    raw = os.environ.get("SARVAL_THREADS")
    if raw is None:
        return
    try:
        threads = int(raw)
        if threads < 1:
            raise ValueError
    except ValueError:
        raise ConfigError("invalid-threads",
                          f"SARVAL_THREADS must be a positive integer, got {raw!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except MetricError as exc:
        print(f"metric error: {exc}", file=sys.stderr)
        return 4
    except SarvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

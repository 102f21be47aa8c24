"""Evaluation orchestration and deterministic report emission.

``run_eval`` executes the requested metric families (amplitude KL,
texture, alignment) for every model against the shared real set and
assembles one report object. Families whose inputs are missing are
flagged absent; families that fail during computation are flagged
failed and the rest proceed. The emitted JSON/CSV/SVG files are fully
deterministic: keys sorted, column order fixed, floats rounded to six
significant digits, no timestamps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, alignment, ampstats, labeling, texture
from .errors import ConfigError, InputError, SarvalError
from .manifest import Manifest, entry_label, load_manifest

METRIC_FAMILIES = ("kl", "texture", "alignment")

MAIN_CSV_COLUMNS = (
    "model", "category", "kl_nats", "saturation_gap", "n_real", "n_gen",
    "rank_mean", "rank_median", "rank_variance", "rank_variance_about_median",
    "cosine_mean", "n_pairs",
)

TEXTURE_CSV_COLUMNS = ("model", "set", "label", "feature", "d", "theta",
                       "mean", "std", "n_patches")


@dataclass(frozen=True)
class ModelInputs:
    manifest: Path
    image_embeddings: Optional[Path] = None
    text_embeddings: Optional[Path] = None


@dataclass(frozen=True)
class EvalConfig:
    """Validated evaluation configuration (paths resolved, defaults applied)."""

    seed: int
    real: ModelInputs
    models: dict[str, ModelInputs]
    root: Path = field(default_factory=Path)
    metrics: tuple[str, ...] = METRIC_FAMILIES
    bins: int = ampstats.DEFAULT_BIN_COUNT
    batch_size: int = alignment.DEFAULT_BATCH_SIZE
    levels: int = texture.DEFAULT_LEVELS
    distances: tuple[int, ...] = texture.DEFAULT_DISTANCES
    angles: tuple[float, ...] = texture.DEFAULT_ANGLES
    patch: int = texture.DEFAULT_PATCH
    patch_stride: int = 32
    per_label_target: int = 30
    labels: tuple[str, ...] = labeling.DEFAULT_LABELS
    priority: tuple[str, ...] = labeling.DEFAULT_PRIORITY
    keywords: dict = field(default_factory=lambda: dict(labeling.DEFAULT_KEYWORDS))
    sidecar: bool = False

    def echo(self) -> dict:
        """JSON-serializable copy of the configuration for the report.

        Paths under the config's own directory are echoed relative to
        it, so the echo is reproducible across checkouts and still
        sufficient to re-run.
        """
        def rel(p: Path) -> str:
            try:
                return p.relative_to(self.root).as_posix()
            except ValueError:
                return str(p)

        def inputs(mi: ModelInputs) -> dict:
            out = {"manifest": rel(mi.manifest)}
            if mi.image_embeddings is not None:
                out["image_embeddings"] = rel(mi.image_embeddings)
            if mi.text_embeddings is not None:
                out["text_embeddings"] = rel(mi.text_embeddings)
            return out

        return {
            "seed": self.seed,
            "real": inputs(self.real),
            "models": {tag: inputs(mi) for tag, mi in sorted(self.models.items())},
            "metrics": sorted(self.metrics),
            "bins": self.bins,
            "batch_size": self.batch_size,
            "levels": self.levels,
            "distances": list(self.distances),
            "angles": list(self.angles),
            "patch": self.patch,
            "patch_stride": self.patch_stride,
            "per_label_target": self.per_label_target,
            "labels": list(self.labels),
            "priority": list(self.priority),
            "keywords": {k: list(v) for k, v in sorted(self.keywords.items())},
            "sidecar": self.sidecar,
        }


def load_config(path, seed_override: Optional[int] = None) -> EvalConfig:
    """Parse an evaluation config JSON file, resolving relative paths."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("missing-config", f"no such config: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError("malformed-config", f"{path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("malformed-config", f"{path}: expected a JSON object")
    root = path.parent

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else root / p

    def inputs(obj, context: str) -> ModelInputs:
        if not isinstance(obj, dict) or "manifest" not in obj:
            raise ConfigError("malformed-config", f"{context}: needs a 'manifest' key")
        img = obj.get("image_embeddings")
        txt = obj.get("text_embeddings")
        return ModelInputs(manifest=resolve(obj["manifest"]),
                           image_embeddings=resolve(img) if img else None,
                           text_embeddings=resolve(txt) if txt else None)

    if "real" not in raw or "models" not in raw:
        raise ConfigError("malformed-config", f"{path}: 'real' and 'models' are required")
    if not isinstance(raw["models"], dict) or not raw["models"]:
        raise ConfigError("malformed-config", f"{path}: 'models' must be a non-empty object")

    metrics = tuple(raw.get("metrics", list(METRIC_FAMILIES)))
    bad = [m for m in metrics if m not in METRIC_FAMILIES]
    if bad:
        raise ConfigError("malformed-config", f"unknown metric families: {bad}")

    labels = tuple(raw.get("labels", labeling.DEFAULT_LABELS))
    keywords = raw.get("keywords")
    if keywords is None:
        # default dictionary restricted to the configured label set
        keywords = {k: v for k, v in labeling.DEFAULT_KEYWORDS.items() if k in labels}
    elif isinstance(keywords, str):
        keywords = labeling.load_keywords(resolve(keywords))
    if raw.get("priority") is not None:
        priority = tuple(raw["priority"])
    elif labels == labeling.DEFAULT_LABELS:
        priority = labeling.DEFAULT_PRIORITY
    else:
        priority = labels
    if sorted(priority) != sorted(labels):
        raise ConfigError("invalid-priority", "priority must be a permutation of the label set")
    labeling.validate_dictionary(keywords, labels)

    config = EvalConfig(
        seed=seed_override if seed_override is not None else int(raw.get("seed", 0)),
        real=inputs(raw["real"], "real"),
        models={str(tag): inputs(obj, f"models.{tag}") for tag, obj in raw["models"].items()},
        root=root,
        metrics=metrics,
        bins=int(raw.get("bins", ampstats.DEFAULT_BIN_COUNT)),
        batch_size=int(raw.get("batch_size", alignment.DEFAULT_BATCH_SIZE)),
        levels=int(raw.get("levels", texture.DEFAULT_LEVELS)),
        distances=tuple(int(d) for d in raw.get("distances", texture.DEFAULT_DISTANCES)),
        angles=tuple(float(a) for a in raw.get("angles", texture.DEFAULT_ANGLES)),
        patch=int(raw.get("patch", texture.DEFAULT_PATCH)),
        patch_stride=int(raw.get("patch_stride", 32)),
        per_label_target=int(raw.get("per_label_target", 30)),
        labels=labels,
        priority=priority,
        keywords={k: tuple(v) for k, v in keywords.items()},
        sidecar=bool(raw.get("sidecar", False)),
    )
    for mi in (config.real, *config.models.values()):
        for referenced in (mi.manifest, mi.image_embeddings, mi.text_embeddings):
            if referenced is not None and not referenced.exists():
                raise ConfigError("missing-input", f"input not found: {referenced}")
    return config


@dataclass
class EvalReport:
    """Assembled evaluation results plus everything needed to reproduce them."""

    version: str
    config: dict
    warnings: list[str]
    families: dict[str, dict[str, str]]          # model -> family -> status
    models: dict[str, dict]                      # model -> section
    baseline_cosine: Optional[dict[str, Optional[float]]] = None
    densities: dict = field(default_factory=dict, repr=False)  # for SVG emission
    failed: bool = False

    def to_dict(self) -> dict:
        out = {
            "version": self.version,
            "config": self.config,
            "warnings": list(self.warnings),
            "families": self.families,
            "models": self.models,
        }
        if self.baseline_cosine is not None:
            out["baseline_cosine"] = self.baseline_cosine
        return out


def _label_of(manifest: Manifest, config: EvalConfig):
    return {
        entry.image: entry_label(entry, config.keywords, config.priority, config.labels)
        for entry in manifest.entries
    }


def _empty_cell() -> dict:
    return {key: None for key in MAIN_CSV_COLUMNS if key not in ("model", "category")}


def _kl_family(config: EvalConfig, real_manifest: Manifest, gen_manifest: Manifest,
               cells: dict, densities: dict, warnings: list[str], tag: str) -> None:
    real_h = ampstats.category_histograms(real_manifest, config.labels, config.bins,
                                          config.keywords, config.priority)
    gen_h = ampstats.category_histograms(gen_manifest, config.labels, config.bins,
                                         config.keywords, config.priority)
    for category in (None, *config.labels):
        name = category or "global"
        cell = cells.setdefault(name, _empty_cell())
        p, q = real_h.get(category), gen_h.get(category)
        if p is None or q is None:
            side = "real" if p is None else "generated"
            warnings.append(f"kl[{tag}]: category {name!r} absent from the {side} set")
            continue
        rep = ampstats.kl_divergence(p, q, category)
        cell["kl_nats"] = rep.kl_nats
        cell["saturation_gap"] = rep.saturation_gap
        cell["n_real"] = rep.n_real
        cell["n_gen"] = rep.n_gen
        if rep.n_gen < config.per_label_target and category is not None:
            warnings.append(f"kl[{tag}]: category {name!r} has {rep.n_gen} generated "
                            f"images, target is {config.per_label_target}")
        bucket = densities.setdefault(name, {})
        bucket.setdefault("real", p.density)
        bucket[tag] = q.density


def _texture_family(config: EvalConfig, manifest: Manifest, set_name: str) -> list[dict]:
    rows = texture.texture_profile(
        manifest, None, labels=config.labels, distances=config.distances,
        angles=config.angles, levels=config.levels, patch=config.patch,
        stride=config.patch_stride, keywords=config.keywords, priority=config.priority)
    return [
        {"set": set_name, "label": r.label, "feature": r.feature, "d": r.distance,
         "theta": r.angle, "mean": r.mean, "std": r.std, "n_patches": r.n_patches}
        for r in rows
    ]


def _alignment_family(config: EvalConfig, inputs: ModelInputs, manifest: Manifest,
                      cells: dict, warnings: list[str], tag: str) -> None:
    img = alignment.read_embeddings(inputs.image_embeddings)
    txt = alignment.read_embeddings(inputs.text_embeddings)
    if img.ids != txt.ids:
        raise InputError("id-mismatch", f"{tag}: image/text embedding ids disagree")
    labels_by_image = _label_of(manifest, config)
    unknown = [i for i in img.ids if i not in labels_by_image]
    if unknown:
        raise InputError("id-mismatch",
                         f"{tag}: embedding ids not present in the manifest: {unknown[:3]}")
    pair_labels = [labels_by_image[i] for i in img.ids]

    matrix = alignment.cosine_matrix(img, txt)
    stats = alignment.rank_stats(matrix, config.batch_size)
    cell = cells.setdefault("global", _empty_cell())
    cell.update(rank_mean=stats.mean, rank_median=stats.median,
                rank_variance=stats.variance,
                rank_variance_about_median=stats.variance_about_median,
                n_pairs=stats.n_items)

    label_cosines = alignment.per_label_cosine(img, txt, pair_labels, config.labels)
    cell["cosine_mean"] = float(np.mean(alignment.diagonal_cosine(img, txt)))
    for lc in label_cosines:
        cell = cells.setdefault(lc.label, _empty_cell())
        if lc.absent:
            warnings.append(f"alignment[{tag}]: no embedding pairs for category {lc.label!r}")
            continue
        cell["cosine_mean"] = lc.mean
        cell["n_pairs"] = lc.n_pairs
        idx = [i for i, lab in enumerate(pair_labels) if lab == lc.label]
        if len(idx) >= 2:
            sub = matrix[np.ix_(idx, idx)]
            sub_stats = alignment.rank_stats(sub, config.batch_size)
            cell.update(rank_mean=sub_stats.mean, rank_median=sub_stats.median,
                        rank_variance=sub_stats.variance,
                        rank_variance_about_median=sub_stats.variance_about_median)
        else:
            warnings.append(f"alignment[{tag}]: category {lc.label!r} has too few pairs "
                            f"for rank statistics")


def run_eval(config: EvalConfig) -> EvalReport:
    """Execute every requested metric family for every model."""
    warnings: list[str] = []
    families: dict[str, dict[str, str]] = {}
    models: dict[str, dict] = {}
    densities: dict = {}
    failed = False

    real_manifest = load_manifest(config.real.manifest, config.labels)
    texture_real_rows: Optional[list[dict]] = None
    baseline: Optional[dict[str, Optional[float]]] = None

    if "alignment" in config.metrics:
        if config.real.image_embeddings and config.real.text_embeddings:
            try:
                r_img = alignment.read_embeddings(config.real.image_embeddings)
                r_txt = alignment.read_embeddings(config.real.text_embeddings)
                labels_by_image = _label_of(real_manifest, config)
                pair_labels = [labels_by_image.get(i) for i in r_img.ids]
                baseline = {
                    lc.label: (None if lc.absent else lc.mean)
                    for lc in alignment.per_label_cosine(r_img, r_txt, pair_labels,
                                                         config.labels)
                }
            except SarvalError as exc:
                warnings.append(f"baseline cosine unavailable: {exc}")
        else:
            warnings.append("baseline cosine unavailable: real embeddings not configured")

    for tag in sorted(config.models):
        inputs = config.models[tag]
        cells: dict[str, dict] = {}
        section: dict = {"categories": cells}
        status: dict[str, str] = {}
        gen_manifest = load_manifest(inputs.manifest, config.labels)

        if "kl" in config.metrics:
            try:
                _kl_family(config, real_manifest, gen_manifest, cells, densities,
                           warnings, tag)
                status["kl"] = "ok"
            except SarvalError as exc:
                status["kl"] = f"failed: {exc}"
                failed = True

        if "texture" in config.metrics:
            try:
                if texture_real_rows is None:
                    texture_real_rows = _texture_family(config, real_manifest, "real")
                section["texture"] = texture_real_rows + _texture_family(
                    config, gen_manifest, "gen")
                status["texture"] = "ok"
            except SarvalError as exc:
                status["texture"] = f"failed: {exc}"
                failed = True

        if "alignment" in config.metrics:
            if inputs.image_embeddings and inputs.text_embeddings:
                try:
                    _alignment_family(config, inputs, gen_manifest, cells, warnings, tag)
                    status["alignment"] = "ok"
                except SarvalError as exc:
                    status["alignment"] = f"failed: {exc}"
                    failed = True
            else:
                status["alignment"] = "absent: embeddings not configured"
                warnings.append(f"alignment[{tag}]: embedding files not configured")

        # Flag requested-but-empty cells explicitly.
        for name, cell in cells.items():
            cell["absent"] = sorted(
                key for key in ("kl_nats", "rank_mean", "cosine_mean")
                if cell.get(key) is None
            )
        families[tag] = status
        models[tag] = section

    return EvalReport(version=__version__, config=config.echo(), warnings=warnings,
                      families=families, models=models, baseline_cosine=baseline,
                      densities=densities, failed=failed)


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def round6(value, precision: Optional[int] = 6):
    """Round floats to 6 significant digits, recursively; NaN becomes None.

    ``precision=None`` keeps full float precision (NaN still scrubbed so
    the result stays valid strict JSON).
    """
    if isinstance(value, float):
        if math.isnan(value):
            return None
        return value if precision is None else float(f"{value:.{precision}g}")
    if isinstance(value, dict):
        return {k: round6(v, precision) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round6(v, precision) for v in value]
    return value


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.6g}"
    return str(value)


def emit_json(report: EvalReport, path, full_precision: bool = False) -> None:
    data = round6(report.to_dict(), precision=None if full_precision else 6)
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def emit_csv(report: EvalReport, path) -> None:
    """Main metric table, one row per (model, category), global first."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MAIN_CSV_COLUMNS)
        for tag in sorted(report.models):
            cells = report.models[tag]["categories"]
            order = ["global"] + sorted(k for k in cells if k != "global")
            for name in order:
                cell = cells[name]
                writer.writerow([tag, name] + [
                    _fmt(cell.get(col)) for col in MAIN_CSV_COLUMNS[2:]
                ])


def emit_texture_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TEXTURE_CSV_COLUMNS)
        for tag in sorted(report.models):
            for row in report.models[tag].get("texture", []):
                writer.writerow([tag, row["set"], row["label"], row["feature"],
                                 row["d"], _fmt(row["theta"]), _fmt(row["mean"]),
                                 _fmt(row["std"]), row["n_patches"]])


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def density_svg(series: dict[str, np.ndarray], title: str,
                width: int = 640, height: int = 360) -> str:
    """Overlay per-bin densities as polylines in a standalone SVG."""
    pad = 40
    names = sorted(series)
    peak = max(float(np.max(series[n])) for n in names) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        f'stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for i, name in enumerate(names):
        dens = np.asarray(series[name], dtype=np.float64)
        n = dens.size
        xs = pad + (np.arange(n) + 0.5) / n * (width - 2 * pad)
        ys = (height - pad) - dens / peak * (height - 2 * pad)
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 16 * i + 12}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="12" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_svg_histograms(report: EvalReport, out_dir) -> list[Path]:
    """One SVG per category overlaying real and generated amplitude densities."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(report.densities):
        svg = density_svg(report.densities[name], f"amplitude density: {name}")
        target = out_dir / f"{name}.svg"
        target.write_text(svg, encoding="utf-8")
        written.append(target)
    return written


def emit(report: EvalReport, fmt: str, path) -> None:
    """Write one report artifact: ``json``, ``csv`` or ``svg-histograms``."""
    if fmt == "json":
        emit_json(report, path)
    elif fmt == "csv":
        emit_csv(report, path)
    elif fmt == "svg-histograms":
        emit_svg_histograms(report, path)
    else:
        raise ConfigError("unknown-format", f"unsupported report format {fmt!r}")


def emit_all(report: EvalReport, out_dir) -> list[Path]:
    """Standard report bundle: JSON, CSVs, SVGs, optional full-precision sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "report.json", out_dir / "report.csv", out_dir / "texture.csv"]
    emit_json(report, written[0])
    emit_csv(report, written[1])
    emit_texture_csv(report, written[2])
    written.extend(emit_svg_histograms(report, out_dir / "svg"))
    if report.config.get("sidecar"):
        sidecar = out_dir / "report_full.json"
        emit_json(report, sidecar, full_precision=True)
        written.append(sidecar)
    return written

"""Config validation, evaluation orchestration, deterministic emission."""

import json

import numpy as np
import pytest

from conftest import MINI, full_mask, make_image, write_dataset
from sarval.alignment import EmbeddingSet, write_embeddings
from sarval.errors import ConfigError
from sarval.report import (EvalReport, emit, emit_all, emit_csv, emit_json,
                           load_config, round6, run_eval)


def write_config(path, body: dict) -> None:
    path.write_text(json.dumps(body, indent=2), encoding="utf-8")


def identity_embeddings(tmp_path, ids, dim=12):
    rng = np.random.default_rng(31)
    v = rng.standard_normal((len(ids), dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    img = EmbeddingSet(ids=tuple(ids), vectors=v.astype(np.float32), kind="image")
    txt = EmbeddingSet(ids=tuple(ids), vectors=v.astype(np.float32), kind="text")
    write_embeddings(img, tmp_path / "img.emb")
    write_embeddings(txt, tmp_path / "txt.emb")
    return tmp_path / "img.emb", tmp_path / "txt.emb"


def small_dataset(tmp_path, rng):
    images, captions, masks = {}, {}, {}
    for label in ("forest", "city"):
        for i in range(3):
            name = f"{label}_{i}.ras"
            images[name] = make_image((rng.random((72, 72)) * 0.999).astype(np.float32))
            captions[name] = f"A {label} scene number {i}."
            masks[name] = full_mask(72, 72)
    return write_dataset(tmp_path, images, captions, masks)


class TestLoadConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            load_config(tmp_path / "nope.json")
        assert err.value.code == "missing-config"

    def test_requires_real_and_models(self, tmp_path):
        path = tmp_path / "c.json"
        write_config(path, {"real": {"manifest": "m.json"}})
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_metric_family(self, tmp_path):
        path = tmp_path / "c.json"
        write_config(path, {"real": {"manifest": "m.json"},
                            "models": {"a": {"manifest": "m.json"}},
                            "metrics": ["kl", "psnr"]})
        with pytest.raises(ConfigError):
            load_config(path)

    def test_priority_must_permute_labels(self, tmp_path):
        path = tmp_path / "c.json"
        write_config(path, {"real": {"manifest": "m.json"},
                            "models": {"a": {"manifest": "m.json"}},
                            "labels": ["forest", "city"],
                            "priority": ["forest"]})
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert err.value.code == "invalid-priority"

    def test_missing_manifest_path(self, tmp_path):
        path = tmp_path / "c.json"
        write_config(path, {"real": {"manifest": "absent.json"},
                            "models": {"a": {"manifest": "absent.json"}}})
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert err.value.code == "missing-input"

    def test_missing_embedding_path_is_config_error(self, tmp_path, rng):
        manifest = small_dataset(tmp_path / "d", rng)
        path = tmp_path / "c.json"
        write_config(path, {
            "real": {"manifest": str(manifest)},
            "models": {"a": {"manifest": str(manifest),
                             "image_embeddings": "gone.emb",
                             "text_embeddings": "gone.emb"}},
            "labels": ["forest", "city"], "priority": ["forest", "city"],
        })
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert err.value.code == "missing-input"

    def test_seed_override(self):
        config = load_config(MINI / "eval.json", seed_override=777)
        assert config.seed == 777

    def test_mini_fixture_loads(self):
        config = load_config(MINI / "eval.json")
        assert set(config.models) == {"model-a"}
        assert config.bins == 64


class TestRunEval:
    def test_mini_dataset_full_run(self):
        report = run_eval(load_config(MINI / "eval.json"))
        assert report.families["model-a"] == {"kl": "ok", "texture": "ok",
                                              "alignment": "ok"}
        cells = report.models["model-a"]["categories"]
        assert set(cells) == {"global", *load_config(MINI / "eval.json").labels}
        for cell in cells.values():
            assert cell["kl_nats"] is not None
            assert cell["rank_mean"] is not None
            assert cell["cosine_mean"] is not None
            assert cell["absent"] == []
        assert report.baseline_cosine is not None
        assert not report.failed
        assert any("target is 30" in w for w in report.warnings)

    def test_identical_sets_and_identity_embeddings(self, tmp_path, rng):
        manifest = small_dataset(tmp_path / "data", rng)
        ids = [e["image"] for e in json.loads(manifest.read_text())]
        img, txt = identity_embeddings(tmp_path, ids)
        config_path = tmp_path / "eval.json"
        write_config(config_path, {
            "real": {"manifest": str(manifest), "image_embeddings": str(img),
                     "text_embeddings": str(txt)},
            "models": {"self": {"manifest": str(manifest), "image_embeddings": str(img),
                                "text_embeddings": str(txt)}},
            "labels": ["forest", "city"],
            "priority": ["forest", "city"],
            "bins": 32, "levels": 8, "patch": 32, "patch_stride": 32,
            "distances": [1], "angles": [0],
        })
        report = run_eval(load_config(config_path))
        cells = report.models["self"]["categories"]
        for cell in cells.values():
            assert abs(cell["kl_nats"]) <= 1e-10
            assert cell["rank_mean"] == 1.0
            assert cell["rank_variance"] == 0.0
        # baseline row equals the model row for identical embeddings
        for label in ("forest", "city"):
            assert abs(report.baseline_cosine[label] - cells[label]["cosine_mean"]) < 1e-9

    def test_missing_embeddings_flags_alignment_absent(self, tmp_path, rng):
        manifest = small_dataset(tmp_path / "data", rng)
        config_path = tmp_path / "eval.json"
        write_config(config_path, {
            "real": {"manifest": str(manifest)},
            "models": {"m": {"manifest": str(manifest)}},
            "labels": ["forest", "city"], "priority": ["forest", "city"],
            "bins": 16, "levels": 8, "patch": 32, "patch_stride": 32,
            "distances": [1], "angles": [0],
        })
        report = run_eval(load_config(config_path))
        status = report.families["m"]
        assert status["kl"] == "ok"
        assert status["texture"] == "ok"
        assert status["alignment"].startswith("absent")
        assert not report.failed
        cells = report.models["m"]["categories"]
        assert "rank_mean" in cells["global"]["absent"] or \
            cells["global"]["rank_mean"] is None

    def test_failed_family_marks_report(self, tmp_path, rng):
        manifest = small_dataset(tmp_path / "data", rng)
        bad = tmp_path / "bad.emb"
        bad.write_bytes(b"EMB1garbage")
        config_path = tmp_path / "eval.json"
        write_config(config_path, {
            "real": {"manifest": str(manifest)},
            "models": {"m": {"manifest": str(manifest),
                             "image_embeddings": str(bad),
                             "text_embeddings": str(bad)}},
            "labels": ["forest", "city"], "priority": ["forest", "city"],
            "metrics": ["kl", "alignment"],
            "bins": 16,
        })
        report = run_eval(load_config(config_path))
        assert report.failed
        assert report.families["m"]["alignment"].startswith("failed")
        assert report.families["m"]["kl"] == "ok"


class TestEmission:
    def test_same_report_twice_identical_bytes(self, tmp_path):
        report = run_eval(load_config(MINI / "eval.json"))
        emit(report, "json", tmp_path / "a.json")
        emit(report, "json", tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        emit(report, "csv", tmp_path / "a.csv")
        emit(report, "csv", tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_empty_report_has_header_only(self, tmp_path):
        report = EvalReport(version="0", config={}, warnings=[], families={}, models={})
        emit_csv(report, tmp_path / "empty.csv")
        lines = (tmp_path / "empty.csv").read_text().splitlines()
        assert len(lines) == 1 and lines[0].startswith("model,category,")

    def test_svg_per_category(self, tmp_path):
        report = run_eval(load_config(MINI / "eval.json"))
        written = emit_all(report, tmp_path / "out")
        svgs = sorted(p.name for p in (tmp_path / "out" / "svg").glob("*.svg"))
        assert "global.svg" in svgs and "forest.svg" in svgs
        content = (tmp_path / "out" / "svg" / "global.svg").read_text()
        assert content.startswith("<svg") and "polyline" in content
        assert (tmp_path / "out" / "report.json") in written

    def test_sidecar_written_when_enabled(self, tmp_path):
        raw = json.loads((MINI / "eval.json").read_text())
        raw["sidecar"] = True
        cfg = tmp_path / "cfg.json"
        # keep fixture-relative paths working
        for section in ("real",):
            for key, value in raw[section].items():
                raw[section][key] = str(MINI / value)
        for tag in raw["models"]:
            for key, value in raw["models"][tag].items():
                raw["models"][tag][key] = str(MINI / value)
        write_config(cfg, raw)
        report = run_eval(load_config(cfg))
        emit_all(report, tmp_path / "out")
        full = json.loads((tmp_path / "out" / "report_full.json").read_text())
        rounded = json.loads((tmp_path / "out" / "report.json").read_text())
        a = full["models"]["model-a"]["categories"]["global"]["kl_nats"]
        b = rounded["models"]["model-a"]["categories"]["global"]["kl_nats"]
        assert abs(a - b) < 1e-6 and a != b  # sidecar keeps full precision

    def test_round6(self):
        assert round6(0.12345678) == 0.123457
        assert round6(float("nan")) is None
        assert round6({"a": [1.23456789, 2]}) == {"a": [1.23457, 2]}
        assert round6(1.23456789e-7, precision=None) == 1.23456789e-7

    def test_matches_frozen_golden_report(self, tmp_path):
        report = run_eval(load_config(MINI / "eval.json"))
        emit_json(report, tmp_path / "fresh.json")
        golden = (MINI / "golden_report.json").read_bytes()
        assert (tmp_path / "fresh.json").read_bytes() == golden

"""Archive parsing, MAWC, block aggregation, LoRA materialization."""

import json
import struct

import numpy as np
import pytest

from sarval.checkpoint import (GroupRule, LoraSpec, TensorArchive, block_aggregate,
                               load_rules, lora_delta, mawc, merge_lora,
                               merge_lora_archive, parse_archive, write_archive)
from sarval.errors import ConfigError, InputError


def raw_archive(header: dict, payload: bytes) -> bytes:
    head = json.dumps(header).encode()
    return struct.pack("<Q", len(head)) + head + payload


def archive_of(tmp_path, name, tensors) -> TensorArchive:
    path = tmp_path / f"{name}.ckpt"
    write_archive(tensors, path)
    return parse_archive(path)


class TestArchive:
    def test_round_trip_f32(self, tmp_path, rng):
        w = rng.standard_normal((2, 2)).astype(np.float32)
        arc = archive_of(tmp_path, "a", {"w": w})
        assert arc.names() == ["w"]
        got = arc.tensor("w")
        assert got.shape == (2, 2)
        assert np.array_equal(got, w)

    def test_f16_widened_to_f32(self, tmp_path, rng):
        w16 = rng.standard_normal(8).astype(np.float16)
        arc = archive_of(tmp_path, "h", {"w": w16})
        got = arc.tensor("w")
        assert got.dtype == np.float32
        assert np.array_equal(got, w16.astype(np.float32))

    def test_empty_archive_valid(self, tmp_path):
        arc = archive_of(tmp_path, "e", {})
        assert arc.names() == []

    def test_metadata_tolerated(self, tmp_path):
        path = tmp_path / "m.ckpt"
        write_archive({"w": np.zeros(2, dtype=np.float32)}, path,
                      metadata={"origin": "test"})
        arc = parse_archive(path)
        assert arc.metadata == {"origin": "test"}
        assert arc.names() == ["w"]

    def test_truncated_payload(self, tmp_path):
        header = {"w": {"dtype": "F32", "shape": [4], "data_offsets": [0, 16]}}
        path = tmp_path / "t.ckpt"
        path.write_bytes(raw_archive(header, b"\x00" * 8))
        with pytest.raises(InputError) as err:
            parse_archive(path)
        assert err.value.code == "truncated-payload"

    def test_duplicate_name(self, tmp_path):
        head = (b'{"w": {"dtype": "F32", "shape": [1], "data_offsets": [0, 4]}, '
                b'"w": {"dtype": "F32", "shape": [1], "data_offsets": [4, 8]}}')
        path = tmp_path / "d.ckpt"
        path.write_bytes(struct.pack("<Q", len(head)) + head + b"\x00" * 8)
        with pytest.raises(InputError) as err:
            parse_archive(path)
        assert err.value.code == "duplicate-tensor"

    def test_overlapping_ranges(self, tmp_path):
        header = {"a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
                  "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]}}
        path = tmp_path / "o.ckpt"
        path.write_bytes(raw_archive(header, b"\x00" * 12))
        with pytest.raises(InputError) as err:
            parse_archive(path)
        assert err.value.code == "overlapping-ranges"

    def test_size_inconsistent_with_shape(self, tmp_path):
        header = {"w": {"dtype": "F32", "shape": [3], "data_offsets": [0, 8]}}
        path = tmp_path / "s.ckpt"
        path.write_bytes(raw_archive(header, b"\x00" * 8))
        with pytest.raises(InputError) as err:
            parse_archive(path)
        assert err.value.code == "payload-size-mismatch"

    def test_unsupported_dtype(self, tmp_path):
        header = {"w": {"dtype": "I64", "shape": [1], "data_offsets": [0, 8]}}
        path = tmp_path / "u.ckpt"
        path.write_bytes(raw_archive(header, b"\x00" * 8))
        with pytest.raises(InputError) as err:
            parse_archive(path)
        assert err.value.code == "unsupported-dtype"

    def test_header_longer_than_file(self, tmp_path):
        path = tmp_path / "hl.ckpt"
        path.write_bytes(struct.pack("<Q", 10_000) + b"{}")
        with pytest.raises(InputError) as err:
            parse_archive(path)
        assert err.value.code == "malformed-header"


class TestMawc:
    def test_identical_archives_zero(self, tmp_path, rng):
        tensors = {"a": rng.standard_normal(16).astype(np.float32),
                   "b": rng.standard_normal((4, 4)).astype(np.float32)}
        arc = archive_of(tmp_path, "x", tensors)
        result = mawc(arc, arc, threshold=0.0)
        assert [d.mawc for d in result.deltas] == [0.0, 0.0]

    def test_hand_case(self, tmp_path):
        before = archive_of(tmp_path, "b", {"w": np.array([1.0, 2.0, 3.0], np.float32)})
        after = archive_of(tmp_path, "a", {"w": np.array([1.5, 2.0, 2.0], np.float32)})
        result = mawc(before, after, threshold=0.0)
        assert result.deltas[0].mawc == 0.5
        assert result.deltas[0].param_count == 3

    def test_below_resolution_threshold(self, tmp_path):
        before = archive_of(tmp_path, "b0", {"w": np.array([0.0], np.float32)})
        after = archive_of(tmp_path, "a0", {"w": np.array([3e-4], np.float32)})
        result = mawc(before, after, threshold=5e-4)
        assert result.deltas[0].mawc == 0.0
        assert result.deltas[0].changed_fraction == 0.0

    def test_changed_fraction_strictly_above_threshold(self, tmp_path):
        before = archive_of(tmp_path, "b1", {"w": np.zeros(4, np.float32)})
        after = archive_of(tmp_path, "a1",
                           {"w": np.array([0.0, 1e-4, 1e-3, 2e-3], np.float32)})
        d = mawc(before, after, threshold=5e-4).deltas[0]
        assert d.changed_fraction == 0.5

    def test_symmetric_in_argument_order(self, tmp_path, rng):
        b = archive_of(tmp_path, "s0", {"w": rng.standard_normal(32).astype(np.float32)})
        a = archive_of(tmp_path, "s1", {"w": rng.standard_normal(32).astype(np.float32)})
        assert mawc(b, a, 1e-4).deltas == mawc(a, b, 1e-4).deltas

    def test_zero_iff_equal_up_to_threshold(self, tmp_path, rng):
        w = rng.standard_normal(64).astype(np.float32)
        noise = rng.uniform(-4e-4, 4e-4, 64).astype(np.float32)
        b = archive_of(tmp_path, "z0", {"w": w})
        a = archive_of(tmp_path, "z1", {"w": w + noise})
        assert mawc(b, a, 5e-4).deltas[0].mawc == 0.0
        a2 = archive_of(tmp_path, "z2", {"w": w + np.float32(1e-2)})
        assert mawc(b, a2, 5e-4).deltas[0].mawc > 0.0

    def test_unmatched_names_reported(self, tmp_path, rng):
        b = archive_of(tmp_path, "u0", {"w": np.zeros(2, np.float32),
                                        "old": np.zeros(2, np.float32)})
        a = archive_of(tmp_path, "u1", {"w": np.zeros(2, np.float32),
                                        "new": np.zeros(2, np.float32)})
        result = mawc(b, a)
        assert result.only_before == ["old"]
        assert result.only_after == ["new"]
        assert [d.layer_name for d in result.deltas] == ["w"]

    def test_shape_mismatch_fatal(self, tmp_path):
        b = archive_of(tmp_path, "m0", {"w": np.zeros(2, np.float32)})
        a = archive_of(tmp_path, "m1", {"w": np.zeros(3, np.float32)})
        with pytest.raises(InputError) as err:
            mawc(b, a)
        assert err.value.code == "shape-mismatch"


class TestBlockAggregate:
    def mk_deltas(self, values):
        from sarval.checkpoint import WeightDelta
        return [WeightDelta(layer_name=name, mawc=v, param_count=count,
                            changed_fraction=0.0)
                for name, v, count in values]

    def test_unweighted_mean(self):
        deltas = self.mk_deltas([("blk.l1", 0.2, 10), ("blk.l2", 0.4, 1000)])
        rules = [GroupRule(block="blk", subblock="res", prefix="blk.")]
        out = block_aggregate(deltas, rules)
        assert len(out) == 1
        assert abs(out[0].mawc - 0.3) < 1e-12
        assert out[0].n_layers == 2

    def test_weighted_mean(self):
        deltas = self.mk_deltas([("blk.l1", 0.2, 10), ("blk.l2", 0.4, 30)])
        rules = [GroupRule(block="blk", subblock="res", prefix="blk.")]
        out = block_aggregate(deltas, rules, weighted=True)
        assert abs(out[0].mawc - 0.35) < 1e-12

    def test_no_rules_goes_ungrouped(self):
        out = block_aggregate(self.mk_deltas([("x", 0.1, 1)]), [])
        assert out[0].block == "ungrouped" and out[0].subblock == "ungrouped"

    def test_first_match_wins_and_order_matters(self):
        deltas = self.mk_deltas([("down.attn.q", 0.5, 1)])
        r1 = GroupRule(block="A", subblock="a", regex="attn")
        r2 = GroupRule(block="B", subblock="b", prefix="down.")
        assert block_aggregate(deltas, [r1, r2])[0].block == "A"
        assert block_aggregate(deltas, [r2, r1])[0].block == "B"

    def test_rule_validation(self):
        with pytest.raises(ConfigError):
            GroupRule(block="x", subblock="y")
        with pytest.raises(ConfigError):
            GroupRule(block="x", subblock="y", prefix="a", regex="b")

    def test_load_rules(self, tmp_path):
        path = tmp_path / "g.json"
        path.write_text(json.dumps([
            {"prefix": "down.", "block": "down", "subblock": "res"},
            {"regex": "attn[0-9]", "block": "down", "subblock": "attn"},
        ]))
        rules = load_rules(path)
        assert rules[0].prefix == "down." and rules[1].regex == "attn[0-9]"


class TestLora:
    def test_zero_b_gives_zero_delta(self, rng):
        spec = LoraSpec(r=4, alpha=8.0, A=rng.standard_normal((6, 4)),
                        B=np.zeros((4, 5)))
        assert np.all(lora_delta(spec) == 0.0)

    def test_hand_case(self):
        spec = LoraSpec(r=1, alpha=2.0, A=np.array([[1.0], [2.0]]),
                        B=np.array([[3.0, 4.0]]))
        assert np.array_equal(lora_delta(spec), [[6.0, 8.0], [12.0, 16.0]])

    def test_alpha_linearity(self, rng):
        A = rng.standard_normal((5, 2))
        B = rng.standard_normal((2, 7))
        d1 = lora_delta(LoraSpec(r=2, alpha=1.0, A=A, B=B))
        d2 = lora_delta(LoraSpec(r=2, alpha=2.0, A=A, B=B))
        assert np.allclose(d2, 2.0 * d1, atol=1e-12)

    def test_rank_bounded_by_r(self, rng):
        for _ in range(10):
            m, n, r = (int(x) for x in rng.integers(2, 12, size=3))
            r = min(r, m, n)
            spec = LoraSpec(r=r, alpha=float(rng.uniform(0.5, 4)),
                            A=rng.standard_normal((m, r)), B=rng.standard_normal((r, n)))
            sv = np.linalg.svd(lora_delta(spec), compute_uv=False)
            if sv.size > r:
                assert np.all(sv[r:] < 1e-8 * sv[0])

    def test_merge_zero_spec_identity(self, rng):
        W = rng.standard_normal((4, 4))
        spec = LoraSpec(r=2, alpha=1.0, A=rng.standard_normal((4, 2)), B=np.zeros((2, 4)))
        assert np.array_equal(merge_lora(W, spec), W)

    def test_merge_elementwise(self):
        spec = LoraSpec(r=1, alpha=2.0, A=np.array([[1.0], [2.0]]),
                        B=np.array([[3.0, 4.0]]))
        out = merge_lora(np.eye(2), spec)
        assert np.array_equal(out, np.eye(2) + np.array([[6.0, 8.0], [12.0, 16.0]]))

    def test_cross_module_mawc_consistency(self, tmp_path, rng):
        W = rng.standard_normal((6, 6)).astype(np.float32)
        spec = LoraSpec(r=2, alpha=1.0,
                        A=rng.standard_normal((6, 2)).astype(np.float32),
                        B=rng.standard_normal((2, 6)).astype(np.float32))
        merged = merge_lora(W, spec).astype(np.float32)
        b = archive_of(tmp_path, "w0", {"w": W})
        a = archive_of(tmp_path, "w1", {"w": merged})
        got = mawc(b, a, threshold=0.0).deltas[0].mawc
        expected = float(np.mean(np.abs(merged.astype(np.float64) - W.astype(np.float64))))
        assert abs(got - expected) < 1e-12

    def test_dim_mismatch(self, rng):
        with pytest.raises(InputError):
            LoraSpec(r=2, alpha=1.0, A=rng.standard_normal((4, 3)),
                     B=rng.standard_normal((2, 4)))
        spec = LoraSpec(r=1, alpha=1.0, A=np.ones((2, 1)), B=np.ones((1, 2)))
        with pytest.raises(InputError):
            merge_lora(np.eye(3), spec)

    def test_merge_archive(self, tmp_path, rng):
        W = rng.standard_normal((3, 3)).astype(np.float32)
        other = rng.standard_normal(4).astype(np.float32)
        A = rng.standard_normal((3, 2)).astype(np.float32)
        B = rng.standard_normal((2, 3)).astype(np.float32)
        base = archive_of(tmp_path, "base", {"layer.weight": W, "other": other})
        lora = archive_of(tmp_path, "lora", {"layer.weight.lora_A": A,
                                             "layer.weight.lora_B": B})
        merged = merge_lora_archive(base, lora, alpha=1.0, rank=2)
        expected = merge_lora(W, LoraSpec(r=2, alpha=1.0, A=A, B=B)).astype(np.float32)
        assert np.array_equal(merged["layer.weight"], expected)
        assert np.array_equal(merged["other"], other)

    def test_merge_archive_missing_factor(self, tmp_path, rng):
        base = archive_of(tmp_path, "b2", {"w": np.eye(2, dtype=np.float32)})
        lora = archive_of(tmp_path, "l2",
                          {"w.lora_A": rng.standard_normal((2, 1)).astype(np.float32)})
        with pytest.raises(InputError):
            merge_lora_archive(base, lora, alpha=1.0, rank=1)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from octgrpo.codec import (
    OctantSequence,
    decode_latent,
    encode_latent,
    group,
    locality_stats,
    morton_decode,
    morton_encode,
    morton_positions,
    raster_positions,
    read_tokens,
    ungroup,
    write_tokens,
)
from octgrpo.errors import CodecError, FormatError
from octgrpo.shapes import ShapeSpec, gen_primitive
from octgrpo.voxel import VoxelGrid, iou


def interleave(x, y, z, bits):
    code = 0
    for b in range(bits):
        code |= ((x >> b) & 1) << (3 * b)
        code |= ((y >> b) & 1) << (3 * b + 1)
        code |= ((z >> b) & 1) << (3 * b + 2)
    return code


def latent_oracle(occ):
    dx, dy, dz = occ.shape
    out = np.zeros((dx // 4, dy // 4, dz // 4, 8))
    for lx in range(dx // 4):
        for ly in range(dy // 4):
            for lz in range(dz // 4):
                for sz in range(2):
                    for sy in range(2):
                        for sx in range(2):
                            x0, y0, z0 = 4 * lx + 2 * sx, 4 * ly + 2 * sy, 4 * lz + 2 * sz
                            out[lx, ly, lz, sz * 4 + sy * 2 + sx] = occ[x0:x0 + 2, y0:y0 + 2, z0:z0 + 2].mean()
    return out


def group_oracle(lat, depth):
    n = 2**depth
    s = lat.shape[0] // n
    rows = []
    for code in range(n**3):
        bx, by, bz = (int(v) for v in morton_decode(code, n))
        feats = []
        for cell in range(s**3):
            cx, cy, cz = (int(v) for v in morton_decode(cell, s)) if s > 1 else (0, 0, 0)
            feats.extend(lat[bx * s + cx, by * s + cy, bz * s + cz])
        rows.append(feats)
    return np.array(rows)


class TestMorton:
    def test_convention(self):
        assert morton_encode(0, 0, 0) == 0
        assert morton_encode(1, 0, 0) == 1
        assert morton_encode(0, 1, 0) == 2
        assert morton_encode(0, 0, 1) == 4
        assert morton_encode(7, 7, 7) == 511

    @pytest.mark.parametrize("side", [2, 4, 8, 16])
    def test_matches_bitwise_oracle(self, side):
        bits = side.bit_length() - 1
        for x in range(side):
            for y in range(side):
                for z in range(side):
                    assert morton_encode(x, y, z, side) == interleave(x, y, z, bits)

    def test_vectorized_inverse(self):
        codes = np.arange(4096)
        x, y, z = morton_decode(codes, 16)
        assert np.array_equal(morton_encode(x, y, z, 16), codes)

    def test_out_of_range(self):
        with pytest.raises(CodecError):
            morton_encode(8, 0, 0, 8)
        with pytest.raises(CodecError):
            morton_decode(512, 8)
        with pytest.raises(CodecError):
            morton_encode(-1, 0, 0, 8)


class TestLatent:
    def test_full_and_empty(self):
        assert np.all(encode_latent(VoxelGrid.full()) == 1.0)
        assert np.all(encode_latent(VoxelGrid.empty()) == 0.0)

    def test_single_voxel(self):
        occ = np.zeros((64, 64, 64), bool)
        occ[0, 0, 0] = True
        lat = encode_latent(VoxelGrid(occ))
        assert lat[0, 0, 0, 0] == 0.125
        assert lat.sum() == 0.125

    @settings(max_examples=30)
    @given(arrays(bool, (8, 4, 12)))
    def test_matches_loop_oracle(self, occ):
        lat = encode_latent(VoxelGrid(occ))
        assert np.array_equal(lat, latent_oracle(occ))
        assert set(np.unique(lat * 8)) <= set(range(9))

    def test_aligned_box_roundtrip(self):
        g = gen_primitive(ShapeSpec("box", {"size": 32, "ox": 16, "oy": 16, "oz": 0}))
        assert decode_latent(encode_latent(g)) == g

    @settings(max_examples=30)
    @given(arrays(bool, (4, 4, 4, 2, 2, 2)))
    def test_uniform_suboctants_roundtrip(self, blocks):
        occ = np.repeat(np.repeat(np.repeat(blocks.reshape(8, 8, 8)[:4, :4, :4], 2, 0), 2, 1), 2, 2)
        g = VoxelGrid(occ)
        assert decode_latent(encode_latent(g)) == g

    def test_threshold_inclusive(self):
        lat = np.zeros((1, 1, 1, 8))
        lat[0, 0, 0, 5] = 0.5  # sz=1, sy=0, sx=1
        occ = decode_latent(lat).occupancy
        assert occ[2:4, 0:2, 2:4].all()
        assert occ.sum() == 8

    def test_sphere_fidelity(self):
        g = gen_primitive(ShapeSpec("sphere", {"radius": 24}))
        assert iou(decode_latent(encode_latent(g)), g) >= 0.90

    def test_bad_latent_shape(self):
        with pytest.raises(CodecError):
            decode_latent(np.zeros((4, 4, 4, 7)))


class TestGrouping:
    @pytest.mark.parametrize("depth,width", [(1, 8 * 512), (2, 8 * 64), (3, 64), (4, 8)])
    def test_lengths_and_widths(self, depth, width):
        seq = group(np.zeros((16, 16, 16, 8)), depth)
        assert seq.length == len(seq.features) == 8**depth
        assert seq.width == width

    @pytest.mark.parametrize("depth", [1, 2, 3, 4])
    def test_matches_oracle(self, depth, rng):
        lat = rng.random((16, 16, 16, 8))
        seq = group(lat, depth)
        assert np.array_equal(seq.features, group_oracle(lat, depth))
        assert np.array_equal(seq.positions, morton_positions(2**depth))

    @settings(max_examples=25)
    @given(st.integers(1, 4), st.integers(0, 2**31))
    def test_roundtrip(self, depth, seed):
        lat = np.random.default_rng(seed).random((16, 16, 16, 8))
        assert np.array_equal(ungroup(group(lat, depth)), lat)

    def test_shuffled_positions_rejected(self, rng):
        seq = group(rng.random((16, 16, 16, 8)), 3)
        perm = rng.permutation(seq.length)
        bad = OctantSequence(3, seq.positions[perm], features=seq.features)
        with pytest.raises(CodecError, match="positions-not-morton"):
            ungroup(bad)

    def test_indices_only_rejected(self):
        seq = OctantSequence(1, morton_positions(2), indices=np.zeros(8, int))
        with pytest.raises(CodecError):
            ungroup(seq)

    def test_depth_mismatch(self):
        with pytest.raises(CodecError):
            group(np.zeros((8, 8, 8, 8)), 4)
        with pytest.raises(CodecError):
            group(np.zeros((16, 16, 16, 8)), 5)


class TestLocality:
    @staticmethod
    def raster_oracle(side):
        pts = [(x, y, z) for z in range(side) for y in range(side) for x in range(side)]
        d = [max(abs(a - b) for a, b in zip(p, q)) for p, q in zip(pts, pts[1:])]
        return sum(d) / len(d)

    @pytest.mark.parametrize("side", [4, 8, 16])
    def test_morton_beats_raster(self, side):
        assert locality_stats(morton_positions(side)) < locality_stats(raster_positions(side))

    def test_side_two_orders_coincide(self):
        # a single 2x2x2 block: both orders are the same x-fastest sequence
        assert np.array_equal(morton_positions(2), raster_positions(2))
        assert locality_stats(morton_positions(2)) == locality_stats(raster_positions(2)) == 1.0

    def test_raster_exact(self):
        assert locality_stats(raster_positions(8)) == pytest.approx(self.raster_oracle(8), abs=1e-12)

    def test_single_and_invalid(self):
        assert locality_stats(np.array([[0, 0, 0]])) == 0.0
        with pytest.raises(CodecError):
            locality_stats(np.array([[0, 0, 0], [0, 0, 0]]))


class TestTokenFiles:
    def test_feature_roundtrip(self, tmp_path, rng):
        seq = group(rng.random((16, 16, 16, 8)).astype(np.float32).astype(float), 2)
        write_tokens(tmp_path / "t.crtk", seq)
        back, vocab = read_tokens(tmp_path / "t.crtk")
        assert vocab == 0 and back.depth == 2
        assert np.array_equal(back.features, seq.features)

    def test_index_roundtrip(self, tmp_path, rng):
        idx = rng.integers(0, 300, 512)
        seq = OctantSequence(3, morton_positions(8), indices=idx)
        write_tokens(tmp_path / "t.crtk", seq, vocab=300)
        data = (tmp_path / "t.crtk").read_bytes()
        assert data[:4] == b"CRTK" and len(data) == 20 + 2 * 512
        back, vocab = read_tokens(tmp_path / "t.crtk")
        assert vocab == 300 and np.array_equal(back.indices, idx)

    def test_corrupt(self, tmp_path):
        (tmp_path / "t").write_bytes(b"CRTK" + b"\x01\x00\x00\x00" * 2)
        with pytest.raises(FormatError):
            read_tokens(tmp_path / "t")
        (tmp_path / "u").write_bytes(b"NOPE" + b"\0" * 40)
        with pytest.raises(FormatError, match="magic"):
            read_tokens(tmp_path / "u")

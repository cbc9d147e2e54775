"""Event streams: voxelization, IO round-trips, simulator, transforms."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evlight.events import (Event, EventFormatError, EventStream, VoxelGrid,
                            read_events, simulate_events, transform_grid,
                            voxelize, write_events)


def _stream(width, height, rows):
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    return EventStream(width, height, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def _random_stream(rng, n, width=16, height=12, tmax=100_000):
    t = np.sort(rng.integers(0, tmax + 1, n))
    return EventStream(width, height, t,
                       rng.integers(0, width, n), rng.integers(0, height, n),
                       rng.choice([-1, 1], n))


class TestStreamValidation:
    def test_unsorted_rejected(self):
        with pytest.raises(ValueError, match="non-decreasing"):
            _stream(4, 4, [[5, 0, 0, 1], [3, 1, 1, 1]])

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError, match="x out of range"):
            _stream(4, 4, [[0, 4, 0, 1]])
        with pytest.raises(ValueError, match="y out of range"):
            _stream(4, 4, [[0, 0, 4, 1]])

    def test_bad_polarity_rejected(self):
        with pytest.raises(ValueError, match="polarity"):
            _stream(4, 4, [[0, 0, 0, 2]])

    def test_iteration_yields_events(self):
        s = _stream(4, 4, [[1, 2, 3, -1]])
        assert list(s) == [Event(1, 2, 3, -1)]


class TestVoxelize:
    def test_on_bin_event(self):
        # t* = 5.0 for t = 5000 over [0, 31000] with 32 bins
        s = _stream(8, 8, [[5000, 3, 2, 1]])
        g = voxelize(s, 32, 0, 31000)
        assert g.data[5, 2, 3] == 1.0
        assert g.total_mass() == 1.0
        assert np.count_nonzero(g.data) == 1

    def test_bilinear_split_exact_halves(self):
        # t* = 5.5 at t = 5500 over [0, 31000]
        s = _stream(8, 8, [[5500, 3, 2, 1]])
        g = voxelize(s, 32, 0, 31000)
        assert g.data[5, 2, 3] == 0.5
        assert g.data[6, 2, 3] == 0.5

    def test_boundary_events_full_mass(self):
        s = _stream(4, 4, [[0, 0, 0, 1], [1000, 1, 1, -1]])
        g = voxelize(s, 32, 0, 1000)
        assert g.data[0, 0, 0] == 1.0
        assert g.data[31, 1, 1] == -1.0

    def test_mass_conservation_10k(self, rng):
        s = _random_stream(rng, 10_000)
        g = voxelize(s, 32, 0, 100_000)
        assert abs(g.total_mass() - s.p.sum()) < 1e-4

    def test_matches_direct_accumulation_oracle(self, rng):
        s = _random_stream(rng, 500, width=6, height=5, tmax=999)
        bins = 8
        g = voxelize(s, bins, 0, 999)
        expect = np.zeros((bins, 5, 6))
        for e in s:
            ts = e.t / 999 * (bins - 1)
            b0 = int(np.floor(ts))
            frac = ts - b0
            expect[b0, e.y, e.x] += e.p * (1 - frac)
            if frac > 0 and b0 + 1 < bins:
                expect[b0 + 1, e.y, e.x] += e.p * frac
        assert np.allclose(g.data, expect, atol=1e-9)

    def test_out_of_window_ignored(self):
        s = _stream(4, 4, [[0, 0, 0, 1], [500, 1, 1, 1], [900, 2, 2, 1]])
        g = voxelize(s, 4, 100, 600)
        assert g.total_mass() == 1.0

    def test_empty_stream_zero_grid(self):
        z = np.zeros(0, dtype=np.int64)
        g = voxelize(EventStream(4, 4, z, z, z, z), 32, 0, 100)
        assert g.data.shape == (32, 4, 4) and g.total_mass() == 0.0

    def test_bad_window_rejected(self):
        s = _stream(4, 4, [[0, 0, 0, 1]])
        with pytest.raises(ValueError):
            voxelize(s, 32, 100, 100)

    def test_bins_minimum(self):
        s = _stream(4, 4, [[0, 0, 0, 1]])
        with pytest.raises(ValueError):
            voxelize(s, 1, 0, 100)

    def test_linearity_over_disjoint_sets(self, rng):
        a = _random_stream(rng, 300)
        b = _random_stream(rng, 200)
        both = np.concatenate
        t = both([a.t, b.t]); x = both([a.x, b.x])
        y = both([a.y, b.y]); p = both([a.p, b.p])
        order = np.argsort(t, kind="stable")
        merged = EventStream(16, 12, t[order], x[order], y[order], p[order])
        g = voxelize(merged, 16, 0, 100_000).data
        ga = voxelize(a, 16, 0, 100_000).data
        gb = voxelize(b, 16, 0, 100_000).data
        assert np.allclose(g, ga + gb, atol=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 40),
           st.sampled_from([-1, 1]))
    def test_mass_conserved_single_event(self, t, bins, p):
        s = _stream(4, 4, [[t, 1, 1, p]])
        g = voxelize(s, bins, 0, 10_000)
        assert abs(g.total_mass() - p) < 1e-12


class TestTransformGrid:
    def _grid(self, rng, size=6, bins=4):
        return VoxelGrid(rng.standard_normal((bins, size, size)), bins, size, size)

    def test_rot90_four_times_identity(self, rng):
        g = self._grid(rng)
        out = g
        for _ in range(4):
            out = transform_grid(out, "rot90")
        assert np.array_equal(out.data, g.data)

    def test_hflip_involution(self, rng):
        g = self._grid(rng)
        assert np.array_equal(
            transform_grid(transform_grid(g, "hflip"), "hflip").data, g.data)

    def test_rot180_is_double_rot90(self, rng):
        g = self._grid(rng)
        a = transform_grid(g, "rot180").data
        b = transform_grid(transform_grid(g, "rot90"), "rot90").data
        assert np.array_equal(a, b)

    def test_nonsquare_rot90_rejected(self):
        g = VoxelGrid(np.zeros((2, 3, 4)), 2, 4, 3)
        with pytest.raises(ValueError, match="square"):
            transform_grid(g, "rot90")
        assert transform_grid(g, "hflip").data.shape == (2, 3, 4)

    def test_unknown_op(self, rng):
        with pytest.raises(ValueError, match="unknown transform"):
            transform_grid(self._grid(rng), "vflip")


class TestEventIO:
    def test_binary_roundtrip_identical(self, rng, tmp_path):
        s = _random_stream(rng, 1000)
        p = tmp_path / "e.evst"
        write_events(s, str(p))
        r = read_events(str(p))
        assert (r.width, r.height) == (s.width, s.height)
        for a, b in ((r.t, s.t), (r.x, s.x), (r.y, s.y), (r.p, s.p)):
            assert np.array_equal(a, b)
        assert not r.resorted

    def test_empty_body_valid_header(self, tmp_path):
        z = np.zeros(0, dtype=np.int64)
        p = tmp_path / "empty.evst"
        write_events(EventStream(5, 7, z, z, z, z), str(p))
        r = read_events(str(p))
        assert len(r) == 0 and (r.width, r.height) == (5, 7)

    def test_out_of_bounds_names_offset(self, rng, tmp_path):
        s = _random_stream(rng, 3, width=16, height=12)
        p = tmp_path / "e.evst"
        write_events(s, str(p))
        data = bytearray(p.read_bytes())
        # x of record 1 sits 8 bytes into its 14-byte record
        off = 20 + 14 + 8
        data[off:off + 2] = (16).to_bytes(2, "little")
        p.write_bytes(bytes(data))
        with pytest.raises(EventFormatError) as e:
            read_events(str(p))
        assert e.value.offset == 20 + 14

    def test_bad_polarity_offset(self, rng, tmp_path):
        s = _random_stream(rng, 2)
        p = tmp_path / "e.evst"
        write_events(s, str(p))
        data = bytearray(p.read_bytes())
        data[20 + 12] = 3
        p.write_bytes(bytes(data))
        with pytest.raises(EventFormatError) as e:
            read_events(str(p))
        assert e.value.offset == 20

    def test_truncated_record(self, rng, tmp_path):
        s = _random_stream(rng, 4)
        p = tmp_path / "e.evst"
        write_events(s, str(p))
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(EventFormatError):
            read_events(str(p))

    def test_unsorted_input_resorted_with_flag(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("t,x,y,p\n50,1,1,1\n10,0,0,-1\n")
        r = read_events(str(p), width=4, height=4)
        assert r.resorted
        assert list(r.t) == [10, 50]

    def test_csv_roundtrip(self, rng, tmp_path):
        s = _random_stream(rng, 50)
        p = tmp_path / "e.csv"
        write_events(s, str(p))
        r = read_events(str(p), width=s.width, height=s.height)
        assert np.array_equal(r.t, s.t) and np.array_equal(r.p, s.p)

    def test_csv_bad_line_number(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("t,x,y,p\n1,2,3,1\n4,5\n")
        with pytest.raises(EventFormatError, match="line 3"):
            read_events(str(p))


class TestSimulator:
    def test_static_scene_empty(self):
        f = np.full((6, 6, 3), 0.4)
        s = simulate_events(f, f, 0, 1000, 0.2)
        assert len(s) == 0

    def test_doubling_gives_one_event_per_pixel(self):
        a = np.full((5, 5, 3), 0.2)
        b = a * 2
        s = simulate_events(a, b, 0, 1000, np.log(2.0))
        assert len(s) == 25
        assert np.all(s.p == 1)

    def test_counts_match_per_pixel_oracle(self, rng):
        a = rng.uniform(0.05, 0.9, (7, 9, 3))
        b = rng.uniform(0.05, 0.9, (7, 9, 3))
        theta = 0.3
        s = simulate_events(a, b, 0, 10_000, theta)
        gray = np.array([0.299, 0.587, 0.114])
        d = np.log(np.maximum(b @ gray, 1e-3)) - np.log(np.maximum(a @ gray, 1e-3))
        for y in range(7):
            for x in range(9):
                n = int(np.floor(abs(d[y, x]) / theta + 1e-9))
                got = np.sum((s.x == x) & (s.y == y))
                assert got == n
                if n:
                    sel = s.p[(s.x == x) & (s.y == y)]
                    assert np.all(sel == np.sign(d[y, x]))

    def test_timestamps_in_half_open_window(self, rng):
        a = rng.uniform(0.05, 0.4, (6, 6, 3))
        s = simulate_events(a, np.clip(a * 3, 0, 1), 100, 5000, 0.2)
        assert len(s) > 0
        assert s.t.min() > 100 and s.t.max() <= 5000

    def test_voxelize_static_zero_grid(self):
        f = np.full((4, 4, 3), 0.3)
        s = simulate_events(f, f, 0, 1000, 0.2)
        g = voxelize(s, 8, 0, 1000)
        assert np.all(g.data == 0)

    def test_bad_theta(self):
        f = np.zeros((4, 4, 3))
        with pytest.raises(ValueError, match="theta"):
            simulate_events(f, f, 0, 10, 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            simulate_events(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)), 0, 10, 0.1)

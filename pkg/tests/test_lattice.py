import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interlaced_growth.harness import discretize_profile, random_admissible
from interlaced_growth.hjsolver import MacroProfile
from interlaced_growth.lattice import (
    AdmissibilityError,
    HeightField,
    ParticleArray,
    SiteCoord,
    WindowError,
    check_admissible,
    dual_point,
    export_tiling,
    height_from_particles,
    left_of_site,
    particles_from_height,
    site_to_line_pos,
    tiling_to_csv,
    tiling_to_json,
)

seeds = st.integers(0, 2**32 - 1)


def random_field(seed, side=12, M=4, flips=200):
    rng = np.random.default_rng(seed)
    a = tuple(int(v) for v in rng.integers(-20, 20, 2))
    return random_admissible((a, (a[0] + side - 1, a[1] + side - 1)), M, rng, flips=flips)


def two_line_config():
    # line 0: particles at doubled positions 0 and 4 (labels 0, 1)
    # line 1: particles at 1 and 5 (labels 0, 1)
    return ParticleArray(
        {0: [0, 4], 1: [1, 5]},
        {0: (0, 6), 1: (-1, 5)},
        {0: -1, 1: -1},
    )


class TestCoordinates:
    @pytest.mark.parametrize(
        "x, expected", [((0, 0), (0, -1)), ((1, 0), (-1, 0)), ((0, 1), (1, 0)), ((3, 5), (2, 7))]
    )
    def test_site_to_line_pos(self, x, expected):
        assert site_to_line_pos(x) == expected

    def test_sitecoord_properties(self):
        x = SiteCoord(2, 5)
        assert (x.line, x.doubled_z) == (3, 6)

    @given(st.integers(-50, 50), st.integers(-50, 50))
    def test_dual_point_inverts(self, x1, x2):
        l, d = site_to_line_pos((x1, x2))
        a, b = dual_point(l, d)
        assert (int(a), int(b)) == (x1, x2)

    @given(st.integers(-50, 50), st.integers(-50, 50))
    def test_left_of_site_brackets_site(self, l, k):
        dz = 2 * k + (l % 2)
        a1, a2 = left_of_site(l, dz)
        assert a2 - a1 == l
        # the site lies strictly between x and x + (1, 1)
        assert a1 + a2 - 1 < dz < a1 + a2 + 1


class TestHeights:
    def test_hand_example(self):
        cfg = two_line_config()
        assert cfg.check() == []
        pts = [(0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (-1, 0), (0, 1), (1, 2), (2, 3), (3, 4)]
        expected = [1, 1, 2, 2, 3, 0, 1, 1, 2, 2]
        x1, x2 = np.array(pts).T
        assert cfg.height_at(x1, x2).tolist() == expected

    def test_hand_example_field(self):
        # the box (x1, x2) in [2, 2] x [2, 3] only touches lines 0 and 1
        hf = height_from_particles(two_line_config(), box=((2, 2), (2, 3)))
        assert hf.values.tolist() == [[2, 2]]

    def test_origin_height_anchor(self):
        hf = height_from_particles(two_line_config(), origin_height=10, box=((-1, 0), (0, 0)))
        assert hf.values.tolist() == [[10], [11]]

    def test_uncovered_window(self):
        with pytest.raises(WindowError):
            height_from_particles(two_line_config(), box=((0, 0), (10, 10)))

    def test_fully_packed(self):
        hf = HeightField(SiteCoord(0, 0), np.zeros((6, 6), dtype=int))
        cfg = particles_from_height(hf)
        for l, (lo, hi) in cfg.bounds.items():
            assert cfg.lines[l].tolist() == list(range(lo, hi + 1, 2))
        assert np.all(height_from_particles(cfg).diag == 0)

    def test_all_diagonal_steps_one_gives_no_particles(self):
        x1, _ = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
        cfg = particles_from_height(HeightField(SiteCoord(0, 0), x1))
        assert cfg.n_particles == 0

    @settings(max_examples=50, deadline=None)
    @given(seeds)
    def test_round_trip(self, seed):
        hf = random_field(seed)
        cfg = particles_from_height(hf)
        assert cfg.check() == []
        assert height_from_particles(cfg) == hf

    @settings(max_examples=20, deadline=None)
    @given(seeds)
    def test_circuits_vanish(self, seed):
        hf = height_from_particles(particles_from_height(random_field(seed, side=20)))
        v = hf.values
        d1 = v[1:, :] - v[:-1, :]
        d2 = v[:, 1:] - v[:, :-1]
        for i in range(v.shape[0] - 1):
            for j in range(v.shape[1] - 1):
                assert d1[i, j] + d2[i + 1, j] == d2[i, j] + d1[i, j + 1]

    @settings(max_examples=30, deadline=None)
    @given(seeds, st.integers(-5, 5))
    def test_shift_changes_labels_only(self, seed, c):
        hf = random_field(seed)
        a, b = particles_from_height(hf), particles_from_height(hf.shifted(c))
        assert all(np.array_equal(a.lines[l], b.lines[l]) for l in a.lines)
        assert height_from_particles(b) == hf.shifted(c)

    def test_from_gradients(self):
        hf = random_field(3)
        again = HeightField.from_gradients(hf.origin, hf.origin_height, hf.grad1, hf.grad2)
        assert again == hf

    def test_from_gradients_rejects_curl(self):
        g1 = np.zeros((1, 2), dtype=int)
        g2 = np.zeros((2, 1), dtype=int)
        g2[1, 0] = 1
        with pytest.raises(AdmissibilityError):
            HeightField.from_gradients((0, 0), 0, g1, g2)

    def test_csv_round_trip(self, tmp_path):
        hf = random_field(5)
        hf.to_csv(tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().startswith("x1,x2,h\n")
        assert HeightField.from_csv(tmp_path / "h.csv") == hf


class TestAdmissibility:
    def test_diagonal_two(self):
        v = np.array([[0, 1], [1, 2]])
        v[1, 1] = 3
        rep = check_admissible(HeightField(SiteCoord(4, 7), v))
        assert not rep
        assert rep.kind in ("grad1", "grad2", "diag")

    def test_diagonal_two_location(self):
        # partial steps are fine, the diagonal jumps by 2
        v = np.array([[0, 1], [1, 2]])
        rep = check_admissible(HeightField(SiteCoord(4, 7), v))
        assert not rep and rep.kind == "diag" and rep.location == (4, 7)

    def test_discretised_quarter_slope(self):
        f = MacroProfile.linear((0.25, 0.25), 4)
        hf = discretize_profile(f, 8, ((-20, -20), (20, 20)))
        assert check_admissible(hf, 4)
        assert hf.at(3, 2) == 1

    def test_gap_violation(self):
        x1, _ = np.meshgrid(np.arange(10), np.arange(10), indexing="ij")
        hf = HeightField(SiteCoord(0, 0), x1)
        assert check_admissible(hf)
        rep = check_admissible(hf, 4)
        assert not rep and rep.kind == "gap"

    @settings(max_examples=40, deadline=None)
    @given(seeds)
    def test_random_fields_in_class(self, seed):
        hf = random_field(seed, M=3)
        assert check_admissible(hf, 3)
        # doubled positions: a gap of at most M sites
        assert particles_from_height(hf).max_gap() <= 2 * 3


class TestConfigurationChecks:
    def test_parity(self):
        cfg = ParticleArray({0: [1]}, {0: (0, 4)}, {0: -1})
        assert any("parity" in e for e in cfg.check())

    def test_order(self):
        cfg = ParticleArray({0: [4, 2]}, {0: (0, 6)}, {0: -1})
        assert cfg.check()

    def test_interlacing_break(self):
        # two particles of line 0 with nothing of line 1 between them
        cfg = ParticleArray({0: [0, 4], 1: [5]}, {0: (0, 6), 1: (-1, 5)}, {0: -1, 1: -1})
        assert cfg.check()

    def test_validate_raises(self):
        cfg = ParticleArray({0: [1]}, {0: (0, 4)}, {0: -1})
        with pytest.raises(AdmissibilityError):
            cfg.validate()

    def test_labels_and_positions(self):
        cfg = two_line_config()
        assert cfg.labels(0).tolist() == [0, 1]
        assert cfg.position(1, 1) == 5
        assert cfg.position(2, 1) is None
        assert cfg.n_particles == 4


class TestTiling:
    def test_empty_window(self):
        x1, _ = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
        cells = export_tiling(particles_from_height(HeightField(SiteCoord(0, 0), x1)))
        assert cells and all(c.kind != "vertical" for c in cells)

    @settings(max_examples=30, deadline=None)
    @given(seeds)
    def test_vertical_count(self, seed):
        cfg = particles_from_height(random_field(seed))
        cells = export_tiling(cfg)
        n_vertical = sum(c.kind == "vertical" for c in cells)
        expected = 0
        for l, pos in cfg.lines.items():
            if l + 1 in cfg.lines:
                lo_u, hi_u = cfg.bounds[l + 1]
                expected += int(np.sum((pos >= lo_u - 1) & (pos <= hi_u + 1)))
        assert n_vertical == expected

    def test_kinds_follow_heights(self):
        cfg = particles_from_height(random_field(11))
        for c in export_tiling(cfg):
            x = c.anchor
            occupied = c.doubled_z in set(cfg.lines[c.line].tolist())
            g2 = cfg.height_at(x.x1, x.x2 + 1) - cfg.height_at(x.x1, x.x2)
            assert c.kind == ("vertical" if occupied else ("left" if g2 == 1 else "right"))

    def test_rhombus_shapes(self):
        for kind in ("vertical", "left", "right"):
            from interlaced_growth.lattice import TilingCell

            v = np.array(TilingCell(kind, SiteCoord(0, 0)).vertices())
            sides = np.diff(np.vstack([v, v[:1]]), axis=0)
            # unit rhombus once lines are drawn sqrt(3)/2 apart
            lengths = np.hypot(sides[:, 0], sides[:, 1] * np.sqrt(3) / 2)
            assert np.allclose(lengths, 1.0)

    def test_outputs(self, tmp_path):
        cells = export_tiling(particles_from_height(random_field(2, side=6)))
        tiling_to_csv(cells, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "line,doubled_z,kind" and len(lines) == len(cells) + 1
        doc = json.loads(tiling_to_json(cells))
        assert doc["version"] == 1 and len(doc["cells"]) == len(cells)

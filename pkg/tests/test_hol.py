import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sroireg.hol import BOTTOM, LEFT, RIGHT, TOP, HOLParams, build_hol, chi2_cost, hol_cost_matrix
from sroireg.imagecore import GridPointSet, grid_points


def hol_oracle(points, stride=8, k_max=240):
    """Loop over every ordered pair, applying the direction rule literally."""
    n_layers = k_max // stride - 1
    out = np.zeros((len(points), 4 * n_layers), dtype=np.int64)
    for i, (x, y) in enumerate(points):
        for j, (x2, y2) in enumerate(points):
            if i == j:
                continue
            dx, dy = x2 - x, y2 - y
            k = max(abs(dx), abs(dy))
            if k >= k_max:
                continue
            if dy < 0 and abs(dy) > abs(dx):
                d = TOP
            elif dy > 0 and abs(dy) > abs(dx):
                d = BOTTOM
            elif dx < 0:
                d = LEFT
            else:
                d = RIGHT
            out[i, 4 * (k // stride - 1) + d] += 1
    return out


def chi2_oracle(a, b):
    total = 0.0
    for x, y in zip(a, b):
        if x + y:
            total += (x - y) ** 2 / (x + y)
    return 0.5 * total


point_sets = st.tuples(st.integers(1, 40), st.integers(0, 2**32 - 1)).map(
    lambda t: GridPointSet.from_points(
        np.random.default_rng(t[1]).integers(0, 40, (t[0], 2)) * 8 + 4
    )
)


def test_default_shape():
    p = HOLParams()
    assert p.n_layers == 29
    assert p.length == 116 == 4 * 29
    assert len([k for k in range(1, 240) if k % 8 == 0]) == 29


@pytest.mark.parametrize("stride,k_max", [(0, 240), (8, 8), (8, 244), (-8, 240)])
def test_bad_params(stride, k_max):
    with pytest.raises(ValueError):
        HOLParams(stride, k_max)


def test_single_point_zero():
    d = build_hol(GridPointSet.from_points([[44, 52]]))
    assert d.shape == (1, 116) and not d.any()


def test_empty_set():
    assert build_hol(GridPointSet.from_points([])).shape == (0, 116)


def test_centre_of_3x3():
    g = grid_points(np.ones((24, 24), bool))
    d = build_hol(g)
    centre = g.points.tolist().index([12, 12])
    assert d[centre, :4].tolist() == [1, 1, 3, 3]
    assert not d[centre, 4:].any()


def test_off_stride_rejected():
    with pytest.raises(ValueError, match="stride"):
        build_hol(np.array([[4, 4], [9, 4]]))


@settings(max_examples=60, deadline=None)
@given(point_sets)
def test_matches_loop_oracle(pts):
    np.testing.assert_array_equal(build_hol(pts), hol_oracle(pts.points.tolist()))


@settings(max_examples=60, deadline=None)
@given(point_sets)
def test_count_invariants(pts):
    d = build_hol(pts)
    p = pts.points
    cheb = np.abs(p[:, None] - p[None]).max(axis=-1)
    np.testing.assert_array_equal(d.sum(axis=1), (cheb < 240).sum(axis=1) - 1)
    assert d.max(initial=0) <= len(p) - 1


@settings(max_examples=40, deadline=None)
@given(point_sets, st.integers(-10, 10), st.integers(-10, 10))
def test_translation_invariance(pts, tx, ty):
    moved = GridPointSet.from_points(pts.points + 8 * np.array([tx, ty]))
    np.testing.assert_array_equal(build_hol(pts), build_hol(moved))


@settings(max_examples=40, deadline=None)
@given(point_sets)
def test_mirror_swaps_left_right(pts):
    p = pts.points
    mirrored = p * np.array([-1, 1]) + np.array([8 * 50, 0])  # x -> 400 - x keeps x = 4 mod 8
    d = build_hol(p).reshape(len(p), -1, 4)
    m = build_hol(mirrored).reshape(len(p), -1, 4)
    np.testing.assert_array_equal(m[..., [TOP, BOTTOM]], d[..., [TOP, BOTTOM]])
    np.testing.assert_array_equal(m[..., LEFT], d[..., RIGHT])
    np.testing.assert_array_equal(m[..., RIGHT], d[..., LEFT])


# ---------------------------------------------------------------------------
# chi-square cost

def test_chi2_hand_values():
    a = np.zeros(116)
    b = np.zeros(116)
    assert chi2_cost(a, b) == 0
    a[0], b[1] = 2, 2
    assert chi2_cost(a, b) == 2.0


def test_chi2_length_mismatch():
    with pytest.raises(ValueError):
        chi2_cost(np.zeros(4), np.zeros(5))
    with pytest.raises(ValueError):
        hol_cost_matrix(np.zeros((2, 4)), np.zeros((2, 5)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_chi2_properties(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 5, 116) * (rng.random(116) < 0.5)
    b = rng.integers(0, 5, 116) * (rng.random(116) < 0.5)
    assert chi2_cost(a, b) == pytest.approx(chi2_oracle(a.tolist(), b.tolist()), abs=1e-12)
    assert chi2_cost(a, b) == chi2_cost(b, a)
    assert chi2_cost(a, a) == 0
    assert (chi2_cost(a, b) == 0) == np.array_equal(a, b)


def test_cost_matrix_against_pairwise():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 4, (150, 116))  # spans more than one row chunk
    b = rng.integers(0, 4, (7, 116))
    c = hol_cost_matrix(a, b)
    assert c.shape == (150, 7)
    expect = np.array([[chi2_oracle(x, y) for y in b.tolist()] for x in a.tolist()])
    np.testing.assert_allclose(c, expect, atol=1e-12)
    assert np.all(c >= 0)


def test_identical_sets_zero_diagonal():
    g = grid_points(np.random.default_rng(3).random((64, 64)) < 0.7)
    d = build_hol(g)
    c = hol_cost_matrix(d, d)
    assert c.shape == (len(g), len(g))
    assert not np.diag(c).any()


def test_cost_matrix_unchanged_by_translation():
    g = grid_points(np.random.default_rng(4).random((64, 64)) < 0.6)
    moved = GridPointSet.from_points(g.points + 8)
    ref = build_hol(grid_points(np.ones((32, 32), bool)))
    np.testing.assert_array_equal(hol_cost_matrix(build_hol(g), ref), hol_cost_matrix(build_hol(moved), ref))

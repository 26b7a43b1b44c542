import numpy as np
import pytest

from gconv.domain import (
    Point,
    batch_from_rows,
    homogenize,
    make_entry,
    read_entry,
    regular_grid_entry,
    regular_grid_points,
    write_entry,
)


def test_make_entry_minimal():
    e = make_entry([(0.0, 0.0)], [[1.0]])
    assert e.num_points == 1
    assert e.num_channels == 1
    assert e.ids == (0,)


def test_make_entry_shapes():
    e = make_entry([(0, 0), (1, 0)], np.arange(6.0).reshape(2, 3))
    assert e.num_points == 2
    assert e.num_channels == 3
    assert e.ids == (0, 1)


def test_make_entry_coincident_points_allowed():
    e = make_entry([(0, 0), (0, 0)], [[1.0], [2.0]])
    assert e.num_points == 2
    assert e.points[0] == e.points[1]


def test_make_entry_errors():
    with pytest.raises(ValueError, match="mismatch"):
        make_entry([(0, 0)], [[1.0], [2.0]])
    with pytest.raises(ValueError, match="finite"):
        make_entry([(0, 0)], [[np.nan]])
    with pytest.raises(ValueError, match="finite"):
        make_entry([(np.inf, 0)], [[1.0]])
    with pytest.raises(ValueError, match="duplicate"):
        make_entry([(0, 0), (1, 1)], [[1.0], [2.0]], ids=[3, 3])


def test_homogenize_already_homogeneous():
    a = make_entry([(0, 0), (1, 0)], [[1.0], [2.0]])
    b = make_entry([(0, 0), (1, 0)], [[3.0], [4.0]])
    batch = homogenize([a, b])
    assert batch.num_points == 2
    assert batch.mask.all()
    np.testing.assert_array_equal(batch.values[:, :, 0], [[1, 2], [3, 4]])


def test_homogenize_union_zero_fill():
    # A on ids {0,1}, B on ids {1,2}: the union is {0,1,2}; a value A never
    # defined is present and exactly zero, with mask False
    a = make_entry([(0, 0), (1, 0)], [[1.0], [2.0]], ids=[0, 1])
    b = make_entry([(1, 0), (2, 0)], [[5.0], [6.0]], ids=[1, 2])
    batch = homogenize([a, b])
    assert batch.ids == (0, 1, 2)
    assert batch.values[0, 2, 0] == 0.0
    assert not batch.mask[0, 2]
    assert batch.values[1, 0, 0] == 0.0
    assert not batch.mask[1, 0]
    np.testing.assert_array_equal(batch.values[0, :, 0], [1, 2, 0])
    np.testing.assert_array_equal(batch.values[1, :, 0], [0, 5, 6])


def test_homogenize_single_entry_identity():
    e = make_entry([(0, 0), (2, 1)], [[1.0, 2.0], [3.0, 4.0]])
    batch = homogenize([e])
    assert batch.num_entries == 1
    np.testing.assert_array_equal(batch.values[0], e.values)


def test_homogenize_channel_mismatch():
    a = make_entry([(0, 0)], [[1.0]])
    b = make_entry([(0, 0)], [[1.0, 2.0]])
    with pytest.raises(ValueError, match="channel-count mismatch"):
        homogenize([a, b])


def test_homogenize_rejects_coordinate_conflict():
    a = make_entry([(0, 0)], [[1.0]], ids=[7])
    b = make_entry([(1, 0)], [[1.0]], ids=[7])
    with pytest.raises(ValueError, match="conflicting coordinates"):
        homogenize([a, b])


def test_homogenize_idempotent():
    a = make_entry([(0, 0), (1, 0)], [[1.0], [2.0]], ids=[0, 1])
    b = make_entry([(1, 0), (2, 5)], [[5.0], [6.0]], ids=[1, 2])
    batch = homogenize([a, b])
    again = homogenize(batch.split())
    np.testing.assert_array_equal(batch.values, again.values)
    np.testing.assert_array_equal(batch.mask, again.mask)
    assert batch.ids == again.ids
    assert batch.points == again.points


def test_masked_positions_are_exactly_zero():
    rng = np.random.default_rng(3)
    entries = []
    for k in range(4):
        ids = sorted(rng.choice(20, size=8, replace=False).tolist())
        pts = [(float(i), 0.0) for i in ids]
        entries.append(make_entry(pts, rng.normal(size=(8, 2)), ids=ids))
    batch = homogenize(entries)
    assert np.abs(batch.values[~batch.mask]).sum() == 0.0


def test_homogenize_k_copies():
    e = make_entry([(0, 0), (1, 1)], [[1.0], [2.0]])
    batch = homogenize([e] * 3)
    for b in range(3):
        np.testing.assert_array_equal(batch.values[b], e.values)


def test_regular_grid_entry_layout():
    # [[a,b],[c,d]] -> points (0,0),(1,0),(0,1),(1,1) carrying a,b,c,d
    e = regular_grid_entry(2, 2, [[1.0, 2.0], [3.0, 4.0]])
    assert e.points == (Point(0, 0), Point(1, 0), Point(0, 1), Point(1, 1))
    np.testing.assert_array_equal(e.values[:, 0], [1, 2, 3, 4])


def test_regular_grid_entry_mnist_size():
    e = regular_grid_entry(28, 28, np.zeros(784))
    assert e.num_points == 784


def test_regular_grid_entry_single_pixel():
    e = regular_grid_entry(1, 1, [5.0])
    assert e.points == (Point(0, 0),)


def test_regular_grid_entry_size_mismatch():
    with pytest.raises(ValueError, match="size mismatch"):
        regular_grid_entry(2, 2, [1.0, 2.0, 3.0])


def test_regular_grid_points_matches_entry():
    e = regular_grid_entry(3, 2, np.zeros(6))
    np.testing.assert_array_equal(e.coords(), regular_grid_points(3, 2))


def test_batch_from_rows():
    rows = np.arange(12.0).reshape(2, 3, 2)
    batch = batch_from_rows([(0, 0), (1, 0), (2, 0)], rows)
    assert batch.num_entries == 2
    assert batch.mask.all()
    np.testing.assert_array_equal(batch.values, rows)


def test_entry_file_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    pts = rng.normal(size=(5, 2)) * 1e3
    vals = rng.normal(size=(5, 3)) * np.pi
    e = make_entry([tuple(p) for p in pts], vals, ids=[9, 4, 7, 0, 2])
    path = tmp_path / "cloud.gce"
    write_entry(e, path)
    back = read_entry(path)
    assert back.ids == e.ids
    np.testing.assert_array_equal(back.values, e.values)  # 17 sig digits roundtrip f64
    np.testing.assert_array_equal(back.coords(), e.coords())
    header = path.read_text().splitlines()[0]
    assert header == "gce v1 5 3"


def test_entry_file_bad_header(tmp_path):
    path = tmp_path / "bad.gce"
    path.write_text("nope v9 1 1\n0 0 0 1\n")
    with pytest.raises(ValueError, match="not a gce v1 file"):
        read_entry(path)


def test_entry_file_short_line(tmp_path):
    path = tmp_path / "short.gce"
    path.write_text("gce v1 1 2\n0 0.0 0.0 1.0\n")
    with pytest.raises(ValueError, match="expected 5 fields"):
        read_entry(path)

import numpy as np
import pytest

from plasmeq.fields import (
    Grid3,
    ScalarGrid,
    curl,
    directional,
    divergence,
    dot,
    cross,
    gradient,
    norm,
    read_csv,
    sample_scalar,
    sample_vector,
    sphere_mask,
    write_csv,
    write_vtk,
)


def cube(n=9, lo=-1.0, hi=1.0):
    return Grid3.cube(lo, hi, n)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid3((0, 0, 0), (0.1, -0.1, 0.1), (5, 5, 5))
    with pytest.raises(ValueError):
        Grid3((0, 0, 0), (0.1, 0.1, 0.1), (5, 0, 5))


def test_sampling_constant_and_coordinate():
    g = cube(5)
    zero = sample_scalar(lambda X, Y, Z: 0.0, g)
    assert not zero.values.any()
    coord = sample_scalar(lambda X, Y, Z: X, g)
    assert np.array_equal(coord.values, g.meshgrid()[0])


def test_sampling_rejects_nonfinite():
    g = cube(5)
    with pytest.raises(ValueError, match="node"):
        sample_scalar(lambda X, Y, Z: np.where((X > 0.9) & (Y > 0.9) & (Z > 0.9), np.inf, 1.0), g)


def test_divergence_exact_on_linear_field():
    g = cube(9)
    v = sample_vector(lambda X, Y, Z: np.stack([X, Y, Z]), g)
    d = divergence(v)
    assert np.allclose(d.values, 3.0, rtol=0, atol=1e-13)


def test_curl_exact_on_rigid_rotation():
    g = cube(9)
    v = sample_vector(lambda X, Y, Z: np.stack([-Y, X, np.zeros_like(X)]), g)
    c = curl(v)
    assert np.allclose(c.values[0], 0.0, atol=1e-13)
    assert np.allclose(c.values[1], 0.0, atol=1e-13)
    assert np.allclose(c.values[2], 2.0, rtol=0, atol=1e-13)


def test_gradient_second_order_on_sine():
    errs = {}
    for n in (17, 33):
        g = cube(n)
        f = sample_scalar(lambda X, Y, Z: np.sin(X), g)
        grad = gradient(f)
        exact = np.cos(g.interior().meshgrid()[0])
        errs[n] = np.max(np.abs(grad.values[0] - exact))
    assert errs[17] / errs[33] == pytest.approx(4.0, abs=0.5)


def test_exactness_on_quadratics():
    g = cube(9)
    f = sample_scalar(lambda X, Y, Z: X * X + 2 * X * Y - Z * Z + X - 3, g)
    grad = gradient(f)
    Xi, Yi, Zi = g.interior().meshgrid()
    assert np.allclose(grad.values[0], 2 * Xi + 2 * Yi + 1, rtol=1e-12, atol=1e-12)
    assert np.allclose(grad.values[1], 2 * Xi, rtol=1e-12, atol=1e-12)
    assert np.allclose(grad.values[2], -2 * Zi, rtol=1e-12, atol=1e-12)


def test_div_of_curl_vanishes_to_roundoff():
    # central differences along distinct axes commute, so the discrete
    # identity holds exactly; anything second-order small is then automatic
    for n in (17, 33):
        g = cube(n)
        v = sample_vector(
            lambda X, Y, Z: np.stack([np.sin(Y * Z), np.cos(X + Z), np.sin(X) * np.cos(Y)]), g
        )
        assert norm(divergence(curl(v)), "linf") < 1e-13


def test_curl_of_grad_vanishes_to_roundoff():
    for n in (17, 33):
        g = cube(n)
        f = sample_scalar(lambda X, Y, Z: np.sin(X * Y) + np.cos(Z + X), g)
        assert norm(curl(gradient(f)), "linf") < 1e-13


def test_directional_matches_manual_dot():
    g = cube(9)
    v = sample_vector(lambda X, Y, Z: np.stack([Y, -X, Z]), g)
    f = sample_scalar(lambda X, Y, Z: X * Y + Z, g)
    d = directional(v, f)
    manual = dot(v.interior(), gradient(f))
    assert np.allclose(d.values, manual.values, rtol=0, atol=1e-14)


def test_small_grid_rejected():
    g = cube(4)
    f = sample_scalar(lambda X, Y, Z: X, g)
    with pytest.raises(ValueError, match="5 nodes"):
        gradient(f)


def test_norm_basics():
    g = cube(5)
    zero = sample_scalar(lambda X, Y, Z: 0.0, g)
    assert norm(zero, "linf") == 0.0
    assert norm(zero, "l2") == 0.0
    single = np.zeros(g.counts)
    single[2, 2, 2] = 3.0
    assert norm(ScalarGrid(g, single), "linf") == 3.0
    const = sample_scalar(lambda X, Y, Z: -1.5, g)
    assert norm(const, "l2") == pytest.approx(1.5, rel=1e-15)
    vec = sample_vector(lambda X, Y, Z: np.stack([np.full_like(X, 3.0), np.full_like(X, 4.0), np.zeros_like(X)]), g)
    assert norm(vec, "linf") == pytest.approx(5.0, rel=1e-15)
    with pytest.raises(ValueError):
        norm(zero, "l7")


def test_norm_with_mask():
    g = cube(9)
    f = sample_scalar(lambda X, Y, Z: X, g)
    inner = norm(f, "linf", mask=sphere_mask(g, 0.5))
    assert inner <= 0.5 + 1e-12
    with pytest.raises(ValueError, match="empty"):
        norm(f, "linf", mask=np.zeros(g.counts, dtype=bool))


def test_cross_and_dot():
    g = cube(5)
    a = sample_vector(lambda X, Y, Z: np.stack([np.ones_like(X), np.zeros_like(X), np.zeros_like(X)]), g)
    b = sample_vector(lambda X, Y, Z: np.stack([np.zeros_like(X), np.ones_like(X), np.zeros_like(X)]), g)
    c = cross(a, b)
    assert np.allclose(c.values[2], 1.0) and not c.values[:2].any()
    assert np.allclose(dot(a, b).values, 0.0)


def test_coarsen_requires_odd_counts():
    g = Grid3((0, 0, 0), (1, 1, 1), (8, 9, 9))
    with pytest.raises(ValueError, match="odd"):
        g.coarsen()
    g2 = cube(9).coarsen()
    assert g2.counts == (5, 5, 5)
    assert g2.spacing[0] == pytest.approx(2 * cube(9).spacing[0])


def test_csv_roundtrip_is_exact(tmp_path):
    g = cube(7, lo=-1.1, hi=0.93)
    rng = np.random.default_rng(7)
    cols = {"a": rng.standard_normal(g.counts), "b": rng.standard_normal(g.counts)}
    path = tmp_path / "f.csv"
    write_csv(path, g, cols)
    g2, cols2 = read_csv(path)
    assert g2.counts == g.counts
    for name in cols:
        assert np.array_equal(cols[name], cols2[name])


def test_csv_rejects_scrambled_rows(tmp_path):
    g = cube(5)
    path = tmp_path / "f.csv"
    write_csv(path, g, {"a": np.zeros(g.counts)})
    lines = path.read_text().splitlines()
    lines[1], lines[2] = lines[2], lines[1]
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError):
        read_csv(bad)


def test_vtk_header_and_payload(tmp_path):
    g = Grid3((0.0, 0.0, 0.0), (0.5, 0.5, 0.5), (3, 4, 5))
    values = np.arange(60.0).reshape(g.counts)
    vec = np.stack([values, 2 * values, -values])
    path = tmp_path / "f.vtk"
    write_vtk(path, g, scalars={"p": values}, vectors={"B": vec})
    lines = path.read_text().splitlines()
    assert lines[3] == "DATASET STRUCTURED_POINTS"
    assert lines[4] == "DIMENSIONS 3 4 5"
    assert lines[7] == "POINT_DATA 60"
    assert "VECTORS B double" in lines
    assert "SCALARS p double" in lines
    # x varies fastest: the second payload row after VECTORS is node (1,0,0)
    vec_start = lines.index("VECTORS B double") + 1
    first, second = lines[vec_start].split(), lines[vec_start + 1].split()
    assert float(first[0]) == values[0, 0, 0]
    assert float(second[0]) == values[1, 0, 0]

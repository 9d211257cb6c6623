import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pisaa.problems import (ABProtein, AbChain, BinaryImage, GaussianMixture, IsingRestoration, Quadratic,
                            RotatedRastrigin, ab2d_energy, ab3d_energy, angles_from_positions,
                            energy_from_positions, fibonacci_sequence, gaussian_mixture_energy,
                            ising_count_delta, ising_counts, ising_energy, ising_energy_delta, load_components,
                            make_problem, rastrigin, read_binary_grid, read_pgm, rotated_rastrigin,
                            salomon_rotation, synthetic_image)
from pisaa.problems.base import BoxSpace


# ------------------------------------------------------------ mixture

def test_single_component_at_its_mean():
    e = gaussian_mixture_energy([1.0, 2.0], [(1.0, (1.0, 2.0))], 0.001)
    assert e == pytest.approx(math.log(2 * math.pi * 0.001), abs=1e-12)
    assert e == pytest.approx(-5.06988, abs=1e-5)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_symmetric_mixture_is_symmetric(x, y):
    comps = [(0.5, (-1.0, 0.0)), (0.5, (1.0, 0.0))]
    assert gaussian_mixture_energy([x, y], comps, 0.3) == pytest.approx(gaussian_mixture_energy([-x, y], comps, 0.3))


@given(st.floats(-1e10, 1e10), st.floats(-1e10, 1e10))
def test_mixture_energy_is_finite_and_bounded(x, y):
    p = GaussianMixture()
    e = p.energy(np.array([x, y]))
    assert np.isfinite(e)
    nearest = np.argmin(((p.means - [x, y]) ** 2).sum(axis=1))
    single = gaussian_mixture_energy([x, y], [(1.0, tuple(p.means[nearest]))], p.var)
    assert e >= single - math.log(len(p.weights)) - 1e-9


def test_shipped_components():
    comps = load_components()
    assert len(comps) == 20
    assert sum(w for w, _ in comps) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        GaussianMixture([(0.4, (0, 0)), (0.4, (1, 1))])


def test_mixture_components_from_csv(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("weight,mean_x,mean_y\n0.25,0,0\n0.75,1,2\n")
    p = make_problem({"name": "mixture", "components_file": str(path), "var": 0.5})
    np.testing.assert_array_equal(p.means, [[0, 0], [1, 2]])


# ------------------------------------------------------------ Rastrigin

def test_rastrigin_examples():
    assert rastrigin(np.array([[0.5]]))[0] == pytest.approx(20.25)
    assert rastrigin(np.ones((1, 7)))[0] == pytest.approx(7.0)
    R = salomon_rotation(5, 3)
    assert rotated_rastrigin(np.zeros(5), R) == 0.0


@pytest.mark.parametrize("d", [2, 10, 30])
def test_rotation_is_orthogonal(d):
    R = salomon_rotation(d, 11).R
    np.testing.assert_allclose(R.T @ R, np.eye(d), atol=1e-10)
    assert abs(abs(np.linalg.det(R)) - 1) < 1e-10
    np.testing.assert_array_equal(R, salomon_rotation(d, 11).R)
    x = np.random.default_rng(d).normal(size=d)
    assert np.linalg.norm(R @ x) == pytest.approx(np.linalg.norm(x), abs=1e-9)


def test_rotation_needs_two_dimensions():
    with pytest.raises(ValueError):
        salomon_rotation(1, 0)


@given(st.lists(st.floats(-5.12, 5.12), min_size=3, max_size=3))
def test_rotated_rastrigin_is_nonnegative(x):
    x = np.array(x)
    v = RotatedRastrigin(3, rotation_seed=4).energy(x)
    assert v >= 0
    if np.any(np.abs(x) > 1e-6):
        assert v > 0


# ------------------------------------------------------------ AB protein

def test_fibonacci_words():
    assert fibonacci_sequence(3) == "BAB"
    assert fibonacci_sequence(5) == "ABBAB"
    assert fibonacci_sequence(13) == "ABBABBABABBAB"
    assert len(fibonacci_sequence(55)) == 55
    with pytest.raises(ValueError):
        fibonacci_sequence(4)


def test_bab_energies():
    assert ab2d_energy(AbChain.fibonacci(3, 2, angles=[0.0])) == -0.0302734375
    bent = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    assert energy_from_positions(bent, "BAB", 2) == 0.0625
    assert ab2d_energy(AbChain.fibonacci(3, 2, angles=[math.pi / 2])) == pytest.approx(0.0625, abs=1e-15)


@given(st.lists(st.floats(0, 2 * math.pi), min_size=11, max_size=11), st.integers(-2, 2))
@settings(max_examples=50)
def test_ab2d_periodic_in_angles(angles, k):
    a = np.array(angles)
    shifted = a + 2 * math.pi * k
    assert ab2d_energy(AbChain.fibonacci(13, 2, a)) == pytest.approx(ab2d_energy(AbChain.fibonacci(13, 2, shifted)),
                                                                     rel=1e-9, abs=1e-9)


@given(st.lists(st.floats(0, 2 * math.pi), min_size=6, max_size=6))
@settings(max_examples=50)
def test_planar_3d_chain_embeds_the_2d_chain(theta):
    n = 8
    a3 = np.concatenate([theta, np.full(n - 3, math.pi / 2)])
    p2 = AbChain.fibonacci(n, 2, theta).positions()
    p3 = AbChain.fibonacci(n, 3, a3).positions()
    np.testing.assert_allclose(p3[:, 2], 0.0, atol=1e-12)
    np.testing.assert_allclose(p3[:, :2], p2, atol=1e-12)


def test_straight_3d_chain_local_terms():
    n = 8
    chain = AbChain.fibonacci(n, 3)
    pos = chain.positions()
    np.testing.assert_allclose(np.linalg.norm(np.diff(pos, axis=0), axis=1), 1.0)
    seq = chain.sequence
    lj = energy_from_positions(pos, seq, 3) - ((n - 2) - 0.5 * (n - 3))
    assert ab3d_energy(chain) == pytest.approx((n - 2) - 0.5 * (n - 3) + lj)
    assert chain.angles.size == 2 * n - 5
    with pytest.raises(ValueError):
        AbChain(seq, 3, np.zeros(n))


@given(st.lists(st.floats(0.1, 2 * math.pi - 0.1), min_size=11, max_size=11))
@settings(max_examples=40)
def test_gauge_round_trip_2d(angles):
    chain = AbChain.fibonacci(13, 2, np.array(angles))
    pos = chain.positions()
    rot = np.array([[math.cos(0.7), -math.sin(0.7)], [math.sin(0.7), math.cos(0.7)]])
    back = angles_from_positions(pos @ rot.T + 3.0, 2)
    e = ab2d_energy(chain)
    assert ab2d_energy(AbChain.fibonacci(13, 2, back)) == pytest.approx(e, rel=1e-9, abs=1e-9)
    assert energy_from_positions(pos, chain.sequence, 2) == pytest.approx(e, rel=1e-9, abs=1e-9)


def test_gauge_round_trip_3d():
    rng = np.random.default_rng(3)
    n = 13
    for _ in range(30):
        a = np.concatenate([rng.uniform(0, 2 * math.pi, n - 2), rng.uniform(0.1, math.pi - 0.1, n - 3)])
        chain = AbChain.fibonacci(n, 3, a)
        pos = chain.positions()
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        back = angles_from_positions(pos @ q.T, 3)
        assert ab3d_energy(AbChain.fibonacci(n, 3, back)) == pytest.approx(ab3d_energy(chain), rel=1e-9, abs=1e-9)


def test_coincident_beads_give_infinite_energy():
    folded = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
    assert energy_from_positions(folded, "BAB", 2) == math.inf


def test_protein_wrap_keeps_polar_angles_in_range():
    p = ABProtein(8, 3)
    X = np.random.default_rng(0).uniform(-10, 10, (50, p.dim))
    W = p.wrap(X)
    assert np.all((W[:, : 6] >= 0) & (W[:, : 6] < 2 * math.pi))
    assert np.all((W[:, 6:] >= 0) & (W[:, 6:] <= math.pi))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([5, 8, 13, 21, 34]), st.sampled_from([2, 3]), st.integers(0, 2 ** 32 - 1))
def test_self_avoiding_starts(n, dim, seed):
    p = ABProtein(n, dim)
    X = p.sample_initial(np.random.default_rng(seed), 3)
    assert X.shape == (3, p.dim) and np.all(p.contains(X))
    assert np.all((X >= p.space.lower) & (X <= p.space.upper))
    for x in X:
        pos = AbChain.fibonacci(n, dim, x).positions()
        i, j = np.triu_indices(n, 2)
        assert np.linalg.norm(pos[i] - pos[j], axis=1).min() >= 0.9
    assert np.all(np.isfinite(p.energies(X)))


def test_uniform_starts_stay_available():
    p = ABProtein(13, 2, init="uniform")
    a = p.sample_initial(np.random.default_rng(1), 4)
    b = p.space.lower + (p.space.upper - p.space.lower) * np.random.default_rng(1).random((4, p.dim))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        ABProtein(13, 2, init="straight")


# ------------------------------------------------------------ Ising

def test_two_by_two_ising():
    x = np.zeros((2, 2), dtype=int)
    img = BinaryImage(x, x, 1.1, 0.9)
    assert ising_energy(img) == pytest.approx(-9.8)
    assert ising_counts(img) == (4, 6)
    assert ising_energy_delta(img, (0, 0)) == pytest.approx(3.8)
    assert ising_count_delta(img, (0, 0)) == (-1, -3)


def test_interior_pixel_delta():
    x = np.ones((3, 3), dtype=int)
    img = BinaryImage(x, x, 1.1, 0.9)
    assert ising_energy_delta(img, (1, 1)) == pytest.approx(1.1 + 8 * 0.9)
    assert ising_count_delta(img, (1, 1)) == (-1, -8)
    assert ising_count_delta(img, (0, 0)) == (-1, -3)
    assert ising_count_delta(img, 0) == (-1, -3)


@given(st.integers(0, 2 ** 20 - 1), st.integers(0, 19))
def test_delta_is_antisymmetric_and_global_flip_invariant(bits, k):
    rng = np.random.default_rng(bits)
    x = np.array([(bits >> i) & 1 for i in range(20)]).reshape(4, 5)
    y = rng.integers(0, 2, (4, 5))
    img = BinaryImage(x, y, 1.125, 0.875)
    pix = divmod(k, 5)
    flipped = x.copy()
    flipped[pix] = 1 - flipped[pix]
    assert ising_energy_delta(img, pix) == -ising_energy_delta(img.with_pixels(flipped), pix)
    assert ising_energy(img) == ising_energy(BinaryImage(1 - x, 1 - y, 1.125, 0.875))


def test_count_pairs_twice_doubles_b():
    x = np.zeros((2, 2), dtype=int)
    assert ising_energy(BinaryImage(x, x, 1.1, 0.9, True)) == pytest.approx(-(4 * 1.1 + 12 * 0.9))


def test_ising_problem_batch_stats():
    rng = np.random.default_rng(1)
    p = IsingRestoration(rng.integers(0, 2, (4, 6)))
    X = p.sample_initial(rng, 10)
    for x, e in zip(X, p.energies(X)):
        assert e == ising_energy(p.image(x))
    pix = rng.integers(0, 24, 10)
    Y = X.copy()
    Y[np.arange(10), pix] ^= 1
    np.testing.assert_array_equal(p.stats(X) + p.flip_stats_delta(X, pix), p.stats(Y))


def test_image_readers(tmp_path):
    grid = tmp_path / "g.txt"
    grid.write_text("0 1 1\n1 0 0\n")
    np.testing.assert_array_equal(read_binary_grid(grid), [[0, 1, 1], [1, 0, 0]])
    pgm = tmp_path / "p.pgm"
    pgm.write_bytes(b"P5\n# c\n3 2\n255\n" + bytes([0, 200, 255, 10, 128, 127]))
    np.testing.assert_array_equal(read_pgm(pgm), [[0, 1, 1], [0, 1, 0]])
    ascii_pgm = tmp_path / "a.pgm"
    ascii_pgm.write_text("P2\n3 2\n255\n0 200 255\n10 128 127\n")
    np.testing.assert_array_equal(read_pgm(ascii_pgm), [[0, 1, 1], [0, 1, 0]])
    p = make_problem({"name": "ising", "image": str(pgm), "threshold": 100})
    np.testing.assert_array_equal(p.observed, [[0, 1, 1], [0, 1, 1]])


def test_synthetic_image_is_reproducible():
    a = synthetic_image(8, 10, 0.1, seed=5)
    b = synthetic_image(8, 10, 0.1, seed=5)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


# ------------------------------------------------------------ shared contract

PROBLEMS = [
    {"name": "quadratic", "dim": 3},
    {"name": "mixture"},
    {"name": "rastrigin", "dim": 4},
    {"name": "protein", "n": 13, "dim": 2},
    {"name": "protein", "n": 8, "dim": 3},
    {"name": "ising", "synthetic": {"height": 6, "width": 5}},
]


@pytest.mark.parametrize("spec", PROBLEMS, ids=lambda s: f"{s['name']}-{s.get('dim', '')}")
def test_energies_are_pure_and_batched(spec):
    p = make_problem(spec)
    rng = np.random.default_rng(0)
    X = p.sample_initial(rng, 16)
    a, b = p.energies(X), p.energies(X.copy())
    assert a.tobytes() == b.tobytes()
    for k in range(4):
        assert p.energy(X[k]) == pytest.approx(a[k], rel=1e-12, abs=1e-12)
    assert p.contains(X).all()


def test_make_problem_rejects_unknown():
    with pytest.raises(ValueError):
        make_problem({"name": "nope"})


def test_box_space_validation():
    with pytest.raises(ValueError):
        BoxSpace(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    assert Quadratic(2).contains(np.array([[1.0, -1.0], [1.1, 0.0]])).tolist() == [True, False]

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deqntk import DomainError, KernelParams, theta_deq
from deqntk.gram import (
    CDEQ_NTK,
    DEQ_NTK,
    FINITE_DEPTH_NTK,
    LINEAR_DEQ,
    VANILLA_NTK,
    assemble_gram,
    cross_gram,
    depth_sweep,
    encode_labels,
    regress_and_score,
    summarize_sweep,
    theta_vs_dot_sweep,
    write_rows_csv,
)

P = KernelParams(sigma_w_sq=0.5, sigma_u_sq=0.5)


def unit_rows(n, m, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, m))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


class TestAssembly:
    def test_single_sample(self):
        X = unit_rows(1, 12)
        G = assemble_gram(X, DEQ_NTK, P)
        assert G.values.shape == (1, 1)
        assert abs(G.values[0, 0] - theta_deq(1.0, P).theta) <= 1e-12

    def test_duplicate_rows_duplicate_gram_rows(self):
        X = unit_rows(4, 12)
        X[1] = X[0]
        G = assemble_gram(X, DEQ_NTK, P).values
        assert np.array_equal(G[0], G[1])

    def test_matches_scalar_loop_oracle(self):
        X = unit_rows(10, 20, seed=1)
        G = assemble_gram(X, DEQ_NTK, P).values
        for i in range(10):
            for j in range(10):
                d = 1.0 if i == j else float(np.clip(X[i] @ X[j], -1, 1))
                assert abs(G[i, j] - theta_deq(d, P).theta) <= 1e-8

    def test_symmetry_and_constant_diagonal(self):
        X = unit_rows(20, 30, seed=2)
        G = assemble_gram(X, DEQ_NTK, P).values
        assert np.max(np.abs(G - G.T)) <= 1e-12
        assert np.ptp(np.diag(G)) <= 1e-12

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_psd(self, seed):
        X = unit_rows(40, 25, seed=seed)
        w = np.linalg.eigvalsh(assemble_gram(X, DEQ_NTK, P).values)
        assert w[0] >= -1e-8 * w[-1]

    def test_requires_unit_rows(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DomainError):
            assemble_gram(rng.standard_normal((4, 8)), DEQ_NTK, P)

    def test_depth_required_for_finite_kernels(self):
        X = unit_rows(3, 8)
        with pytest.raises(ValueError):
            assemble_gram(X, FINITE_DEPTH_NTK, P)

    def test_vanilla_requires_no_injection(self):
        X = unit_rows(3, 8)
        with pytest.raises(ValueError):
            assemble_gram(X, VANILLA_NTK, P, depth=5)

    def test_linear_tag(self):
        p_lin = KernelParams(
            sigma_w_sq=0.125, sigma_u_sq=0.875, activation="linear"
        )
        X = unit_rows(5, 8, seed=3)
        G = assemble_gram(X, LINEAR_DEQ, p_lin).values
        # linear kernel is an affine image of the dot matrix
        dots = np.clip(X @ X.T, -1, 1)
        np.fill_diagonal(dots, 1.0)
        ratio = G / dots
        assert np.ptp(ratio) <= 1e-9

    def test_cdeq_worker_count_invariance(self):
        rng = np.random.default_rng(4)
        imgs = rng.standard_normal((3, 4, 4, 2))
        imgs /= np.linalg.norm(imgs, axis=-1, keepdims=True)
        a = assemble_gram(imgs, CDEQ_NTK, P, filter_size=3, workers=1).values
        b = assemble_gram(imgs, CDEQ_NTK, P, filter_size=3, workers=2).values
        assert np.array_equal(a, b)


class TestLabels:
    def test_encoding_pattern(self):
        Y = encode_labels([3], 10)
        assert Y[0, 3] == 0.9
        assert np.sum(Y[0] == -0.1) == 9

    def test_single_class(self):
        Y = encode_labels([0, 0], 1)
        assert np.array_equal(Y, np.full((2, 1), 0.9))

    @given(st.lists(st.integers(0, 9), min_size=1, max_size=30))
    def test_round_trip_argmax(self, labels):
        Y = encode_labels(labels, 10)
        assert np.array_equal(np.argmax(Y, axis=1), np.array(labels))
        assert np.allclose(Y.sum(axis=1), 0.9 - 0.1 * 9)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            encode_labels([10], 10)
        with pytest.raises(ValueError):
            encode_labels([-1], 10)


class TestRegression:
    def test_identity_gram_recovers_labels(self):
        labels = np.arange(10) % 10
        acc = regress_and_score(np.eye(10), np.eye(10), labels, labels, 0.0)
        assert acc == 1.0

    def test_frozen_kernel_unregularized_is_singular(self):
        K = np.ones((10, 10))
        labels = np.arange(10) % 10
        with pytest.raises(np.linalg.LinAlgError):
            regress_and_score(K, K, labels, labels, 0.0)

    def test_frozen_kernel_regularized_is_chance(self):
        K = np.ones((20, 20))
        labels = np.arange(20) % 10
        acc = regress_and_score(K, K, labels, labels, 1e-2)
        assert abs(acc - 0.1) <= 0.05

    def test_scaling_invariance(self):
        X = unit_rows(30, 15, seed=5)
        labels = np.arange(30) % 10
        G = assemble_gram(X, DEQ_NTK, P).values
        base = regress_and_score(G, G, labels, labels, 1e-3)
        scaled = regress_and_score(37.0 * G, 37.0 * G, labels, labels, 1e-3)
        assert base == scaled

    def test_permutation_equivariance(self):
        X = unit_rows(25, 15, seed=6)
        labels = np.arange(25) % 10
        G = assemble_gram(X, DEQ_NTK, P).values
        perm = np.random.default_rng(0).permutation(25)
        Gp = assemble_gram(X[perm], DEQ_NTK, P).values
        assert np.max(np.abs(Gp - G[np.ix_(perm, perm)])) <= 1e-12
        a = regress_and_score(G, G, labels, labels, 1e-4)
        b = regress_and_score(Gp, Gp, labels[perm], labels[perm], 1e-4)
        assert a == b

    def test_negative_reg_rejected(self):
        with pytest.raises(ValueError):
            regress_and_score(np.eye(3), np.eye(3), [0, 1, 2], [0, 1, 2], -1.0)


class TestSweeps:
    def test_single_point_sweep(self):
        X = unit_rows(60, 12, seed=7)
        labels = np.arange(60) % 3
        vanilla = KernelParams(sigma_w_sq=1.0, sigma_u_sq=0.0)
        rows = depth_sweep(
            X, labels, [1], P, vanilla, reps=1, n_train=40, n_test=10,
            num_classes=3,
        )
        assert len(rows) == 2  # one per kernel
        assert all(0.0 <= r["accuracy"] <= 1.0 for r in rows)
        summary = summarize_sweep(rows)
        assert len(summary) == 2

    def test_sweep_deterministic_in_seed(self):
        X = unit_rows(50, 12, seed=8)
        labels = np.arange(50) % 5
        vanilla = KernelParams(sigma_w_sq=1.0, sigma_u_sq=0.0)
        args = (X, labels, [2], P, vanilla)
        kw = dict(reps=2, n_train=30, n_test=10, num_classes=5, seed=11)
        assert depth_sweep(*args, **kw) == depth_sweep(*args, **kw)

    def test_theta_vs_dot_depth_zero_identity(self):
        rows = theta_vs_dot_sweep(P, [0])
        assert all(r["theta"] == r["dot"] for r in rows)

    def test_deq_kernel_monotone_in_dot(self):
        rows = theta_vs_dot_sweep(P, [50])
        th = [r["theta"] for r in rows]
        assert all(b > a for a, b in zip(th, th[1:]))

    def test_vanilla_kernel_flattens_with_depth(self):
        # distinct pairs only: identical inputs never decorrelate
        vanilla = KernelParams(sigma_w_sq=1.0, sigma_u_sq=0.0)
        from deqntk import finite_depth_theta

        dots = np.linspace(-1.0, 0.99, 41)
        th = finite_depth_theta(dots, 8000, vanilla, include_output_layer=False)
        assert (th.max() - th.min()) / th.mean() < 0.01

    def test_csv_writer(self, tmp_path):
        rows = [{"kernel": "deq", "depth": 3, "accuracy": 0.5}]
        path = tmp_path / "rows.csv"
        write_rows_csv(rows, path, ["kernel", "depth", "accuracy"])
        lines = path.read_text().splitlines()
        assert lines[0] == "kernel,depth,accuracy"
        assert lines[1] == "deq,3,0.5"

    def test_cross_gram_shape(self):
        Xtr = unit_rows(8, 10, seed=9)
        Xte = unit_rows(3, 10, seed=10)
        C = cross_gram(Xte, Xtr, DEQ_NTK, P)
        assert C.shape == (3, 8)

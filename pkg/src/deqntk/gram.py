"""Gram-matrix assembly, label encoding and regularized kernel regression.

Dense kernels (fixed-point, finite-depth, linear closed-form) depend on a
pair only through its inner product, so their Grams are vectorized over the
dataset's dot-product matrix.  The convolutional kernel is evaluated pair
by pair over the upper triangle, optionally on a process pool; every entry
is a pure function of its two inputs, so the result is identical for any
worker count.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .conv import cdeq_kernel_pair
from .errors import DomainError
from .kernel import finite_depth_theta, theta_deq_grid, theta_linear_deq
from .params import KernelParams

DEQ_NTK = "deq-ntk"
FINITE_DEPTH_NTK = "finite-depth-ntk"
VANILLA_NTK = "vanilla-ntk"
LINEAR_DEQ = "linear-deq"
CDEQ_NTK = "cdeq-ntk"

KERNEL_TAGS = (DEQ_NTK, FINITE_DEPTH_NTK, VANILLA_NTK, LINEAR_DEQ, CDEQ_NTK)

#: Relative jitter ladder tried when a regularized factorization fails.
_JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)
_UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric kernel matrix over one dataset."""

    values: np.ndarray
    kernel_tag: str
    params: KernelParams
    depth: int | None = None


def _dot_matrix(features: np.ndarray) -> np.ndarray:
    dots = np.clip(features @ features.T, -1.0, 1.0)
    # Rows are validated unit-norm; the self inner product is 1 by
    # definition and the kernel has a square-root cusp there, so rounding
    # noise in the BLAS product must not leak through.
    np.fill_diagonal(dots, 1.0)
    return dots


def kernel_from_dots(
    dots: np.ndarray,
    kernel_tag: str,
    params: KernelParams,
    depth: int | None = None,
) -> np.ndarray:
    """Kernel values for a matrix of pairwise inner products (dense tags)."""
    if kernel_tag == DEQ_NTK:
        return theta_deq_grid(dots, params)
    if kernel_tag == LINEAR_DEQ:
        return theta_linear_deq(dots, params)
    if kernel_tag in (FINITE_DEPTH_NTK, VANILLA_NTK):
        if depth is None:
            raise ValueError(f"{kernel_tag} requires a depth")
        if kernel_tag == VANILLA_NTK and params.sigma_u_sq != 0.0:
            raise ValueError("vanilla kernel expects sigma_u_sq = 0")
        return finite_depth_theta(dots, depth, params)
    raise ValueError(f"unknown dense kernel tag {kernel_tag!r}")


def _check_unit_rows(features: np.ndarray) -> None:
    norms = np.linalg.norm(features, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_NORM_TOL):
        raise DomainError("dense kernels require unit-normalized samples")


def _cdeq_entry(args):
    i, j, x, y, q, params = args
    return i, j, cdeq_kernel_pair(x, y, q, params)


def assemble_gram(
    features: np.ndarray,
    kernel_tag: str,
    params: KernelParams,
    depth: int | None = None,
    filter_size: int = 3,
    workers: int = 1,
) -> GramMatrix:
    """Kernel matrix over ``features``.

    Dense tags take N x m unit-norm rows; the convolutional tag takes
    N x P x Q x C unit-pixel images and fills the upper triangle pair by
    pair (in parallel when ``workers`` > 1).
    """
    if kernel_tag not in KERNEL_TAGS:
        raise ValueError(f"unknown kernel tag {kernel_tag!r}")
    n = features.shape[0]
    if kernel_tag == CDEQ_NTK:
        values = np.empty((n, n))
        jobs = [
            (i, j, features[i], features[j], filter_size, params)
            for i in range(n)
            for j in range(i, n)
        ]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_cdeq_entry, jobs, chunksize=4))
        else:
            results = [_cdeq_entry(job) for job in jobs]
        for i, j, val in results:
            values[i, j] = val
            values[j, i] = val
    else:
        _check_unit_rows(features)
        values = kernel_from_dots(_dot_matrix(features), kernel_tag, params, depth)
        values = 0.5 * (values + values.T)
    return GramMatrix(values=values, kernel_tag=kernel_tag, params=params, depth=depth)


def cross_gram(
    test_features: np.ndarray,
    train_features: np.ndarray,
    kernel_tag: str,
    params: KernelParams,
    depth: int | None = None,
    filter_size: int = 3,
) -> np.ndarray:
    """N_test x N_train matrix of kernel(test_i, train_j)."""
    if kernel_tag == CDEQ_NTK:
        out = np.empty((test_features.shape[0], train_features.shape[0]))
        for i, x in enumerate(test_features):
            for j, y in enumerate(train_features):
                out[i, j] = cdeq_kernel_pair(x, y, filter_size, params)
        return out
    _check_unit_rows(test_features)
    _check_unit_rows(train_features)
    dots = np.clip(test_features @ train_features.T, -1.0, 1.0)
    return kernel_from_dots(dots, kernel_tag, params, depth)


def encode_labels(labels, num_classes: int) -> np.ndarray:
    """One-hot targets with 0.9 at the class index and -0.1 elsewhere."""
    labels = np.asarray(labels, dtype=int)
    if labels.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError("label outside [0, num_classes)")
    out = np.full((labels.size, num_classes), -0.1)
    out[np.arange(labels.size), labels] = 0.9
    return out


def regress_and_score(
    train_gram: np.ndarray,
    cross: np.ndarray,
    train_labels,
    test_labels,
    reg_eps: float,
    num_classes: int = 10,
) -> float:
    """Kernel ridge regression accuracy.

    Solves (K + rI) alpha = Y with r = reg_eps * (tr K / N) / N and scores
    argmax predictions (ties to the lowest class index).  With reg_eps = 0
    no regularization or jitter is applied and a singular system is an
    error; with reg_eps > 0 a relative jitter ladder handles marginal
    factorizations.
    """
    if reg_eps < 0:
        raise ValueError("reg_eps must be nonnegative")
    K = np.asarray(train_gram, dtype=float)
    n = K.shape[0]
    mean_diag = float(np.trace(K)) / n
    r = reg_eps * mean_diag / n
    Y = encode_labels(train_labels, num_classes)

    ladder = _JITTER_LADDER if reg_eps > 0 else (0.0,)
    alpha = None
    for jitter in ladder:
        M = K + (r + jitter * mean_diag) * np.eye(n)
        try:
            c, low = scipy.linalg.cho_factor(M)
            alpha = scipy.linalg.cho_solve((c, low), Y)
            break
        except scipy.linalg.LinAlgError:
            continue
    if alpha is None:
        cond = np.linalg.cond(K + r * np.eye(n))
        raise np.linalg.LinAlgError(
            f"kernel system singular even after jitter ladder "
            f"(condition estimate {cond:.3e})"
        )
    predictions = np.argmax(np.asarray(cross) @ alpha, axis=1)
    test_labels = np.asarray(test_labels, dtype=int)
    return float(np.mean(predictions == test_labels))


def _split(rng: np.random.Generator, n_total: int, n_train: int, n_test: int):
    idx = rng.permutation(n_total)
    return idx[:n_train], idx[n_train : n_train + n_test]


def depth_sweep(
    features: np.ndarray,
    labels,
    depths,
    params_deq: KernelParams,
    params_vanilla: KernelParams,
    reps: int,
    n_train: int,
    n_test: int,
    reg_eps: float = 1e-4,
    num_classes: int = 10,
    seed: int = 0,
) -> list[dict]:
    """Accuracy of the injected and vanilla finite-depth kernels over depths.

    Each rep draws a fresh train/test split from the seeded stream; rows are
    dicts with keys kernel, depth, rep, accuracy.
    """
    labels = np.asarray(labels, dtype=int)
    if n_train + n_test > features.shape[0]:
        raise ValueError("not enough samples for the requested split")
    rows = []
    rng = np.random.default_rng(seed)
    for rep in range(reps):
        tr, te = _split(rng, features.shape[0], n_train, n_test)
        dots_tr = _dot_matrix(features[tr])
        dots_te = np.clip(features[te] @ features[tr].T, -1.0, 1.0)
        for tag, params in ((FINITE_DEPTH_NTK, params_deq), (VANILLA_NTK, params_vanilla)):
            for d in depths:
                K = kernel_from_dots(dots_tr, tag, params, d)
                C = kernel_from_dots(dots_te, tag, params, d)
                acc = regress_and_score(
                    K, C, labels[tr], labels[te], reg_eps, num_classes
                )
                rows.append(
                    {"kernel": tag, "depth": int(d), "rep": rep, "accuracy": acc}
                )
    return rows


def summarize_sweep(rows: list[dict]) -> list[dict]:
    """Mean accuracy and normal-approximation 95% CI per (kernel, depth)."""
    keys = sorted({(r["kernel"], r["depth"]) for r in rows})
    out = []
    for kernel_tag, depth in keys:
        accs = np.array(
            [r["accuracy"] for r in rows if (r["kernel"], r["depth"]) == (kernel_tag, depth)]
        )
        mean = float(accs.mean())
        half = 1.96 * float(accs.std(ddof=1)) / np.sqrt(accs.size) if accs.size > 1 else 0.0
        out.append(
            {
                "kernel": kernel_tag,
                "depth": depth,
                "mean_accuracy": mean,
                "ci_low": mean - half,
                "ci_high": mean + half,
            }
        )
    return out


def theta_vs_dot_sweep(
    params: KernelParams, depths, num_points: int = 41
) -> list[dict]:
    """Pre-readout kernel values on a dot grid in [-1, 1] for each depth.

    At depth 0 the kernel equals the inner product itself; without input
    injection the values flatten across the grid as depth grows, with
    injection they stay strictly increasing in dot.
    """
    dots = np.linspace(-1.0, 1.0, num_points)
    rows = []
    for d in depths:
        theta = finite_depth_theta(dots, d, params, include_output_layer=False)
        for x, t in zip(dots, np.atleast_1d(theta)):
            rows.append({"dot": float(x), "depth": int(d), "theta": float(t)})
    return rows


def write_rows_csv(rows: list[dict], path, columns) -> None:
    """CSV with a fixed column order; floats at 17 significant digits."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [
                    f"{row[c]:.17g}" if isinstance(row[c], float) else row[c]
                    for c in columns
                ]
            )

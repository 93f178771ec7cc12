"""Figure-ground masks from a visual-effect map.

Pipeline: SLIC over-segmentation of the image, a region adjacency graph
weighted by CIE Lab color affinity, diffusion of superpixel-mean effect
values through the graph, and mean-thresholding of the smoothed values.

The diffusion solves (D - t2 W) A = I and row-normalizes A. Rather than
forming the inverse, `propagate` exploits that the row-normalized result
is elementwise solve(M, r) / solve(M, 1) with M = D - t2 W, solved per
connected component.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from skimage import color as skcolor
from skimage import segmentation

from .core import (
    BinaryMask,
    DimensionMismatch,
    ImageTensor,
    VerMap,
    VfxsegError,
    validate_image,
)

log = logging.getLogger(__name__)

DENSE_SOLVE_LIMIT = 2000


class DegenerateImage(VfxsegError):
    pass


class SingularSystem(VfxsegError):
    pass


@dataclass
class BinarizeParams:
    n_target: int = 400
    theta1: float = 10.0
    theta2: float = 0.99
    compactness: float = 10.0


@dataclass
class SuperpixelGraph:
    """Region adjacency graph over a superpixel labeling."""

    n_superpixels: int
    lab_means: np.ndarray          # |S| x 3, Lab / 100
    edges: np.ndarray              # E x 2 int pairs, i < j
    weights: sparse.csr_matrix     # |S| x |S| symmetric, zero diagonal
    theta1: float = 10.0
    sizes: np.ndarray = field(default=None, repr=False)  # pixels per superpixel


def oversegment(img: ImageTensor, n_target: int, compactness: float = 10.0) -> np.ndarray:
    """SLIC-style over-segmentation into roughly n_target regions.

    Returns an H x W int array with consecutive labels starting at 0;
    orphan fragments are merged into spatial neighbors so every region
    is connected.
    """
    img = validate_image(img)
    h, w = img.shape[:2]
    if n_target < 2:
        raise ValueError("n_target must be at least 2")
    if h * w < n_target:
        raise DegenerateImage(f"{h}x{w} image cannot hold {n_target} superpixels")
    labels = segmentation.slic(
        img.astype(np.float64),
        n_segments=n_target,
        compactness=compactness,
        start_label=0,
        enforce_connectivity=True,
        channel_axis=2,
    )
    # compact the label range so every label occurs
    _, labels = np.unique(labels, return_inverse=True)
    return labels.reshape(h, w).astype(np.int64)


def _region_means(values: np.ndarray, labels: np.ndarray, n: int) -> np.ndarray:
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    if values.ndim == 2:
        sums = np.bincount(flat, weights=values.ravel(), minlength=n)
        return sums / counts
    out = np.empty((n, values.shape[-1]))
    for c in range(values.shape[-1]):
        out[:, c] = np.bincount(flat, weights=values[..., c].ravel(), minlength=n)
    return out / counts[:, None]


def _adjacency_pairs(labels: np.ndarray) -> np.ndarray:
    """Unique 4-connectivity label pairs (i < j)."""
    right = np.stack([labels[:, :-1].ravel(), labels[:, 1:].ravel()], axis=1)
    down = np.stack([labels[:-1, :].ravel(), labels[1:, :].ravel()], axis=1)
    pairs = np.concatenate([right, down], axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.sort(pairs, axis=1)
    if pairs.size == 0:
        return pairs.reshape(0, 2)
    return np.unique(pairs, axis=0)


LAB_SCALE = 100.0  # Lab channels divided by this before distances


def build_graph(img: ImageTensor, labeling: np.ndarray, theta1: float = 10.0) -> SuperpixelGraph:
    """Region adjacency graph with w_ij = exp(-theta1 ||c_i - c_j||).

    c_i are the CIE Lab (D65) mean colors of the regions, Lab channels at
    native scale then divided by 100 (the span of L) so that theta1 = 10
    keeps same-object affinities high while cross-object ones vanish.
    """
    img = validate_image(img)
    if labeling.shape != img.shape[:2]:
        raise DimensionMismatch(
            f"labeling {labeling.shape} does not match image {img.shape[:2]}"
        )
    n = int(labeling.max()) + 1
    lab = skcolor.rgb2lab(img.astype(np.float64)) / LAB_SCALE
    lab_means = _region_means(lab, labeling, n)
    sizes = np.bincount(labeling.ravel(), minlength=n)
    edges = _adjacency_pairs(labeling)
    if edges.shape[0]:
        dist = np.linalg.norm(lab_means[edges[:, 0]] - lab_means[edges[:, 1]], axis=1)
        w = np.exp(-theta1 * dist)
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        weights = sparse.csr_matrix(
            (np.concatenate([w, w]), (rows, cols)), shape=(n, n)
        )
    else:
        weights = sparse.csr_matrix((n, n))
    return SuperpixelGraph(
        n_superpixels=n,
        lab_means=lab_means,
        edges=edges,
        weights=weights,
        theta1=theta1,
        sizes=sizes,
    )


def mean_ver(labeling: np.ndarray, ver: VerMap) -> np.ndarray:
    """Per-superpixel mean of the effect map."""
    ver = np.asarray(ver, dtype=np.float64)
    if ver.shape != labeling.shape:
        raise DimensionMismatch(
            f"ver {ver.shape} does not match labeling {labeling.shape}"
        )
    n = int(labeling.max()) + 1
    return _region_means(ver, labeling, n)


def _solve_component(W: np.ndarray, r: np.ndarray, theta2: float) -> np.ndarray:
    """Row-normalized (D - theta2 W)^{-1} applied to r, dense path."""
    d = W.sum(axis=1)
    M = np.diag(d) - theta2 * W
    try:
        sol = np.linalg.solve(M, np.stack([r, np.ones_like(r)], axis=1))
    except np.linalg.LinAlgError as e:
        raise SingularSystem(str(e)) from e
    num, den = sol[:, 0], sol[:, 1]
    if np.any(den <= 0) or not np.all(np.isfinite(den)):
        raise SingularSystem("propagation system is singular or indefinite")
    return num / den


def _solve_component_sparse(W: sparse.csr_matrix, r: np.ndarray, theta2: float) -> np.ndarray:
    from scipy.sparse.linalg import spsolve

    d = np.asarray(W.sum(axis=1)).ravel()
    M = (sparse.diags(d) - theta2 * W).tocsc()
    rhs = np.stack([r, np.ones_like(r)], axis=1)
    sol = spsolve(M, rhs)
    sol = np.asarray(sol)
    num, den = sol[:, 0], sol[:, 1]
    if np.any(den <= 0) or not np.all(np.isfinite(den)):
        raise SingularSystem("propagation system is singular or indefinite")
    return num / den


def propagate(graph: SuperpixelGraph, r: np.ndarray, theta2: float = 0.99) -> np.ndarray:
    """Smooth superpixel values by diffusing along color-affinity edges.

    Computes row_normalize((D - theta2 W)^{-1}) . r per connected
    component; an isolated superpixel keeps its own value. Output is
    bounded by [min(r), max(r)] since the normalized matrix is
    row-stochastic with nonnegative entries for theta2 < 1.
    """
    if not (0.0 < theta2 <= 1.0):
        raise ValueError("theta2 must lie in (0, 1]")
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (graph.n_superpixels,):
        raise DimensionMismatch(
            f"r has shape {r.shape}, expected ({graph.n_superpixels},)"
        )
    W = graph.weights
    n_comp, comp = csgraph.connected_components(W, directed=False)
    out = np.empty_like(r)
    for c in range(n_comp):
        idx = np.flatnonzero(comp == c)
        if idx.size == 1:
            out[idx] = r[idx]  # zero-degree node: nothing to diffuse
            continue
        sub = W[np.ix_(idx, idx)]
        if idx.size <= DENSE_SOLVE_LIMIT:
            out[idx] = _solve_component(sub.toarray(), r[idx], theta2)
        else:
            out[idx] = _solve_component_sparse(sub.tocsr(), r[idx], theta2)
    return out


def threshold(r_hat: np.ndarray, labeling: np.ndarray) -> BinaryMask:
    """Figure = superpixels whose smoothed value strictly exceeds the mean.

    A flat value vector (spread below float-solve noise) means no region
    stands out; that degenerates to an empty figure with a warning.
    """
    r_hat = np.asarray(r_hat, dtype=np.float64)
    spread = float(r_hat.max() - r_hat.min()) if r_hat.size else 0.0
    if spread <= 1e-9 * max(1.0, float(np.abs(r_hat).max(initial=0.0))):
        log.warning("threshold produced an empty figure mask (flat values)")
        return np.zeros(labeling.shape, dtype=bool)
    figure = r_hat > r_hat.mean()
    return figure[labeling]


def binarize(
    img: ImageTensor,
    ver: VerMap,
    params: BinarizeParams | None = None,
    with_info: bool = False,
):
    """Full pipeline: oversegment, build graph, average, propagate, threshold."""
    params = params or BinarizeParams()
    img = validate_image(img)
    ver = np.asarray(ver)
    if ver.shape != img.shape[:2]:
        raise DimensionMismatch(
            f"ver {ver.shape} does not match image {img.shape[:2]}"
        )
    labeling = oversegment(img, params.n_target, params.compactness)
    graph = build_graph(img, labeling, params.theta1)
    r = mean_ver(labeling, ver)
    r_hat = propagate(graph, r, params.theta2)
    mask = threshold(r_hat, labeling)
    if with_info:
        info = {
            "n_superpixels": int(graph.n_superpixels),
            "theta1": float(params.theta1),
            "theta2": float(params.theta2),
            "threshold": float(r_hat.mean()),
        }
        return mask, info
    return mask

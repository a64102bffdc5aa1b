"""Graph-gradient similarity over keypoint neighborhoods (GraphSIM and
its multi-scale extension).

Keypoints are reference points with the strongest high-pass response
(distance to the mean of their k nearest neighbors). Around every
keypoint a local graph is built in both clouds; Gaussian color model
signals on the graph give weighted gradient features whose SIM ratios
multiply into a per-keypoint score. Coarser scales keep every 2^s-th
member of the distance-sorted neighborhood and contract it toward the
bounding-box centroid. 1 means identical.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..cloud import PointCloud, bounding_box
from ..colorspace import rgb_to_gaussian
from ..errors import AllKeypointsEmpty
from ..spatial import SpatialIndex, build_index

SIM_KINDS = ("mg", "ug", "cg")

DEFAULT_T = (0.001, 0.001, 0.001)
DEFAULT_CHANNEL_WEIGHTS = (6.0, 1.0, 1.0)


@dataclass(frozen=True)
class KeypointSet:
    indices: np.ndarray    # sorted by descending response, ties by index
    responses: np.ndarray  # response of every cloud point


@dataclass(frozen=True)
class GradientFeatures:
    """Weighted gradient summary of one local graph, one row per channel."""

    m_g: np.ndarray        # (c,) gradient sum
    mu_g: np.ndarray       # (c,) gradient mean
    var_g: np.ndarray      # (c,) gradient variance (population)
    gradients: np.ndarray  # (n_members - 1, c) distance-ordered

    @classmethod
    def empty(cls, channels: int) -> "GradientFeatures":
        z = np.zeros(channels)
        return cls(z, z.copy(), z.copy(), np.zeros((0, channels)))


def graph_filter_response(cloud: PointCloud, k_graph: int = 10,
                          index: SpatialIndex = None) -> np.ndarray:
    """High-pass response: distance to the mean of the k nearest others."""
    index = index or build_index(cloud)
    n = len(cloud)
    k = min(k_graph, n - 1)
    if k < 1:
        return np.zeros(n)
    idx, _ = index.knn_batch(cloud.positions, k + 1)
    self_col = np.where((idx == np.arange(n)[:, None]).any(axis=1),
                        (idx == np.arange(n)[:, None]).argmax(axis=1), 0)
    keep = np.arange(k + 1)[None, :] != self_col[:, None]
    nbrs = idx[keep].reshape(n, k)
    mean = cloud.positions[nbrs].mean(axis=1)
    return np.linalg.norm(cloud.positions - mean, axis=1)


def extract_keypoints(cloud: PointCloud, fraction: float = 0.1,
                      k_graph: int = 10,
                      index: SpatialIndex = None) -> KeypointSet:
    """Top ceil(fraction * n) points by response, ties by ascending index."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    responses = graph_filter_response(cloud, k_graph, index)
    n = len(responses)
    order = np.lexsort((np.arange(n), -responses))
    count = int(math.ceil(fraction * n))
    return KeypointSet(order[:count], responses)


def scale_transform(member_positions, scale: int, centroid):
    """Systematic downsample plus contraction toward the centroid.

    member_positions must be distance-sorted; every 2^scale-th row is
    kept (offset 0) and mapped to centroid + (p - centroid) / 2^scale.
    Returns (kept_row_indices, transformed_positions).
    """
    if scale < 0:
        raise ValueError("scale must be >= 0")
    step = 2 ** int(scale)
    kept = np.arange(0, len(member_positions), step)
    if step == 1:
        # scale 0 is the identity, bit for bit
        return kept, np.asarray(member_positions, dtype=np.float64)
    moved = centroid + (member_positions[kept] - centroid) / step
    return kept, moved


def _graph_features(positions, signals, center_pos, smoothing=True,
                    sigma=None) -> GradientFeatures:
    """Gradient features of one graph whose members are distance-sorted.

    The first member carries the center signal; remaining members
    contribute gradients sqrt(W)*(f - f_center) with Gaussian weights of
    their distance to the center position (bandwidth sigma, self-tuned to
    the mean member distance when not given).
    """
    channels = signals.shape[1]
    if len(positions) == 0:
        return GradientFeatures.empty(channels)
    diff = positions - center_pos
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if sigma is None:
        sigma = float(d[1:].mean()) if len(d) > 1 else 0.0
    if sigma > 0.0:
        w = np.exp(-(d * d) / (sigma * sigma))
    else:
        w = np.ones_like(d)

    f = signals
    if smoothing and len(positions) > 1:
        diff = positions[:, None, :] - positions[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        if sigma > 0.0:
            w_pair = np.exp(-d2 / (sigma * sigma))
        else:
            w_pair = np.ones_like(d2)
        f = (w_pair @ signals) / w_pair.sum(axis=1, keepdims=True)

    g = np.sqrt(w[1:, None]) * (f[1:] - f[0])
    if len(g) == 0:
        return GradientFeatures.empty(channels)
    m_g = g.sum(axis=0)
    mu_g = m_g / len(g)
    gd = g - g.mean(axis=0)
    var_g = (gd * gd).mean(axis=0)
    return GradientFeatures(m_g, mu_g, var_g, g)


def local_graph_features(cloud: PointCloud, center, radius: float,
                         smoothing: bool = True, sigma: float = None,
                         index: SpatialIndex = None,
                         signals: np.ndarray = None) -> GradientFeatures:
    """Gradient features of the radius graph around an arbitrary center."""
    index = index or build_index(cloud)
    if signals is None:
        signals = rgb_to_gaussian(cloud.require_colors("graph features"))
    center = np.asarray(center, dtype=np.float64)
    (idx, _), = index.radius_batch(center, float(radius),
                                   sort_by_distance=True)
    return _graph_features(cloud.positions[idx], signals[idx], center,
                           smoothing, sigma)


def graph_pair_sims(feat_ref: GradientFeatures, feat_dist: GradientFeatures,
                    t=DEFAULT_T) -> np.ndarray:
    """SIM_mg, SIM_ug, SIM_cg per channel, shape (3, c).

    Gradient sequences of unequal length are zero-padded so a missing
    (hole) side is compared against a zero-gradient graph.
    """
    t0, t1, t2 = t
    sim_m = ((2.0 * feat_ref.m_g * feat_dist.m_g + t0)
             / (feat_ref.m_g ** 2 + feat_dist.m_g ** 2 + t0))
    sim_u = ((2.0 * feat_ref.mu_g * feat_dist.mu_g + t1)
             / (feat_ref.mu_g ** 2 + feat_dist.mu_g ** 2 + t1))

    gr, gd = feat_ref.gradients, feat_dist.gradients
    n = max(len(gr), len(gd))
    channels = sim_m.shape[0]
    if n == 0:
        sim_c = np.ones(channels)
    else:
        if len(gr) < n:
            gr = np.vstack([gr, np.zeros((n - len(gr), channels))])
        if len(gd) < n:
            gd = np.vstack([gd, np.zeros((n - len(gd), channels))])
        dr = gr - gr.mean(axis=0)
        dd = gd - gd.mean(axis=0)
        cov = (dr * dd).mean(axis=0)
        var_r = (dr * dr).mean(axis=0)
        var_d = (dd * dd).mean(axis=0)
        sim_c = (cov + t2) / (np.sqrt(var_r * var_d) + t2)
    return np.stack([sim_m, sim_u, sim_c])


@dataclass(frozen=True)
class GraphSimScore:
    per_scale: np.ndarray   # (n_scales,) pooled |SIM product| per scale
    overall: float          # scale-weighted mean of per_scale
    sims: np.ndarray        # (n_scales, 3) channel-pooled mean SIM by kind
    scales: tuple
    n_keypoints: int
    empty_dist_graphs: int

    def sim(self, kind: str, scale: int) -> float:
        return float(self.sims[self.scales.index(scale),
                               SIM_KINDS.index(kind)])


def msgraphsim_score(ref: PointCloud, dist: PointCloud,
                     scales=(0, 1, 2), scale_weights=None,
                     keypoint_fraction: float = 0.1, k_graph: int = 10,
                     radius: float = None, radius_factor: float = 2.0,
                     t=DEFAULT_T, smoothing: bool = True,
                     channel_weights=DEFAULT_CHANNEL_WEIGHTS,
                     color_matrix=None,
                     ref_index: SpatialIndex = None,
                     dist_index: SpatialIndex = None) -> GraphSimScore:
    """Multi-scale graph similarity of dist against ref.

    The graph radius defaults to radius_factor times the mean NN distance
    of the reference. Keypoints with an empty dist-side graph at some
    scale are scored against a zero-feature graph (holes must hurt the
    score, not vanish from it).
    """
    scales = tuple(int(s) for s in scales)
    weights = (np.full(len(scales), 1.0 / len(scales))
               if scale_weights is None
               else np.asarray(scale_weights, dtype=np.float64))
    if weights.shape != (len(scales),):
        raise ValueError("scale_weights must match scales")
    cw = np.asarray(channel_weights, dtype=np.float64)

    ref_index = ref_index or build_index(ref)
    dist_index = dist_index or build_index(dist)
    if radius is None:
        radius = radius_factor * ref_index.mean_nn_distance()
    if radius <= 0.0:
        raise ValueError("graph radius must be positive")

    sig_ref = rgb_to_gaussian(ref.require_colors("MS-GraphSIM"),
                              color_matrix)
    sig_dist = rgb_to_gaussian(dist.require_colors("MS-GraphSIM"),
                               color_matrix)
    keypoints = extract_keypoints(ref, keypoint_fraction, k_graph, ref_index)
    kp_pos = ref.positions[keypoints.indices]
    centroid = bounding_box(ref).centroid

    ref_lists = ref_index.radius_batch(kp_pos, radius, sort_by_distance=True)
    dist_lists = dist_index.radius_batch(kp_pos, radius,
                                         sort_by_distance=True)

    n_kp = len(keypoints.indices)
    sims = np.zeros((n_kp, len(scales), 3, 3))      # kp, scale, kind, channel
    used = np.zeros(n_kp, dtype=bool)
    empty_dist = 0
    for i in range(n_kp):
        r_idx, _ = ref_lists[i]
        d_idx, _ = dist_lists[i]
        if len(r_idx) == 0 and len(d_idx) == 0:
            continue
        used[i] = True
        r_pos_all, d_pos_all = ref.positions[r_idx], dist.positions[d_idx]
        for si, scale in enumerate(scales):
            step = 2 ** scale
            center = (kp_pos[i] if step == 1
                      else centroid + (kp_pos[i] - centroid) / step)
            kept_r, pos_r = scale_transform(r_pos_all, scale, centroid)
            feat_r = _graph_features(pos_r, sig_ref[r_idx[kept_r]], center,
                                     smoothing)
            if len(d_idx) == 0:
                feat_d = GradientFeatures.empty(3)
                if si == 0:
                    empty_dist += 1
            else:
                kept_d, pos_d = scale_transform(d_pos_all, scale, centroid)
                feat_d = _graph_features(pos_d, sig_dist[d_idx[kept_d]],
                                         center, smoothing)
            sims[i, si] = graph_pair_sims(feat_r, feat_d, t)

    if not used.any():
        raise AllKeypointsEmpty("no keypoint produced a non-empty graph")
    if empty_dist == n_kp:
        # no keypoint found any dist-side support: the clouds are disjoint
        # at this radius and a score would only measure the constant T
        raise AllKeypointsEmpty(
            f"all {n_kp} keypoints have an empty dist-side graph at "
            f"radius {radius:g}")
    sims = sims[used]

    # per-kind features: channel-pooled SIMs averaged over keypoints
    pooled_kind = np.einsum("ksjc,c->ksj", sims, cw) / cw.sum()
    kind_means = pooled_kind.mean(axis=0)            # (n_scales, 3)
    # overall score: channel-pooled absolute SIM product per keypoint
    product = np.abs(sims.prod(axis=2))              # (kp, scale, channel)
    per_scale = (product @ cw / cw.sum()).mean(axis=0)
    overall = float(per_scale @ weights / weights.sum())
    return GraphSimScore(per_scale, overall, kind_means, scales,
                         n_kp, empty_dist)


def graphsim_score(ref: PointCloud, dist: PointCloud, **kwargs) -> float:
    """Single-scale GraphSIM: scale 0 of the multi-scale score."""
    kwargs.setdefault("scales", (0,))
    return float(msgraphsim_score(ref, dist, **kwargs).per_scale[0])

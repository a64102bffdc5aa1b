"""Curvature- and color-comparison features (PCQM family).

For every reference point the local surface of a source cloud is modeled
by a quadric (giving a mean-curvature field) and a perceptual color is
assigned from the exact nearest source point. Gaussian-weighted
statistics of both fields over radius-h reference neighborhoods feed
eight bounded comparison features:

    f1, f2, f3  curvature mean / std / structure  (0 = identical)
    f4, f5, f6  lightness mean / contrast / structure  (1 = identical)
    f7, f8      chroma and hue comparison  (1 = identical)

plus a weighted aggregate distance (0 = identical).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..cloud import PointCloud
from ..colorspace import Lab2000HLTable, rgb_to_perceptual
from ..errors import SettingsMismatch, UnknownFeatureName
from ..spatial import SpatialIndex, build_index
from ..surface import fit_local_surfaces

FEATURE_NAMES = ("f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8")

# distance-form features read 0 = identical; the rest are similarities
_DISTANCE_FORM = frozenset(("f1", "f2", "f3"))

DEFAULT_CONSTANTS = {
    "k1": 1e-8, "k2": 1e-8, "k3": 1e-8,   # ratio stabilizers (curvature)
    "k4": 0.002, "k5": 1e-8, "k6": 1e-8,  # lightness
    "k7": 0.002, "k8": 0.002,             # chroma / hue sensitivity
}

DEFAULT_AGGREGATE_WEIGHTS = {"f3": 0.18, "f4": 0.44, "f6": 0.38}


@dataclass(frozen=True)
class Correspondence:
    """Per-reference-point fields sampled from one source cloud."""

    positions: np.ndarray    # (m, 3) the reference points themselves
    curvature: np.ndarray    # (m,) |mean curvature| of the source surface
    lightness: np.ndarray    # (m,) perceptual L
    chroma_a: np.ndarray     # (m,)
    chroma_b: np.ndarray     # (m,)
    chroma: np.ndarray       # (m,) sqrt(a^2 + b^2)
    radius: float
    color_mode: str          # "cielab" or "lab2000hl"
    plane_fallbacks: int
    degenerates: int


def build_correspondence(ref: PointCloud, dist: PointCloud, h: float,
                         table: Optional[Lab2000HLTable] = None,
                         dist_index: SpatialIndex = None) -> Correspondence:
    """Sample the dist surface at every ref point.

    Curvature comes from a quadric fitted to the dist points within h of
    each ref point; color comes from the exact nearest dist point. With
    dist = ref this reproduces the reference's own fields.
    """
    colors = dist.require_colors("PCQM correspondence")
    dist_index = dist_index or build_index(dist)
    lists = [idx for idx, _ in
             dist_index.radius_batch(ref.positions, float(h))]
    fit = fit_local_surfaces(dist.positions, lists, ref.positions)

    nn, _ = dist_index.nearest_batch(ref.positions)
    lab = rgb_to_perceptual(colors[nn], table)
    a, b = lab[:, 1], lab[:, 2]
    return Correspondence(
        positions=ref.positions,
        curvature=fit.curvatures,
        lightness=lab[:, 0],
        chroma_a=a,
        chroma_b=b,
        chroma=np.hypot(a, b),
        radius=float(h),
        color_mode="lab2000hl" if table is not None else "cielab",
        plane_fallbacks=int(fit.plane_fallback.sum()),
        degenerates=int(fit.degenerate.sum()),
    )


@dataclass(frozen=True)
class PcqmFeatures:
    values: np.ndarray       # (8,) pooled features, each in [0, 1]
    n_points: int
    radius: float
    color_mode: str

    def as_dict(self):
        return {name: float(v) for name, v in zip(FEATURE_NAMES, self.values)}


class _Segments:
    """Gaussian-weighted two-pass statistics over ragged neighborhoods."""

    def __init__(self, lists, distances, sigma):
        counts = np.fromiter((len(l) for l in lists), dtype=np.int64,
                             count=len(lists))
        self.counts = counts
        self.offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
        self.flat = np.concatenate(lists).astype(np.int64)
        self.rows = np.repeat(np.arange(len(lists)), counts)
        d = np.concatenate(distances)
        self.w = np.exp(-(d * d) / (2.0 * sigma * sigma))
        self.w_sum = np.add.reduceat(self.w, self.offsets)

    def mean(self, field):
        s = np.add.reduceat(self.w * field[self.flat], self.offsets)
        return s / self.w_sum

    def cov(self, field_x, mean_x, field_y, mean_y):
        dx = field_x[self.flat] - mean_x[self.rows]
        dy = field_y[self.flat] - mean_y[self.rows]
        s = np.add.reduceat(self.w * dx * dy, self.offsets)
        return s / self.w_sum

    def var(self, field, mean):
        return self.cov(field, mean, field, mean)


def compute_pcqm_features(corr_ref: Correspondence,
                          corr_dist: Correspondence,
                          constants: dict = None,
                          ref_index: SpatialIndex = None) -> PcqmFeatures:
    """Pooled f1..f8 from two correspondences built with the same h."""
    if corr_ref.radius != corr_dist.radius:
        raise SettingsMismatch(
            f"correspondence radii differ: {corr_ref.radius} vs "
            f"{corr_dist.radius}")
    if corr_ref.color_mode != corr_dist.color_mode:
        raise SettingsMismatch("correspondence color modes differ")
    if not np.array_equal(corr_ref.positions, corr_dist.positions):
        raise SettingsMismatch(
            "correspondences were built over different reference points")

    k = dict(DEFAULT_CONSTANTS)
    if constants:
        k.update(constants)
    h = corr_ref.radius
    index = ref_index or build_index(corr_ref.positions)
    pairs = index.radius_batch(corr_ref.positions, h)
    seg = _Segments([p[0] for p in pairs], [p[1] for p in pairs],
                    sigma=h / 3.0)

    mu_rho_r = seg.mean(corr_ref.curvature)
    mu_rho_d = seg.mean(corr_dist.curvature)
    var_rho_r = seg.var(corr_ref.curvature, mu_rho_r)
    var_rho_d = seg.var(corr_dist.curvature, mu_rho_d)
    cov_rho = seg.cov(corr_ref.curvature, mu_rho_r,
                      corr_dist.curvature, mu_rho_d)
    mu_l_r = seg.mean(corr_ref.lightness)
    mu_l_d = seg.mean(corr_dist.lightness)
    var_l_r = seg.var(corr_ref.lightness, mu_l_r)
    var_l_d = seg.var(corr_dist.lightness, mu_l_d)
    cov_l = seg.cov(corr_ref.lightness, mu_l_r, corr_dist.lightness, mu_l_d)
    mu_c_r = seg.mean(corr_ref.chroma)
    mu_c_d = seg.mean(corr_dist.chroma)

    da = corr_ref.chroma_a - corr_dist.chroma_a
    db = corr_ref.chroma_b - corr_dist.chroma_b
    dc = corr_ref.chroma - corr_dist.chroma
    delta_h = np.sqrt(da * da + db * db + dc * dc)
    mean_dh = seg.mean(delta_h)

    sd_rho_r = np.sqrt(var_rho_r)
    sd_rho_d = np.sqrt(var_rho_d)
    # sqrt(var*var') rather than sd*sd' keeps identical inputs exactly equal
    prod_rho = np.sqrt(var_rho_r * var_rho_d)
    prod_l = np.sqrt(var_l_r * var_l_d)

    f1 = np.abs(mu_rho_r - mu_rho_d) / (np.maximum(mu_rho_r, mu_rho_d) + k["k1"])
    f2 = np.abs(sd_rho_r - sd_rho_d) / (np.maximum(sd_rho_r, sd_rho_d) + k["k2"])
    f3 = np.abs(prod_rho - cov_rho) / (prod_rho + k["k3"])
    dl = mu_l_r - mu_l_d
    f4 = 1.0 / (k["k4"] * dl * dl + 1.0)
    f5 = (2.0 * prod_l + k["k5"]) / (var_l_r + var_l_d + k["k5"])
    f6 = (cov_l + k["k6"]) / (prod_l + k["k6"])
    dcm = mu_c_r - mu_c_d
    f7 = 1.0 / (k["k7"] * dcm * dcm + 1.0)
    f8 = 1.0 / (k["k8"] * mean_dh * mean_dh + 1.0)

    stacked = np.clip(np.stack([f1, f2, f3, f4, f5, f6, f7, f8]), 0.0, 1.0)
    return PcqmFeatures(stacked.mean(axis=1), len(corr_ref.positions), h,
                        corr_ref.color_mode)


def pcqm_aggregate(features: PcqmFeatures, weights: dict = None) -> float:
    """Weighted distance over selected features, 0 = identical.

    Similarity-form features (f4..f8) enter as 1 - f so every term reads
    as a distortion. Default weights reproduce the recommended
    0.18*f3 + 0.44*(1-f4) + 0.38*(1-f6) combination.
    """
    weights = DEFAULT_AGGREGATE_WEIGHTS if weights is None else weights
    table = features.as_dict()
    total = 0.0
    for name, weight in weights.items():
        if name not in table:
            raise UnknownFeatureName(f"no PCQM feature named {name!r}")
        value = table[name]
        total += weight * (value if name in _DISTANCE_FORM else 1.0 - value)
    return total

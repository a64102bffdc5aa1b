"""Dataset manifest handling and batch feature extraction.

A manifest CSV lists reference/distorted pairs with subjective scores:

    group_id,ref_path,dist_path,mos[,mos_std][,codec][,rate]

Extraction computes the 23-column fusion feature vector for every pair,
optionally in parallel and backed by a content-addressed cache keyed on
the raw bytes of both files plus the semantic configuration, so edits to
either invalidate stale entries. Feature and score tables round-trip
through CSV with shortest-repr floats, which keeps reruns bit-identical.
"""

import csv
import hashlib
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .cloud import PointCloud, bounding_box
from .colorspace import Lab2000HLTable
from .config import Config
from .errors import (BadMosValue, ConfigMismatch, JoinMismatch, MissingColumn,
                     SchemaMismatch)
from .io_ply import load_ply
from .metrics.graphsim import msgraphsim_score
from .metrics.pcqm import (build_correspondence, compute_pcqm_features,
                           pcqm_aggregate)
from .metrics.pointssim import extract_dispersion, pointssim_score
from .metrics.psnr import compute_d1, compute_d2, compute_yuv
from .spatial import build_index

__all__ = ["FEATURE_COLUMNS", "ManifestRow", "load_manifest",
           "compute_pair_metrics", "feature_vector", "FeatureTable",
           "extract_features", "write_features_csv", "read_features_csv",
           "write_scores_csv", "read_scores_csv", "join_scores"]

_SCHEMA = 1

FEATURE_COLUMNS = (
    "psnr_d2", "psnr_y", "psnr_u", "psnr_v",
    "pointssim_lum", "pointssim_geo",
    "pcqm_f1", "pcqm_f2", "pcqm_f3", "pcqm_f4",
    "pcqm_f5", "pcqm_f6", "pcqm_f7", "pcqm_f8",
    "msgsim_mg_s0", "msgsim_ug_s0", "msgsim_cg_s0",
    "msgsim_mg_s1", "msgsim_ug_s1", "msgsim_cg_s1",
    "msgsim_mg_s2", "msgsim_ug_s2", "msgsim_cg_s2",
)

_MANIFEST_REQUIRED = ("group_id", "ref_path", "dist_path", "mos")
_MANIFEST_OPTIONAL = ("mos_std", "codec", "rate")


@dataclass(frozen=True)
class ManifestRow:
    group_id: str
    ref_path: str            # as written in the manifest
    dist_path: str
    mos: float
    mos_std: Optional[float] = None
    codec: str = ""
    rate: str = ""
    ref_file: str = ""       # resolved relative to the manifest location
    dist_file: str = ""


def _parse_float(raw: str, what: str, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise BadMosValue(f"row {line}: {what} {raw!r} is not a number") \
            from None
    if not np.isfinite(value):
        raise BadMosValue(f"row {line}: {what} {raw!r} is not finite")
    return value


def load_manifest(path: str):
    """Parse a manifest CSV into ManifestRow records.

    Relative cloud paths are resolved against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, newline="") as stream:
        reader = csv.DictReader(stream)
        header = reader.fieldnames or []
        missing = [c for c in _MANIFEST_REQUIRED if c not in header]
        if missing:
            raise MissingColumn(f"manifest lacks columns {missing}")
        for record in reader:
            line = reader.line_num
            mos = _parse_float(record["mos"], "mos", line)
            std_raw = (record.get("mos_std") or "").strip()
            mos_std = (_parse_float(std_raw, "mos_std", line)
                       if std_raw else None)
            ref_path = record["ref_path"].strip()
            dist_path = record["dist_path"].strip()
            if not ref_path or not dist_path:
                raise MissingColumn(f"row {line}: empty cloud path")
            rows.append(ManifestRow(
                group_id=record["group_id"].strip(),
                ref_path=ref_path, dist_path=dist_path,
                mos=mos, mos_std=mos_std,
                codec=(record.get("codec") or "").strip(),
                rate=(record.get("rate") or "").strip(),
                ref_file=os.path.join(base, ref_path),
                dist_file=os.path.join(base, dist_path)))
    if not rows:
        raise MissingColumn(f"manifest {path!r} has no data rows")
    return rows


# ---------------------------------------------------------------------------
# per-pair computation

def compute_pair_metrics(ref: PointCloud, dist: PointCloud,
                         config: Config = None) -> dict:
    """Every metric for one pair, as a flat name -> float dict.

    PSNR entries are raw dB and may be +inf; feature_vector() applies
    the configured cap. Spatial indices and color conversions are shared
    across the metric family where the definitions allow it.
    """
    config = config or Config()
    if config.graphsim_n_scales < 3:
        raise ConfigMismatch(
            "graphsim_n_scales must be at least 3 to fill the feature set")
    if config.cloud_bit_depth is not None:
        ref = replace(ref, bit_depth=config.cloud_bit_depth)
        dist = replace(dist, bit_depth=config.cloud_bit_depth)
    ref_index = build_index(ref)
    dist_index = build_index(dist)
    out = {}

    d1 = compute_d1(ref, dist, ref_index=ref_index, dist_index=dist_index)
    d2 = compute_d2(ref, dist, normal_radius=config.psnr_normal_radius,
                    ref_index=ref_index, dist_index=dist_index)
    yuv = compute_yuv(ref, dist, matrix=config.psnr_ycbcr_matrix,
                      cap_db=config.psnr_cap_db,
                      symmetric=config.psnr_yuv_symmetric,
                      ref_index=ref_index, dist_index=dist_index)
    out["psnr_d1"] = d1.psnr_db
    out["psnr_d2"] = d2.psnr_db
    out["psnr_y"] = yuv.y.psnr_db
    out["psnr_u"] = yuv.u.psnr_db
    out["psnr_v"] = yuv.v.psnr_db
    out["psnr_yuv"] = yuv.psnr_combined

    est, k, pexp = (config.pointssim_estimator, config.pointssim_k,
                    config.pointssim_pooling_exponent)
    for attribute, name in (("luminance", "pointssim_lum"),
                            ("geometry", "pointssim_geo")):
        out[name] = pointssim_score(
            ref, dist, attribute, est, k, pexp,
            ref_index=ref_index, dist_index=dist_index)

    table = (Lab2000HLTable.load(config.pcqm_lab_table)
             if config.pcqm_lab_table else None)
    h = config.pcqm_radius_factor * bounding_box(ref).diagonal
    corr_ref = build_correspondence(ref, ref, h, table, ref_index)
    corr_dist = build_correspondence(ref, dist, h, table, dist_index)
    constants = {f"k{i}": getattr(config, f"pcqm_k{i}") for i in range(1, 9)}
    pcqm = compute_pcqm_features(corr_ref, corr_dist, constants,
                                 ref_index=ref_index)
    for name, value in pcqm.as_dict().items():
        out[f"pcqm_{name}"] = value
    out["pcqm"] = pcqm_aggregate(pcqm)

    scales = tuple(range(config.graphsim_n_scales))
    gsim = msgraphsim_score(
        ref, dist, scales=scales,
        keypoint_fraction=config.graphsim_keypoint_fraction,
        k_graph=config.graphsim_k,
        radius_factor=config.graphsim_radius_factor,
        t=(config.graphsim_t_mag, config.graphsim_t_mean,
           config.graphsim_t_cov),
        smoothing=config.graphsim_smoothing,
        ref_index=ref_index, dist_index=dist_index)
    for s in scales:
        for kind in ("mg", "ug", "cg"):
            out[f"msgsim_{kind}_s{s}"] = gsim.sim(kind, s)
    out["msgraphsim"] = gsim.overall
    out["graphsim"] = float(gsim.per_scale[0])
    return out


def feature_vector(metrics: dict, config: Config = None) -> np.ndarray:
    """The canonical fusion feature row, with PSNR columns capped."""
    config = config or Config()
    row = np.empty(len(FEATURE_COLUMNS))
    for i, name in enumerate(FEATURE_COLUMNS):
        value = metrics[name]
        if name.startswith("psnr_"):
            value = min(value, config.psnr_cap_db)
        row[i] = value
    return row


def compute_pair_features(ref: PointCloud, dist: PointCloud,
                          config: Config = None) -> np.ndarray:
    return feature_vector(compute_pair_metrics(ref, dist, config), config)


# ---------------------------------------------------------------------------
# batch extraction with a content-addressed cache

def _pair_cache_key(ref_file: str, dist_file: str, config: Config) -> str:
    digest = hashlib.sha256()
    digest.update(f"pcqkit-features-{_SCHEMA}\n".encode())
    digest.update(config.hash.encode())
    for path in (ref_file, dist_file):
        with open(path, "rb") as stream:
            digest.update(hashlib.sha256(stream.read()).digest())
    return digest.hexdigest()


def _cache_read(cache_dir: str, key: str):
    path = os.path.join(cache_dir, key + ".json")
    if not os.path.exists(path):
        return None
    try:
        with open(path) as stream:
            payload = json.load(stream)
    except (OSError, json.JSONDecodeError):
        return None
    if payload.get("schema_version") != _SCHEMA:
        return None
    values = payload.get("features")
    if not isinstance(values, list) or len(values) != len(FEATURE_COLUMNS):
        return None
    return np.asarray(values, dtype=np.float64)


def _cache_write(cache_dir: str, key: str, config_hash: str, row):
    os.makedirs(cache_dir, exist_ok=True)
    payload = {"schema_version": _SCHEMA, "config_hash": config_hash,
               "features": [float(v) for v in row]}
    fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as stream:
            json.dump(payload, stream)
        os.replace(tmp, os.path.join(cache_dir, key + ".json"))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _extract_one(task):
    ref_file, dist_file, config = task
    ref = load_ply(ref_file)
    dist = load_ply(dist_file)
    return compute_pair_features(ref, dist, config)


@dataclass
class FeatureTable:
    """Manifest rows plus their feature matrix, tied to a config hash."""

    rows: list
    feature_names: tuple
    values: np.ndarray
    config_hash: str

    def __len__(self):
        return len(self.rows)

    def mos(self) -> np.ndarray:
        return np.array([r.mos for r in self.rows], dtype=np.float64)

    def mos_std(self):
        stds = [r.mos_std for r in self.rows]
        if any(s is None for s in stds):
            return None
        return np.array(stds, dtype=np.float64)

    def groups(self):
        return [r.group_id for r in self.rows]

    def column(self, name: str) -> np.ndarray:
        if name not in self.feature_names:
            raise SchemaMismatch(f"no feature column {name!r}")
        return self.values[:, self.feature_names.index(name)]


def extract_features(rows, config: Config = None, jobs: int = None,
                     cache_dir: str = None, progress=None):
    """Compute the feature table for manifest rows.

    Returns (FeatureTable, stats) where stats counts cache hits and
    fresh computations. jobs=1 stays in-process; 0 or None uses the
    configured worker count (0 meaning one per CPU). Rows keep manifest
    order regardless of completion order.
    """
    config = config or Config()
    if jobs is None:
        jobs = config.pipeline_jobs
    if jobs == 0:
        jobs = os.cpu_count() or 1
    if cache_dir is None:
        cache_dir = config.pipeline_cache_dir

    values = np.full((len(rows), len(FEATURE_COLUMNS)), np.nan)
    pending = []
    keys = {}
    n_cached = 0
    for i, row in enumerate(rows):
        if cache_dir:
            keys[i] = _pair_cache_key(row.ref_file, row.dist_file, config)
            hit = _cache_read(cache_dir, keys[i])
            if hit is not None:
                values[i] = hit
                n_cached += 1
                if progress:
                    progress(i, len(rows), row, True)
                continue
        pending.append(i)

    if pending:
        tasks = [(rows[i].ref_file, rows[i].dist_file, config)
                 for i in pending]
        if jobs == 1 or len(pending) == 1:
            results = map(_extract_one, tasks)
            for i, vec in zip(pending, results):
                values[i] = vec
                if cache_dir:
                    _cache_write(cache_dir, keys[i], config.hash, vec)
                if progress:
                    progress(i, len(rows), rows[i], False)
        else:
            with ProcessPoolExecutor(max_workers=min(jobs, len(pending))) \
                    as pool:
                for i, vec in zip(pending, pool.map(_extract_one, tasks)):
                    values[i] = vec
                    if cache_dir:
                        _cache_write(cache_dir, keys[i], config.hash, vec)
                    if progress:
                        progress(i, len(rows), rows[i], False)

    table = FeatureTable(list(rows), FEATURE_COLUMNS, values, config.hash)
    return table, {"n_rows": len(rows), "n_cached": n_cached,
                   "n_computed": len(pending)}


# ---------------------------------------------------------------------------
# CSV round-trips (shortest-repr floats, schema + config hash up front)

def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _meta_line(**fields) -> str:
    parts = " ".join(f"{k}={v}" for k, v in fields.items())
    return f"# {parts}\n"


def _read_meta(line: str, path: str) -> dict:
    if not line.startswith("#"):
        raise SchemaMismatch(f"{path!r} lacks the schema header line")
    meta = {}
    for token in line[1:].split():
        if "=" in token:
            key, value = token.split("=", 1)
            meta[key] = value
    if meta.get("schema_version") != str(_SCHEMA):
        raise SchemaMismatch(
            f"{path!r} has schema_version={meta.get('schema_version')!r}, "
            f"expected {_SCHEMA}")
    return meta


_ROW_FIELDS = ("group_id", "ref_path", "dist_path", "mos", "mos_std",
               "codec", "rate")


def write_features_csv(table: FeatureTable, path: str):
    with open(path, "w", newline="") as stream:
        stream.write(_meta_line(schema_version=_SCHEMA,
                                config_hash=table.config_hash))
        writer = csv.writer(stream)
        writer.writerow(list(_ROW_FIELDS) + list(table.feature_names))
        for row, vec in zip(table.rows, table.values):
            writer.writerow([row.group_id, row.ref_path, row.dist_path,
                             _fmt(row.mos), _fmt(row.mos_std),
                             row.codec, row.rate]
                            + [_fmt(v) for v in vec])


def read_features_csv(path: str) -> FeatureTable:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as stream:
        meta = _read_meta(stream.readline(), path)
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None or header[:len(_ROW_FIELDS)] != list(_ROW_FIELDS):
            raise SchemaMismatch(f"{path!r} has an unexpected column set")
        names = tuple(header[len(_ROW_FIELDS):])
        rows, values = [], []
        for record in reader:
            if not record:
                continue
            line = reader.line_num
            fixed, feats = record[:len(_ROW_FIELDS)], record[len(_ROW_FIELDS):]
            if len(feats) != len(names):
                raise SchemaMismatch(
                    f"{path!r} row {line}: expected {len(names)} feature "
                    f"values, got {len(feats)}")
            group, ref_path, dist_path, mos, mos_std, codec, rate = fixed
            rows.append(ManifestRow(
                group_id=group, ref_path=ref_path, dist_path=dist_path,
                mos=_parse_float(mos, "mos", line),
                mos_std=(_parse_float(mos_std, "mos_std", line)
                         if mos_std else None),
                codec=codec, rate=rate,
                ref_file=os.path.join(base, ref_path),
                dist_file=os.path.join(base, dist_path)))
            values.append([float(v) for v in feats])
    return FeatureTable(rows, names, np.asarray(values, dtype=np.float64),
                        meta.get("config_hash", ""))


def write_scores_csv(rows, scores, path: str, model_name: str,
                     config_hash: str):
    with open(path, "w", newline="") as stream:
        stream.write(_meta_line(schema_version=_SCHEMA, model=model_name,
                                config_hash=config_hash))
        writer = csv.writer(stream)
        writer.writerow(["group_id", "ref_path", "dist_path", "score"])
        for row, score in zip(rows, scores):
            writer.writerow([row.group_id, row.ref_path, row.dist_path,
                             _fmt(score)])


def read_scores_csv(path: str):
    """Returns (list of (group_id, ref_path, dist_path), scores, meta)."""
    with open(path, newline="") as stream:
        meta = _read_meta(stream.readline(), path)
        reader = csv.reader(stream)
        header = next(reader, None)
        if header != ["group_id", "ref_path", "dist_path", "score"]:
            raise SchemaMismatch(f"{path!r} has an unexpected column set")
        keys, scores = [], []
        for record in reader:
            if not record:
                continue
            keys.append((record[0], record[1], record[2]))
            scores.append(_parse_float(record[3], "score", reader.line_num))
    return keys, np.asarray(scores, dtype=np.float64), meta


def join_scores(score_keys, manifest_rows):
    """Match score rows to manifest rows by (ref_path, dist_path).

    Returns the manifest row index for each score row; every score row
    must match exactly one manifest row.
    """
    lookup = {}
    for i, row in enumerate(manifest_rows):
        lookup.setdefault((row.ref_path, row.dist_path), []).append(i)
    order = []
    for group, ref_path, dist_path in score_keys:
        hits = lookup.get((ref_path, dist_path), [])
        if len(hits) != 1:
            raise JoinMismatch(
                f"score row ({ref_path!r}, {dist_path!r}) matches "
                f"{len(hits)} manifest rows, expected exactly 1")
        order.append(hits[0])
    if len(set(order)) != len(order):
        raise JoinMismatch("several score rows map to one manifest row")
    return np.asarray(order, dtype=np.intp)

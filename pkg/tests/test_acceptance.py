"""Acceptance gate: one test per release criterion.

Each criterion prints a single ACCEPTANCE line so the gate can be read
off the test log. Criteria are checked at their stated tolerances; a
failing criterion fails its test rather than being weakened.
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from pcqkit.cloud import PointCloud
from pcqkit.config import Config
from pcqkit.errors import DegenerateInput
from pcqkit.evaluation import (error_stats, evaluate, fit_logistic, logistic,
                               pearson, spearman)
from pcqkit.io_ply import save_ply
from pcqkit.metrics.graphsim import GradientFeatures, graph_pair_sims
from pcqkit.metrics.pcqm import (Correspondence, compute_pcqm_features)
from pcqkit.metrics.pointssim import DispersionField, pointssim_score
from pcqkit.metrics.psnr import compute_d1, compute_d2, compute_yuv
from pcqkit.pipeline import (FEATURE_COLUMNS, compute_pair_metrics,
                             feature_vector, read_features_csv)
from pcqkit.regression import (MinMaxScaler, RbfSvr, RidgeRegression,
                               group_kfold, make_model, rbf_kernel, rfe_rank,
                               svr_dual_objective)
from pcqkit.spatial import build_index

from conftest import jitter, random_cloud, surface_cloud


def _verdict(number, name, failures, detail=""):
    status = "FAIL" if failures else "PASS"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {number:02d} {name}: {status}{suffix}")
    assert not failures, f"criterion {number} {name}: {failures}"


# ---------------------------------------------------------------------------
# 1. identity suite: metric(c, c) must hit the exact fixed points

def test_criterion_01_identity_suite():
    started = time.perf_counter()
    failures = []
    sizes = np.geomspace(1_000, 100_000, 10).round().astype(int)
    for trial, n in enumerate(sizes):
        cloud = random_cloud(int(n), seed=trial)
        metrics = compute_pair_metrics(cloud, cloud)
        named = dict(zip(FEATURE_COLUMNS, feature_vector(metrics)))
        for key in ("psnr_d1", "psnr_d2", "psnr_y", "psnr_u", "psnr_v"):
            if not math.isinf(metrics[key]):
                failures.append(f"n={n} {key}={metrics[key]}")
        # lossless channels enter the 6:1:1 combination at the cap
        if metrics["psnr_yuv"] != 100.0:
            failures.append(f"n={n} psnr_yuv={metrics['psnr_yuv']}")
        for key in ("psnr_d2", "psnr_y", "psnr_u", "psnr_v"):
            if named[key] != 100.0:
                failures.append(f"n={n} capped {key}={named[key]}")
        for key in ("pointssim_lum", "pointssim_geo", "pcqm"):
            if metrics[key] != 0.0:
                failures.append(f"n={n} {key}={metrics[key]}")
        for i in (1, 2, 3):
            if metrics[f"pcqm_f{i}"] != 0.0:
                failures.append(f"n={n} pcqm_f{i}={metrics[f'pcqm_f{i}']}")
        for i in (4, 5, 6, 7, 8):
            if metrics[f"pcqm_f{i}"] != 1.0:
                failures.append(f"n={n} pcqm_f{i}={metrics[f'pcqm_f{i}']}")
        sims = [v for k, v in metrics.items() if k.startswith("msgsim")]
        sims += [metrics["msgraphsim"], metrics["graphsim"]]
        if any(v != 1.0 for v in sims):
            failures.append(f"n={n} graph sims {sims}")
    elapsed = time.perf_counter() - started
    if elapsed >= 120.0:
        failures.append(f"runtime {elapsed:.0f}s >= 120s")
    _verdict(1, "identity-suite", failures,
             f"10 clouds up to 1e5 points, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 2. nearest-neighbor oracle: exact agreement with O(n^2) scans

def _brute_knn(points, queries, k):
    diff = queries[:, None, :] - points[None, :, :]
    dst = np.sqrt(np.einsum("qni,qni->qn", diff, diff))
    idx = np.empty((len(queries), k), dtype=np.intp)
    out = np.empty((len(queries), k))
    for q in range(len(queries)):
        order = np.lexsort((np.arange(len(points)), dst[q]))[:k]
        idx[q], out[q] = order, dst[q][order]
    return idx, out


def test_criterion_02_nn_oracle():
    started = time.perf_counter()
    rng = np.random.default_rng(42)
    failures = []
    for trial in range(50):
        n = int(rng.integers(1, 2001))
        points = rng.uniform(-50, 50, size=(n, 3))
        queries = rng.uniform(-55, 55, size=(int(rng.integers(1, 60)), 3))
        index = build_index(PointCloud(points))

        k = int(rng.integers(1, min(n, 16) + 1))
        idx, dst = index.knn_batch(queries, k)
        oidx, odst = _brute_knn(points, queries, k)
        if not (np.array_equal(idx, oidx) and np.array_equal(dst, odst)):
            failures.append(f"knn trial {trial}")

        r = float(rng.uniform(1.0, 40.0))
        diff = queries[:, None, :] - points[None, :, :]
        alldst = np.sqrt(np.einsum("qni,qni->qn", diff, diff))
        for q, (ridx, rdst) in enumerate(
                index.radius_batch(queries, r, sort_by_distance=True)):
            inside = np.where(alldst[q] <= r)[0]
            order = np.lexsort((inside, alldst[q][inside]))
            if not (np.array_equal(ridx, inside[order])
                    and np.array_equal(rdst, alldst[q][inside][order])):
                failures.append(f"radius trial {trial} query {q}")
    elapsed = time.perf_counter() - started
    if elapsed >= 60.0:
        failures.append(f"runtime {elapsed:.0f}s >= 60s")
    _verdict(2, "nn-oracle", failures, f"50 clouds, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 3. hand-value suite: single-point fixtures within 1e-2 dB / 1e-3

def test_criterion_03_hand_values():
    failures = []

    ref = PointCloud(np.array([[0.0, 0.0, 0.0]]), bit_depth=10)
    dist = PointCloud(np.array([[3.0, 4.0, 2.0]]), bit_depth=10)
    d1 = compute_d1(ref, dist).psnr_db
    if abs(d1 - 50.344745) >= 1e-2:
        failures.append(f"d1 {d1}")

    normal = np.array([[0.0, 0.0, 1.0]])
    ref = PointCloud(ref.positions, normals=normal, bit_depth=10)
    dist = PointCloud(dist.positions, normals=normal, bit_depth=10)
    d2 = compute_d2(ref, dist).psnr_db
    if abs(d2 - 58.948125) >= 1e-2:
        failures.append(f"d2 {d2}")

    pos = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
    gray = lambda a, b: np.array([[a, a, a], [b, b, b]], dtype=float)
    y = compute_yuv(PointCloud(pos, colors=gray(100, 100)),
                    PointCloud(pos, colors=gray(110, 90))).y.psnr_db
    if abs(y - 28.130804) >= 1e-2:
        failures.append(f"psnr_y {y}")

    single = PointCloud(np.array([[0.0, 0.0, 0.0]]))
    score = pointssim_score(
        single, single,
        ref_field=DispersionField(np.array([2.0 / 3.0]), "luminance",
                                  "variance", 12),
        dist_field=DispersionField(np.array([38.0 / 3.0]), "luminance",
                                   "variance", 12))
    if abs(score - 0.9473684) >= 1e-3:
        failures.append(f"pointssim {score}")

    zeros = np.zeros(1)
    sim = graph_pair_sims(
        GradientFeatures(np.array([2.0]), zeros, zeros, np.zeros((1, 1))),
        GradientFeatures(np.array([4.0]), zeros, zeros,
                         np.zeros((1, 1))))[0, 0]
    if abs(sim - 0.800) >= 1e-3:
        failures.append(f"sim_mg {sim}")

    def toy(curvature):
        one = np.array([1.0])
        return Correspondence(
            positions=np.zeros((1, 3)), curvature=np.array([curvature]),
            lightness=50.0 * one, chroma_a=one, chroma_b=one,
            chroma=np.sqrt(2.0) * one, radius=1.0, color_mode="cielab",
            plane_fallbacks=0, degenerates=0)

    f1 = compute_pcqm_features(toy(1.0), toy(3.0),
                               {"k1": 0.0}).as_dict()["f1"]
    if abs(f1 - 2.0 / 3.0) >= 1e-3:
        failures.append(f"pcqm f1 {f1}")

    _verdict(3, "hand-values", failures)


# ---------------------------------------------------------------------------
# 4. monotonicity under growing Gaussian noise

def test_criterion_04_monotonicity():
    started = time.perf_counter()
    sigmas = (0.5, 1.0, 2.0, 4.0)
    chains = {key: [] for key in ("psnr_d1", "psnr_d2", "msgsim_mg_s0",
                                  "pcqm", "pointssim_lum", "pointssim_geo")}
    for seed in range(5):
        ref = surface_cloud(1200, seed=seed)
        series = {key: [] for key in chains}
        for level, sigma in enumerate(sigmas):
            # geometry-only noise; every metric responds through the
            # displaced neighborhoods even with colors untouched
            dist = jitter(ref, sigma, seed=1000 + seed * 10 + level)
            metrics = compute_pair_metrics(ref, dist)
            for key in series:
                series[key].append(metrics[key])
        for key, values in series.items():
            chains[key].append(values)

    failures = []
    decreasing = ("psnr_d1", "psnr_d2", "msgsim_mg_s0")
    for key, per_seed in chains.items():
        good = 0
        for values in per_seed:
            steps = np.diff(values)
            good += int(np.all(steps < 0) if key in decreasing
                        else np.all(steps > 0))
        if good < 4:
            failures.append(f"{key}: only {good}/5 seeds strictly monotone")
    elapsed = time.perf_counter() - started
    if elapsed >= 300.0:
        failures.append(f"runtime {elapsed:.0f}s >= 300s")
    _verdict(4, "noise-monotonicity", failures, f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 5. ridge oracle: closed form vs conjugate gradient

def _cg_solve(A, b, iters=8000, tol=1e-14):
    x = np.zeros_like(b)
    r = b - A @ x
    p = r.copy()
    rs = r @ r
    for _ in range(iters):
        Ap = A @ p
        step = rs / (p @ Ap)
        x += step * p
        r -= step * Ap
        rs_new = r @ r
        if np.sqrt(rs_new) < tol * (1.0 + np.linalg.norm(b)):
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def test_criterion_05_ridge_oracle():
    failures = []
    model = RidgeRegression(alpha=1.0).fit([[1.0], [2.0], [3.0]],
                                           [2.0, 4.0, 6.0])
    if abs(model.coef_[0] - 4.0 / 3.0) >= 1e-12:
        failures.append(f"hand slope {model.coef_[0]}")

    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 51))
        p = int(rng.integers(1, 24))
        X = rng.normal(size=(n, p))
        y = rng.normal(size=n)
        alpha = float(rng.uniform(0.05, 10.0))
        fitted = RidgeRegression(alpha=alpha).fit(X, y)
        Xc = X - X.mean(axis=0)
        w = _cg_solve(Xc.T @ Xc + alpha * np.eye(p), Xc.T @ (y - y.mean()))
        worst = max(worst, float(np.max(np.abs(fitted.coef_ - w))))
    if worst >= 1e-6:
        failures.append(f"closed form vs iterative gap {worst:.2e}")
    _verdict(5, "ridge-oracle", failures, f"max gap {worst:.1e}")


# ---------------------------------------------------------------------------
# 6. SVR optimality: KKT residuals and dual dominance

def _feasible_duals(rng, count, n, C):
    """Random points in the box with coordinates summing to ~0."""
    B = rng.uniform(-C, C, size=(count, n))
    pos = np.clip(B, 0.0, None).sum(axis=1)
    neg = -np.clip(B, None, 0.0).sum(axis=1)
    scale_pos = np.where(pos > neg, np.divide(neg, pos, out=np.ones_like(pos),
                                              where=pos > 0), 1.0)
    scale_neg = np.where(neg > pos, np.divide(pos, neg, out=np.ones_like(neg),
                                              where=neg > 0), 1.0)
    B = np.where(B > 0, B * scale_pos[:, None], B * scale_neg[:, None])
    return B


def test_criterion_06_svr_kkt():
    rng = np.random.default_rng(23)
    failures = []
    worst_kkt = 0.0
    for trial in range(20):
        n = int(rng.integers(20, 41))
        X = rng.normal(size=(n, int(rng.integers(2, 6))))
        y = np.sin(X[:, 0]) + 0.5 * X[:, 1] + 0.1 * rng.normal(size=n)
        C = float(rng.uniform(0.5, 4.0))
        eps = float(rng.uniform(0.01, 0.15))
        model = RbfSvr(C=C, epsilon=eps).fit(X, y)

        beta = model._beta_full
        f = model.predict(X)
        for i in range(n):
            r = y[i] - f[i]
            if beta[i] == 0.0:
                v = abs(r) - eps
            elif beta[i] >= C:
                v = eps - r
            elif beta[i] <= -C:
                v = eps + r
            elif beta[i] > 0.0:
                v = abs(r - eps)
            else:
                v = abs(r + eps)
            worst_kkt = max(worst_kkt, v)

        K = rbf_kernel(X, X, model.gamma_)
        best = svr_dual_objective(K, y, eps, beta)
        B = _feasible_duals(rng, 10_000, n, C)
        objectives = (-0.5 * np.einsum("bi,ij,bj->b", B, K, B)
                      - eps * np.abs(B).sum(axis=1) + B @ y)
        if objectives.max() > best + 1e-9:
            failures.append(
                f"trial {trial}: random dual beats optimum by "
                f"{objectives.max() - best:.2e}")
    if worst_kkt > 1e-3:
        failures.append(f"max KKT violation {worst_kkt:.2e} > 1e-3")
    _verdict(6, "svr-kkt", failures, f"max KKT {worst_kkt:.1e}")


# ---------------------------------------------------------------------------
# 7. RFE recovery of planted informative features

def test_criterion_07_rfe_recovery():
    failures = []
    hits = {"ridge": 0, "svr": 0}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(70, 8))
        y = 3.0 * X[:, 0] - 2.0 * X[:, 1] + 0.01 * rng.normal(size=70)
        for estimator in hits:
            params = ({"C": 10.0, "epsilon": 0.01}
                      if estimator == "svr" else None)
            ranking = rfe_rank(X, y, estimator=estimator, seed=seed,
                               estimator_params=params)
            hits[estimator] += int(set(ranking.order[:2]) == {0, 1})
    if hits["ridge"] < 19:
        failures.append(f"ridge recovery {hits['ridge']}/20 < 19")
    if hits["svr"] < 16:
        failures.append(f"svr recovery {hits['svr']}/20 < 16")
    _verdict(7, "rfe-recovery", failures,
             f"ridge {hits['ridge']}/20, svr {hits['svr']}/20")


# ---------------------------------------------------------------------------
# 8. benchmark statistics: hand values, logistic recovery, rank invariance

def _monotone_transform(rng, x):
    knots = np.sort(rng.uniform(x.min() - 1.0, x.max() + 1.0, size=8))
    values = np.cumsum(rng.uniform(0.1, 2.0, size=8))
    return np.interp(x, knots, values) + 0.5 * (x - x.min())


def test_criterion_08_statistics():
    failures = []
    if abs(pearson([1, 2, 3], [1, 3, 2]) - 0.5) >= 1e-12:
        failures.append("pcc hand value")
    if abs(spearman([1, 2, 3], [1, 3, 2]) - 0.5) >= 1e-12:
        failures.append("srocc hand value")
    rmse, _, _ = error_stats([1.0, -1.0], [0.0, 0.0])
    if abs(rmse - 1.0) >= 1e-12:
        failures.append(f"rmse hand value {rmse}")
    _, ratio, fallback = error_stats([0.1, 0.1, 5.0], [0.0, 0.0, 0.0],
                                     mos_std=[1.0, 1.0, 1.0])
    if abs(ratio - 1.0 / 3.0) >= 1e-12 or fallback:
        failures.append(f"or hand value {ratio}")
    rmse, ratio, _ = error_stats([2.0, 3.0], [2.0, 3.0])
    if rmse != 0.0 or ratio != 0.0:
        failures.append("zero residuals")

    beta = np.array([0.05, 0.95, 2.2, 0.3])
    x = np.linspace(-1.5, 2.0, 200)
    fit = fit_logistic(x, logistic(x, beta))
    if np.max(np.abs(fit.beta - beta)) >= 1e-3:
        failures.append(f"logistic recovery {fit.beta}")

    rng = np.random.default_rng(31)
    x = rng.normal(size=60)
    y = rng.normal(size=60)
    base = spearman(x, y)
    for rep in range(10):
        transformed = _monotone_transform(rng, x)
        if abs(spearman(transformed, y) - base) >= 1e-12:
            failures.append(f"srocc transform {rep}")
    _verdict(8, "benchmark-statistics", failures)


# ---------------------------------------------------------------------------
# 9. split hygiene over randomized group_kfold draws

def test_criterion_09_split_hygiene():
    rng = np.random.default_rng(57)
    failures = []
    for draw in range(1000):
        n_groups = int(rng.integers(2, 31))
        groups = []
        for g in range(n_groups):
            groups.extend([f"g{g}"] * int(rng.integers(1, 6)))
        n_folds = int(rng.integers(2, n_groups + 1))
        folds = group_kfold(groups, n_folds, seed=draw)
        seen = []
        for train, test in folds:
            train_groups = {groups[i] for i in train}
            test_groups = {groups[i] for i in test}
            if train_groups & test_groups:
                failures.append(f"draw {draw}: group in both sides")
            seen.extend(test)
        if sorted(seen) != list(range(len(groups))):
            failures.append(f"draw {draw}: folds do not partition rows")
        if failures:
            break
    _verdict(9, "split-hygiene", failures, "1000 draws")


# ---------------------------------------------------------------------------
# 10. end-to-end determinism of two cold CLI runs

def _cli(*args):
    proc = subprocess.run([sys.executable, "-m", "pcqkit", *args],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def test_criterion_10_determinism(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    lines = ["group_id,ref_path,dist_path,mos,mos_std,codec,rate"]
    levels = ((0.4, 4.5), (0.9, 3.8), (1.8, 2.9), (3.6, 1.8))
    for g in range(5):
        ref = surface_cloud(450, seed=g)
        save_ply(ref, os.path.join(corpus, f"ref{g}.ply"))
        for lvl, (sigma, mos) in enumerate(levels):
            dist = jitter(ref, sigma, seed=500 + g * 10 + lvl,
                          color_sigma=5 * sigma)
            save_ply(dist, os.path.join(corpus, f"d{g}_{lvl}.ply"))
            lines.append(f"g{g},ref{g}.ply,d{g}_{lvl}.ply,"
                         f"{mos - 0.04 * g},0.3,noise,r{lvl}")
    manifest = corpus / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n")

    artifacts = []
    for run in ("a", "b"):
        out = tmp_path / run
        out.mkdir()
        _cli("extract", "--manifest", str(manifest),
             "--out", str(out / "features.csv"), "--jobs", "3")
        _cli("train", "--features", str(out / "features.csv"),
             "--model", "fsm", "--seed", "7",
             "--out", str(out / "model.json"))
        _cli("predict", "--model", str(out / "model.json"),
             "--features", str(out / "features.csv"),
             "--out", str(out / "scores.csv"))
        _cli("evaluate", "--scores", str(out / "scores.csv"),
             "--manifest", str(manifest), "--out", str(out / "report.json"))
        artifacts.append({name: (out / name).read_bytes()
                          for name in ("features.csv", "model.json",
                                       "scores.csv", "report.json")})

    failures = [name for name in artifacts[0]
                if artifacts[0][name] != artifacts[1][name]]
    _verdict(10, "cold-run-determinism", failures,
             "20-pair corpus, 4 artifacts")


# ---------------------------------------------------------------------------
# 11. fusion beats every single feature on synthetic MOS

def test_criterion_11_fusion_sanity():
    failures = []
    feature_names = make_model("fsm").feature_names
    informative = feature_names[:3]
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        X = rng.uniform(size=(140, len(feature_names)))
        mixture = 0.45 * X[:, 0] + 0.35 * X[:, 1] + 0.2 * X[:, 2]
        mos = 1.0 + 4.0 / (1.0 + np.exp(-6.0 * (mixture - mixture.mean())))
        mos += 0.08 * rng.normal(size=140)

        train, test = slice(0, 70), slice(70, 140)
        model = make_model("fsm")
        model.fit(X[train], mos[train])
        fused = model.predict(X[test])

        named = [("fused", fused)]
        named += [(name, X[test, i]) for i, name in enumerate(feature_names)]
        report = evaluate(named, mos[test])
        pcc = {m.name: abs(m.pcc) for m in report.metrics}
        if pcc["fused"] < 0.9:
            failures.append(f"seed {seed}: fused pcc {pcc['fused']:.3f}")
        for name in feature_names:
            if pcc[name] > pcc["fused"] + 0.02:
                failures.append(
                    f"seed {seed}: {name} pcc {pcc[name]:.3f} beats fused")
    _verdict(11, "fusion-sanity", failures,
             f"10 seeds, informative {informative}")


# ---------------------------------------------------------------------------
# 12. optional external dataset check (report, never assert)

def test_criterion_12_external_dataset():
    train_path = os.environ.get("PCQKIT_BASICS_TRAIN")
    val_path = os.environ.get("PCQKIT_BASICS_VAL")
    if not train_path or not val_path:
        print("ACCEPTANCE 12 external-dataset: SKIP "
              "(set PCQKIT_BASICS_TRAIN / PCQKIT_BASICS_VAL)")
        pytest.skip("external dataset not supplied")
    train = read_features_csv(train_path)
    val = read_features_csv(val_path)
    model = make_model("fsm")
    model.fit_table(train)
    report = evaluate([("fsm", model.predict_table(val))], val.mos(),
                      val.mos_std())
    row = report.metrics[0]
    inside = (abs(row.pcc - 0.944) <= 0.03 and abs(row.srocc - 0.854) <= 0.04)
    print(f"ACCEPTANCE 12 external-dataset: REPORT pcc={row.pcc:.3f} "
          f"(target 0.944 +/- 0.03) srocc={row.srocc:.3f} "
          f"(target 0.854 +/- 0.04) -> {'within' if inside else 'outside'} "
          "tolerance; informational only")

"""Feature scaling, regressors, feature selection and the fusion models.

The learnable pieces follow the familiar estimator protocol: construct
with hyperparameters, fit(X, y), predict(X), get_params/set_params.
Ridge regression is solved in closed form on centered data; the RBF
support vector regressor solves its dual by sequential pairwise (SMO)
updates with a maximal-violating-pair working set. Recursive feature
elimination ranks features with |coef| (ridge) or permutation importance
(SVR). Fusion models bundle a named feature subset, a min-max scaler and
a regressor, and serialize to JSON.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (MissingFeatureColumn, NonConvergence, SingularSystem,
                     TooFewGroups, UnknownFeatureName, UnknownModel)
from .validation import ParamMixin, check_matrix_2d, check_paired

__all__ = ["MinMaxScaler", "RidgeRegression", "RbfSvr", "rbf_kernel",
           "svr_dual_objective", "FeatureRanking", "rfe_rank", "group_kfold",
           "MODEL_REGISTRY", "FusionModel", "make_model"]


class MinMaxScaler(ParamMixin):
    """Per-feature min-max scaling to [0, 1] with clamping.

    Columns that are constant on the training data map to 0 and are
    recorded in constant_features_.
    """

    def fit(self, X):
        X = check_matrix_2d(X)
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        span = self.max_ - self.min_
        self.constant_features_ = [int(i) for i in np.where(span == 0.0)[0]]
        self.span_ = np.where(span == 0.0, 1.0, span)
        return self

    def transform(self, X):
        X = check_matrix_2d(X)
        if X.shape[1] != self.min_.shape[0]:
            raise ValueError(
                f"expected {self.min_.shape[0]} features, got {X.shape[1]}")
        scaled = (X - self.min_) / self.span_
        if self.constant_features_:
            scaled[:, self.constant_features_] = 0.0
        return np.clip(scaled, 0.0, 1.0)

    def fit_transform(self, X):
        return self.fit(X).transform(X)


class RidgeRegression(ParamMixin):
    """L2-regularized least squares, solved in closed form.

    Data is centered first, so the intercept is not penalized:
    coef = (Xc'Xc + alpha*I)^-1 Xc'yc, intercept = mean(y) - mean(X).coef
    """

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y):
        X, y = check_paired(X, y)
        x_mean = X.mean(axis=0)
        y_mean = y.mean()
        xc = X - x_mean
        yc = y - y_mean
        gram = xc.T @ xc
        if self.alpha == 0.0:
            if np.linalg.matrix_rank(gram) < gram.shape[0]:
                raise SingularSystem(
                    "alpha = 0 with rank-deficient features")
        else:
            gram = gram + self.alpha * np.eye(X.shape[1])
        self.coef_ = np.linalg.solve(gram, xc.T @ yc)
        self.intercept_ = float(y_mean - x_mean @ self.coef_)
        return self

    def predict(self, X):
        X = check_matrix_2d(X)
        return X @ self.coef_ + self.intercept_


def rbf_kernel(A, B, gamma: float):
    """exp(-gamma * ||a - b||^2) for every row pair."""
    a2 = np.einsum("ij,ij->i", A, A)
    b2 = np.einsum("ij,ij->i", B, B)
    d2 = a2[:, None] + b2[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


def svr_dual_objective(K, y, epsilon: float, beta):
    """Dual objective -1/2 b'Kb - eps*sum|b| + y'b (to be maximized)."""
    beta = np.asarray(beta, dtype=np.float64)
    return float(-0.5 * beta @ K @ beta - epsilon * np.abs(beta).sum()
                 + y @ beta)


class RbfSvr(ParamMixin):
    """Epsilon-insensitive support vector regression, RBF kernel.

    The dual QP over (alpha, alpha*) is solved by repeated analytic
    updates of the maximal violating pair until the KKT gap drops below
    tol. gamma="scale" mirrors the common 1 / (n_features * var(X))
    heuristic.
    """

    def __init__(self, C=1.0, epsilon=0.1, gamma="scale", tol=1e-3,
                 max_iter=200_000):
        self.C = C
        self.epsilon = epsilon
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def _resolve_gamma(self, X):
        if self.gamma == "scale":
            var = X.var()
            return 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        return float(self.gamma)

    def fit(self, X, y):
        X, y = check_paired(X, y)
        n = X.shape[0]
        gamma = self._resolve_gamma(X)
        K = rbf_kernel(X, X, gamma)
        C, eps = float(self.C), float(self.epsilon)

        # variables: z = (alpha_0..alpha_n-1, alphastar_0..alphastar_n-1)
        z = np.zeros(2 * n)
        d = np.concatenate([np.ones(n), -np.ones(n)])
        beta = np.zeros(n)
        f_raw = np.zeros(n)          # K @ beta, maintained incrementally
        gap = math.inf

        for it in range(int(self.max_iter)):
            g_a = f_raw + eps - y    # gradient, alpha block
            g_s = -f_raw + eps + y   # gradient, alphastar block
            grad = np.concatenate([g_a, g_s])
            score = -d * grad
            up = (z < C) & (d > 0) | (z > 0) & (d < 0)
            low = (z > 0) & (d > 0) | (z < C) & (d < 0)
            i = int(np.argmax(np.where(up, score, -np.inf)))
            j = int(np.argmin(np.where(low, score, np.inf)))
            gap = score[i] - score[j]
            if gap <= self.tol:
                break

            ii, jj = i % n, j % n
            # curvature along the direction (u_i, u_j) = (d_i, -d_j); the
            # block signs square away, leaving the plain kernel combination
            a = max(K[ii, ii] + K[jj, jj] - 2.0 * K[ii, jj], 1e-12)
            t = gap / a
            # clip the step to the box along the feasible direction
            t = min(t, C - z[i] if d[i] > 0 else z[i])
            t = min(t, z[j] if d[j] > 0 else C - z[j])
            z[i] += d[i] * t
            z[j] -= d[j] * t
            dbeta_i = d[i] * (d[i] * t)      # change of beta at ii
            dbeta_j = d[j] * (-d[j] * t)     # change of beta at jj
            beta[ii] += dbeta_i
            beta[jj] += dbeta_j
            f_raw += K[:, ii] * dbeta_i + K[:, jj] * dbeta_j
        else:
            raise NonConvergence(
                f"SMO did not reach tol={self.tol} within "
                f"{self.max_iter} iterations (gap {gap:.3e})")

        score = -d * np.concatenate([f_raw + eps - y, -f_raw + eps + y])
        up = (z < C) & (d > 0) | (z > 0) & (d < 0)
        low = (z > 0) & (d > 0) | (z < C) & (d < 0)
        m = np.max(np.where(up, score, -np.inf))
        big = np.min(np.where(low, score, np.inf))
        self.intercept_ = float((m + big) / 2.0)
        self.gap_ = float(m - big)
        self.n_iter_ = it + 1
        self.gamma_ = gamma
        sv = beta != 0.0
        self.support_ = np.where(sv)[0]
        self.support_vectors_ = X[sv]
        self.dual_coef_ = beta[sv]
        self._beta_full = beta
        return self

    def predict(self, X):
        X = check_matrix_2d(X)
        if len(self.support_vectors_) == 0:
            return np.full(X.shape[0], self.intercept_)
        K = rbf_kernel(X, self.support_vectors_, self.gamma_)
        return K @ self.dual_coef_ + self.intercept_


# ---------------------------------------------------------------------------
# recursive feature elimination

@dataclass(frozen=True)
class FeatureRanking:
    """Columns ordered most important first, with per-round importances."""

    order: list
    names: list
    rounds: list   # (surviving column tuple, importance array) per round


def _pearson(a, b):
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def _importances(estimator, X, y, seed, round_idx):
    if isinstance(estimator, RidgeRegression):
        return np.abs(estimator.coef_)
    pred = estimator.predict(X)
    base = _pearson(pred, y)
    scores = np.zeros(X.shape[1])
    for col in range(X.shape[1]):
        drop = 0.0
        for rep in range(10):
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, round_idx, col, rep]))
            shuffled = X.copy()
            shuffled[:, col] = shuffled[rng.permutation(X.shape[0]), col]
            drop += base - _pearson(estimator.predict(shuffled), y)
        scores[col] = drop / 10.0
    return scores


def rfe_rank(X, y, estimator: str = "ridge", step: int = 1, seed: int = 0,
             names=None, estimator_params: dict = None) -> FeatureRanking:
    """Rank features by recursive elimination of the least important.

    Each round fits on the survivors (min-max scaled) and removes the
    `step` weakest features; importance ties break toward the lower
    column index. The ranking is the reverse elimination order.
    """
    X, y = check_paired(X, y)
    if step < 1:
        raise ValueError("step must be >= 1")
    params = estimator_params or {}
    if estimator == "ridge":
        make = lambda: RidgeRegression(**({"alpha": 1.0} | params))
    elif estimator == "svr":
        make = lambda: RbfSvr(**params)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    p = X.shape[1]
    names = list(names) if names is not None else [f"x{i}" for i in range(p)]
    if len(names) != p:
        raise ValueError("names length does not match feature count")

    scaled = MinMaxScaler().fit_transform(X)
    survivors = list(range(p))
    eliminated = []
    rounds = []
    round_idx = 0
    while survivors:
        sub = scaled[:, survivors]
        model = make().fit(sub, y)
        imp = _importances(model, sub, y, seed, round_idx)
        rounds.append((tuple(survivors), imp))
        order = np.lexsort((np.arange(len(survivors)), imp))
        for pos in order[:min(step, len(survivors))]:
            eliminated.append(survivors[pos])
        survivors = [c for c in survivors if c not in eliminated]
        round_idx += 1
    ranking = list(reversed(eliminated))
    return FeatureRanking(ranking, [names[c] for c in ranking], rounds)


# ---------------------------------------------------------------------------
# group-aware cross-validation split

def group_kfold(groups, n_folds: int, seed: int = 0):
    """Split row indices into folds that never divide a group.

    Groups are shuffled deterministically and dealt into n_folds chunks
    whose group counts differ by at most one. Returns a list of
    (train_indices, test_indices) pairs.
    """
    groups = np.asarray(groups)
    unique = list(dict.fromkeys(groups.tolist()))
    if len(unique) < n_folds:
        raise TooFewGroups(
            f"{len(unique)} groups cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    shuffled = [unique[i] for i in rng.permutation(len(unique))]
    folds = []
    for chunk in np.array_split(np.arange(len(shuffled)), n_folds):
        test_groups = {shuffled[i] for i in chunk}
        mask = np.array([g in test_groups for g in groups.tolist()])
        folds.append((np.where(~mask)[0], np.where(mask)[0]))
    return folds


# ---------------------------------------------------------------------------
# fusion model registry (feature subsets found by RFE on the corpus)

MODEL_REGISTRY = {
    "model1": ("svr", ["pcqm_f2", "pcqm_f4", "pcqm_f5", "pcqm_f6",
                       "msgsim_mg_s0", "msgsim_ug_s0", "msgsim_cg_s0",
                       "psnr_d2"]),
    "model2": ("svr", ["pcqm_f2", "pcqm_f4", "pcqm_f5", "pcqm_f6", "pcqm_f7",
                       "msgsim_mg_s0", "msgsim_cg_s0", "psnr_d2",
                       "pointssim_geo", "pointssim_lum"]),
    "model3": ("svr", ["pcqm_f2", "pcqm_f4", "pcqm_f5", "pcqm_f7", "pcqm_f8",
                       "msgsim_mg_s0", "msgsim_ug_s0", "msgsim_cg_s0",
                       "msgsim_ug_s2", "msgsim_cg_s2", "psnr_d2", "psnr_v",
                       "pointssim_geo", "pointssim_lum"]),
    "model4": ("svr", ["pcqm_f2", "pcqm_f4", "pcqm_f5", "msgsim_mg_s0"]),
    "model5": ("ridge", ["pcqm_f2", "pcqm_f4", "pcqm_f5", "pcqm_f7",
                         "msgsim_mg_s0", "psnr_d2"]),
    "model6": ("ridge", ["pcqm_f2", "pcqm_f4", "pcqm_f5", "pcqm_f7",
                         "pcqm_f8", "msgsim_mg_s0", "msgsim_cg_s0",
                         "msgsim_mg_s2", "msgsim_cg_s2", "psnr_d2",
                         "pointssim_geo"]),
    "model7": ("ridge", ["pcqm_f1", "pcqm_f2", "pcqm_f4", "pcqm_f5",
                         "pcqm_f7", "pcqm_f8", "msgsim_mg_s0", "msgsim_cg_s0",
                         "msgsim_cg_s1", "msgsim_cg_s2", "psnr_d2", "psnr_y",
                         "psnr_u", "psnr_v", "pointssim_geo"]),
    "model8": ("ridge", ["pcqm_f2", "pcqm_f4", "pcqm_f5", "msgsim_mg_s0"]),
}
MODEL_ALIASES = {"fsm": "model5"}

_MODEL_SCHEMA = 1


class FusionModel:
    """A named feature subset + scaler + regressor, JSON-serializable."""

    def __init__(self, name, feature_names, regressor="ridge", params=None):
        self.name = name
        self.feature_names = list(feature_names)
        self.regressor = regressor
        self.params = dict(params or {})
        self.scaler = None
        self.estimator = None
        self.metadata = {}

    def _make_estimator(self):
        if self.regressor == "ridge":
            return RidgeRegression(**({"alpha": 1.0} | self.params))
        if self.regressor == "svr":
            return RbfSvr(**self.params)
        raise UnknownModel(f"unknown regressor kind {self.regressor!r}")

    def select(self, table):
        """Pull this model's feature columns out of a feature table."""
        missing = [f for f in self.feature_names
                   if f not in table.feature_names]
        if missing:
            raise MissingFeatureColumn(
                f"feature table lacks columns {missing}")
        cols = [table.feature_names.index(f) for f in self.feature_names]
        return table.values[:, cols]

    def fit(self, X, y, metadata=None):
        X, y = check_paired(X, y)
        if X.shape[1] != len(self.feature_names):
            raise MissingFeatureColumn(
                f"expected {len(self.feature_names)} feature columns, "
                f"got {X.shape[1]}")
        self.scaler = MinMaxScaler()
        self.estimator = self._make_estimator()
        self.estimator.fit(self.scaler.fit_transform(X), y)
        self.metadata = dict(metadata or {})
        self.metadata["n_rows"] = int(X.shape[0])
        return self

    def fit_table(self, table, metadata=None):
        meta = {"config_hash": table.config_hash} | dict(metadata or {})
        return self.fit(self.select(table), table.mos(), meta)

    def predict(self, X):
        return self.estimator.predict(self.scaler.transform(X))

    def predict_table(self, table):
        return self.predict(self.select(table))

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        state = {
            "schema_version": _MODEL_SCHEMA,
            "name": self.name,
            "features": self.feature_names,
            "regressor": self.regressor,
            "params": self.params,
            "metadata": self.metadata,
            "scaler": {"min": self.scaler.min_.tolist(),
                       "max": self.scaler.max_.tolist()},
        }
        if self.regressor == "ridge":
            state["coef"] = self.estimator.coef_.tolist()
            state["intercept"] = self.estimator.intercept_
        else:
            state["support_vectors"] = self.estimator.support_vectors_.tolist()
            state["dual_coef"] = self.estimator.dual_coef_.tolist()
            state["intercept"] = self.estimator.intercept_
            state["gamma"] = self.estimator.gamma_
        return state

    @classmethod
    def from_dict(cls, state):
        if state.get("schema_version") != _MODEL_SCHEMA:
            raise UnknownModel(
                f"unsupported model schema {state.get('schema_version')!r}")
        model = cls(state["name"], state["features"], state["regressor"],
                    state.get("params"))
        model.metadata = dict(state.get("metadata", {}))
        model.scaler = MinMaxScaler()
        model.scaler.min_ = np.asarray(state["scaler"]["min"], dtype=np.float64)
        model.scaler.max_ = np.asarray(state["scaler"]["max"], dtype=np.float64)
        span = model.scaler.max_ - model.scaler.min_
        model.scaler.constant_features_ = [
            int(i) for i in np.where(span == 0.0)[0]]
        model.scaler.span_ = np.where(span == 0.0, 1.0, span)
        model.estimator = model._make_estimator()
        if model.regressor == "ridge":
            model.estimator.coef_ = np.asarray(state["coef"], dtype=np.float64)
            model.estimator.intercept_ = float(state["intercept"])
        else:
            model.estimator.support_vectors_ = np.asarray(
                state["support_vectors"], dtype=np.float64)
            model.estimator.dual_coef_ = np.asarray(
                state["dual_coef"], dtype=np.float64)
            model.estimator.intercept_ = float(state["intercept"])
            model.estimator.gamma_ = float(state["gamma"])
        return model

    def save(self, path):
        with open(path, "w") as stream:
            json.dump(self.to_dict(), stream, indent=2, sort_keys=True)
            stream.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as stream:
            return cls.from_dict(json.load(stream))


def make_model(name: str, params: dict = None) -> FusionModel:
    """Instantiate a registry model (unfitted); "fsm" aliases model5."""
    key = MODEL_ALIASES.get(name, name)
    if key not in MODEL_REGISTRY:
        known = sorted(MODEL_REGISTRY) + sorted(MODEL_ALIASES)
        raise UnknownModel(f"unknown model {name!r}; known: {known}")
    kind, features = MODEL_REGISTRY[key]
    return FusionModel(key, features, kind, params)

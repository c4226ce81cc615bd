"""Two-phase training: pretext pretraining, then cluster optimisation.

Between phases the centroids are initialised from complete-linkage clusters
of the training latents; normalization statistics freeze when the first
phase ends. Both phases use Adam at a constant learning rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import clustering, dimred, losses, networks
from .clustering import ClusterAssignment, DivergenceSignal, Validity, validate
from .data import Dataset
from .errors import (
    CoincidentCentroids,
    NonFiniteAssignment,
    NonFiniteGradient,
    NonFiniteLoss,
    SingleCluster,
    TooFewPoints,
    UnsupportedArchitecture,
)

SUPPORTED_PRETEXT = {
    "FCNN": ("LR", "LLR", "LV"),
    "CNN": ("LR", "LLR", "LV"),
    "LSTM": ("LR", "LV"),
    "DTC": ("LR",),
}

METRIC_BY_CLUSTER_LOSS = {"DE": "euclid", "DC": "cid"}


@dataclass
class TrainConfig:
    eta_pre: float = 1e-2
    eta_cls: float = 1e-3
    pre_iters: int = 1000
    cls_iters: int = 1000
    batch_size: int = 64
    k: int = 3
    target_refresh: int = 100
    seed: int = 0
    latent_dim: int = 16
    dimred_dim: int = 2
    umap_neighbors: int = 15
    umap_epochs: int = 200
    sc_metric: str = "euclid"

    def __post_init__(self) -> None:
        for name in ("eta_pre", "eta_cls", "pre_iters", "cls_iters",
                     "batch_size", "k", "target_refresh"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def with_k(self, k: int) -> "TrainConfig":
        return replace(self, k=k)


@dataclass
class FittedPipeline:
    combo: object
    autoencoder: networks.Autoencoder | None
    layer: losses.ClusteringLayer | None
    projection: dimred.Projection | None
    pre_curve: list[float]
    cls_curve: list[float]
    verdict: Validity


@dataclass
class TrainOutcome:
    pipeline: FittedPipeline
    assignment: ClusterAssignment | None
    sc: float | None
    dbi: float | None
    sc_raw: float | None = None
    dbi_raw: float | None = None


def lr_heuristic(eta_pre: float) -> float:
    """Cluster-phase learning rate: one order of magnitude below pretraining."""
    if eta_pre <= 0:
        raise ValueError("eta_pre must be positive")
    return eta_pre / 10.0


class Adam:
    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads * grads
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return params - lr * mhat / (np.sqrt(vhat) + self.eps)


class _Batches:
    """Seeded epoch-shuffled mini-batch index stream."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._queue: list[np.ndarray] = []

    def next(self) -> np.ndarray:
        if not self._queue:
            perm = self.rng.permutation(self.n)
            stop = (self.n // self.batch_size) * self.batch_size
            self._queue = [
                perm[i:i + self.batch_size] for i in range(0, max(stop, 1), self.batch_size)
            ]
        return self._queue.pop(0)


def _elbo_seed(base: int, it: int) -> int:
    return (base * 1_000_003 + it) & 0x7FFFFFFF


def _make_pretext_objective(pretext: str, batch: np.ndarray, seed: int, it: int):
    if pretext == "LR":
        return losses.ReconstructionObjective(batch)
    if pretext == "LLR":
        return losses.LayerwiseObjective(batch)
    if pretext == "LV":
        return losses.ElboObjective(batch, _elbo_seed(seed, it))
    raise ValueError(f"unknown pretext {pretext!r}")


def pretrain(ae: networks.Autoencoder, train_x: np.ndarray, cfg: TrainConfig,
             pretext: str) -> list[float]:
    """Adam pretraining on shuffled mini-batches; NONE skips entirely."""
    if pretext == "NONE":
        return []
    if pretext not in SUPPORTED_PRETEXT[ae.arch_tag]:
        raise UnsupportedArchitecture(
            f"{ae.arch_tag} does not support the {pretext} pretext loss"
        )
    batches = _Batches(train_x.shape[0], cfg.batch_size,
                       np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])))
    adam = Adam(ae.n_params)
    curve: list[float] = []
    for it in range(cfg.pre_iters):
        batch = train_x[batches.next()]
        obj = _make_pretext_objective(pretext, batch, cfg.seed, it)
        ae.zero_grads()
        loss = obj.backprop(ae)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"pretraining iteration {it}")
        grads = ae.get_grads()
        ae.set_params(adam.step(ae.get_params(), grads, cfg.eta_pre))
        curve.append(float(loss))
    return curve


def init_clustering_layer(ae: networks.Autoencoder, train_x: np.ndarray,
                          k: int, metric: str) -> losses.ClusteringLayer:
    z = ae.encode(train_x)
    if not np.all(np.isfinite(z)):
        raise NonFiniteLoss("latents diverged before centroid initialisation")
    centroids = clustering.init_centroids(z, k)
    flat = centroids.reshape(k, -1)
    for i in range(k):
        for j in range(i + 1, k):
            if np.linalg.norm(flat[i] - flat[j]) < 1e-12:
                raise CoincidentCentroids(f"initial centroids {i} and {j}")
    return losses.ClusteringLayer(centroids=centroids, metric=metric)


def cluster_optimize(ae: networks.Autoencoder, train_x: np.ndarray, cfg: TrainConfig,
                     metric: str, layer: losses.ClusteringLayer | None = None
                     ) -> tuple[losses.ClusteringLayer, list[float], Validity]:
    """Joint optimisation of reconstruction + assignment KL over encoder,
    decoder and centroids; the target distribution refreshes periodically
    from the full training set.

    A pre-initialised ``layer`` skips centroid initialisation (frozen-state
    experiments restart from a snapshot).
    """
    ae.freeze_normalization()
    if layer is None:
        layer = init_clustering_layer(ae, train_x, cfg.k, metric)
    n_ae = ae.n_params
    adam = Adam(n_ae + layer.centroids.size)
    batches = _Batches(train_x.shape[0], cfg.batch_size,
                       np.random.default_rng(np.random.SeedSequence([cfg.seed, 3])))
    curve: list[float] = []
    p_full: np.ndarray | None = None
    for it in range(cfg.cls_iters):
        if it % cfg.target_refresh == 0:
            z_full = ae.encode(train_x)
            if not np.all(np.isfinite(z_full)):
                raise NonFiniteLoss(f"cluster iteration {it}")
            p_full = losses.target_distribution(losses.soft_assign(layer, z_full)).p
        idx = batches.next()
        obj = losses.ClusterLossObjective(train_x[idx], layer, p_full[idx])
        ae.zero_grads()
        loss = obj.backprop(ae)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"cluster iteration {it}")
        grads = np.concatenate([ae.get_grads(), obj.centroid_grads.ravel()])
        if not np.all(np.isfinite(grads)):
            raise NonFiniteGradient(f"cluster iteration {it}")
        vec = adam.step(
            np.concatenate([ae.get_params(), layer.centroids.ravel()]), grads, cfg.eta_cls
        )
        ae.set_params(vec[:n_ae])
        layer.centroids[...] = vec[n_ae:].reshape(layer.centroids.shape)
        curve.append(float(loss))
    z_final = ae.encode(train_x)
    if not np.all(np.isfinite(z_final)):
        raise NonFiniteLoss("final latents diverged")
    assignment = clustering.hard_assign(losses.soft_assign(layer, z_final))
    return layer, curve, validate(assignment, train_x.shape[0])


def _fit_projection(kind: str, points: np.ndarray, cfg: TrainConfig) -> dimred.Projection:
    if kind == "PCA":
        out_dim = min(cfg.dimred_dim, points.shape[1], points.shape[0])
        return dimred.pca_fit(points, out_dim)
    if kind == "UMAP":
        return dimred.umap_fit(points, out_dim=cfg.dimred_dim,
                               n_neighbors=cfg.umap_neighbors,
                               epochs=cfg.umap_epochs, seed=cfg.seed)
    return dimred.identity_projection(points.shape[1])


def _metrics(points: np.ndarray, assignment: ClusterAssignment,
             sc_metric: str) -> tuple[float | None, float | None]:
    try:
        sc = clustering.silhouette(points, assignment, metric=sc_metric)
        dbi = clustering.davies_bouldin(points, assignment)
    except SingleCluster:
        return None, None
    return sc, dbi


_DIVERGENCE_ERRORS = (NonFiniteLoss, NonFiniteGradient, NonFiniteAssignment)


def train_combination(combo, train_ds: Dataset, test_ds: Dataset,
                      cfg: TrainConfig, raw_space_metrics: bool = False) -> TrainOutcome:
    """Train one component combination and evaluate it on the test split.

    Failures never propagate: divergence and degenerate clusterings yield an
    outcome with the matching verdict and missing scores.
    """
    x_train = train_ds.series
    x_test = test_ds.series
    variational = combo.pretext == "LV"
    pipeline = FittedPipeline(combo, None, None, None, [], [], Validity.DIVERGED)
    try:
        ae = networks.build_autoencoder(
            combo.arch, x_train.shape[1], cfg.latent_dim, cfg.seed,
            variational=variational,
        )
        pipeline.autoencoder = ae
        pipeline.pre_curve = pretrain(ae, x_train, cfg, combo.pretext)
    except _DIVERGENCE_ERRORS:
        return TrainOutcome(pipeline, None, None, None)

    assignment: ClusterAssignment | None = None
    points: np.ndarray | None = None
    if combo.cluster_loss != "NONE":
        metric = METRIC_BY_CLUSTER_LOSS[combo.cluster_loss]
        try:
            layer, cls_curve, train_verdict = cluster_optimize(ae, x_train, cfg, metric)
        except CoincidentCentroids:
            pipeline.verdict = Validity.DEGENERATE
            return TrainOutcome(pipeline, None, None, None)
        except _DIVERGENCE_ERRORS:
            pipeline.verdict = Validity.DIVERGED
            return TrainOutcome(pipeline, None, None, None)
        pipeline.layer = layer
        pipeline.cls_curve = cls_curve
        z_test = ae.encode(x_test)
        if not np.all(np.isfinite(z_test)):
            pipeline.verdict = Validity.DIVERGED
            return TrainOutcome(pipeline, None, None, None)
        try:
            assignment = clustering.hard_assign(losses.soft_assign(layer, z_test))
        except NonFiniteAssignment:
            pipeline.verdict = Validity.DIVERGED
            return TrainOutcome(pipeline, None, None, None)
        test_verdict = validate(assignment, x_test.shape[0])
        pipeline.verdict = _worst(train_verdict, test_verdict)
        points = z_test.reshape(z_test.shape[0], -1)
        if cfg.sc_metric == "cid":
            points = z_test
    else:
        z_train = ae.encode(x_train)
        z_test = ae.encode(x_test)
        if not (np.all(np.isfinite(z_train)) and np.all(np.isfinite(z_test))):
            pipeline.verdict = Validity.DIVERGED
            return TrainOutcome(pipeline, None, None, None)
        flat_train = z_train.reshape(z_train.shape[0], -1)
        flat_test = z_test.reshape(z_test.shape[0], -1)
        try:
            projection = _fit_projection(combo.dimred, flat_train, cfg)
            points = projection.transform(flat_test)
            pipeline.projection = projection
            assignment, _ = clustering.kmeans(points, cfg.k, seed=cfg.seed)
        except (TooFewPoints, ValueError) as exc:
            pipeline.verdict = validate(DivergenceSignal(str(exc)), x_test.shape[0])
            return TrainOutcome(pipeline, None, None, None)
        pipeline.verdict = validate(assignment, x_test.shape[0])

    sc = dbi = sc_raw = dbi_raw = None
    if pipeline.verdict is Validity.VALID:
        sc, dbi = _metrics(points, assignment, cfg.sc_metric)
        if raw_space_metrics:
            sc_raw, dbi_raw = _metrics(x_test, assignment, "euclid")
        if sc is None:
            pipeline.verdict = Validity.DEGENERATE
    return TrainOutcome(pipeline, assignment, sc, dbi, sc_raw, dbi_raw)


def _worst(a: Validity, b: Validity) -> Validity:
    order = {Validity.VALID: 0, Validity.DEGENERATE: 1, Validity.DIVERGED: 2}
    return a if order[a] >= order[b] else b

"""Pretext losses, the clustering loss with its distributions, and latent metrics.

The objective classes at the bottom bind a loss to an autoencoder forward
pass and drive the backward sweep; the plain functions are the pure
definitions used for evaluation and testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateColumn,
    NonFiniteAssignment,
    ShapeMismatch,
    UnsupportedArchitecture,
)

_CE_EPS = 1e-12
_DIST_EPS = 1e-12


# --- pure loss definitions ----------------------------------------------------

def recon_loss(x: np.ndarray, xr: np.ndarray) -> float:
    """Mean over samples of the squared reconstruction error (no per-length averaging)."""
    x = np.asarray(x, dtype=np.float64)
    xr = np.asarray(xr, dtype=np.float64)
    if x.shape != xr.shape:
        raise ShapeMismatch(f"{x.shape} vs {xr.shape}")
    diff = x - xr
    return float(np.sum(diff * diff) / x.shape[0])


def layerwise_recon_loss(lo) -> float:
    """Depth-summed reconstruction error, each pair normalized by its element count."""
    total = 0.0
    for z, zr in lo.pairs:
        if z.shape != zr.shape:
            raise ShapeMismatch(f"{z.shape} vs {zr.shape}")
        n = z.shape[0]
        size = int(np.prod(z.shape[1:]))
        diff = z - zr
        total += float(np.sum(diff * diff) / (n * size))
    return total


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mu, sigma^2) || N(0, I)) summed over samples and dimensions."""
    return float(0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar))


def elbo_loss(ae, x: np.ndarray, seed: int) -> float:
    """Negated single-sample ELBO estimate (to minimize), summed over the batch."""
    return ElboObjective(x, seed).value(ae)


def kl_divergence(q: np.ndarray, p: np.ndarray) -> float:
    """sum_i sum_j p_ij ln(p_ij / q_ij), with 0 ln 0 := 0."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ShapeMismatch(f"{q.shape} vs {p.shape}")
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def clustering_loss(x: np.ndarray, xr: np.ndarray, q: np.ndarray, p: np.ndarray) -> float:
    """Second-phase objective: reconstruction plus target-assignment divergence."""
    return recon_loss(x, xr) + kl_divergence(q, p)


# --- latent metrics -----------------------------------------------------------

def euclid(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()))


def complexity(a: np.ndarray) -> float:
    """Root sum of squared consecutive differences along the leading axis."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] < 2:
        raise ShapeMismatch("complexity needs length >= 2")
    d = np.diff(a, axis=0)
    return float(np.sqrt(np.sum(d * d)))


def cid(a: np.ndarray, b: np.ndarray) -> float:
    """Complexity-invariant distance; vector latents are scalar sequences.

    The complexity ratio is clamped below by 1e-12; two flat series compare
    with factor 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    ed = euclid(a, b)
    ca = complexity(a)
    cb = complexity(b)
    if ca < _CE_EPS and cb < _CE_EPS:
        return ed
    hi = max(ca, cb)
    lo = max(min(ca, cb), _CE_EPS)
    return ed * hi / lo


# --- assignments --------------------------------------------------------------

@dataclass
class AssignmentMatrix:
    q: np.ndarray
    p: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=np.float64)
        _check_stochastic(self.q, "q")
        if self.p is not None:
            self.p = np.asarray(self.p, dtype=np.float64)
            _check_stochastic(self.p, "p")

    @property
    def k(self) -> int:
        return self.q.shape[1]


def _check_stochastic(m: np.ndarray, name: str) -> None:
    if m.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D")
    if not np.all(np.isfinite(m)):
        raise NonFiniteAssignment(name)
    if np.any(m < 0) or np.any(m > 1 + 1e-9):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    if np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError(f"{name} rows must sum to 1")


@dataclass
class ClusteringLayer:
    """Learnable centroids with a latent metric and Student-t degrees of freedom."""

    centroids: np.ndarray
    metric: str = "euclid"
    alpha: float = 1.0

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.shape[0] < 2:
            raise ValueError("need at least 2 centroids")
        if self.metric not in ("euclid", "cid"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids must be finite")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _as_sequences(z: np.ndarray) -> np.ndarray:
    """(N, d) vectors become (N, d, 1) scalar sequences; series pass through."""
    if z.ndim == 2:
        return z[:, :, None]
    return z


def latent_distances(z: np.ndarray, centroids: np.ndarray, metric: str) -> np.ndarray:
    """(N, k) matrix of latent-to-centroid distances."""
    z = np.asarray(z, dtype=np.float64)
    zf = z.reshape(z.shape[0], -1)
    wf = centroids.reshape(centroids.shape[0], -1)
    if zf.shape[1] != wf.shape[1]:
        raise ShapeMismatch("latent and centroid sizes differ")
    diff = zf[:, None, :] - wf[None, :, :]
    ed = np.sqrt(np.sum(diff * diff, axis=2))
    if metric == "euclid":
        return ed
    zs = _as_sequences(z)
    ws = _as_sequences(centroids)
    ce_z = np.sqrt(np.sum(np.diff(zs, axis=1) ** 2, axis=(1, 2)))
    ce_w = np.sqrt(np.sum(np.diff(ws, axis=1) ** 2, axis=(1, 2)))
    hi = np.maximum(ce_z[:, None], ce_w[None, :])
    lo = np.maximum(np.minimum(ce_z[:, None], ce_w[None, :]), _CE_EPS)
    factor = np.where(hi < _CE_EPS, 1.0, hi / lo)
    return ed * factor


def soft_assign(layer: ClusteringLayer, z: np.ndarray) -> AssignmentMatrix:
    """Student-t kernel assignments q_ij over the layer's centroids.

    The kernel exponent is -(alpha + 1)/2, the established form in the
    DEC/DTC line (the degenerate typeset variant is not used).
    """
    d = latent_distances(z, layer.centroids, layer.metric)
    s = (1.0 + d / layer.alpha) ** (-(layer.alpha + 1.0) / 2.0)
    total = s.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(s)) or np.any(total <= 0):
        raise NonFiniteAssignment("soft assignment diverged")
    q = s / total
    return AssignmentMatrix(q=q)


def target_distribution(assign: AssignmentMatrix) -> AssignmentMatrix:
    """Sharpened, frequency-normalized target p from q."""
    q = assign.q
    f = q.sum(axis=0)
    if np.any(f <= 0):
        raise DegenerateColumn("empty soft cluster")
    w = (q * q) / f[None, :]
    p = w / w.sum(axis=1, keepdims=True)
    return AssignmentMatrix(q=q, p=p)


# --- clustering-loss gradients --------------------------------------------------

def _kl_dist_coefficients(q: np.ndarray, p: np.ndarray, d: np.ndarray, alpha: float) -> np.ndarray:
    """d KL(P||Q) / d d_ij for the Student-t kernel, with P held constant."""
    return ((alpha + 1.0) / 2.0) * (p - q) / (alpha + d)


def _euclid_pair_grads(z: np.ndarray, centroids: np.ndarray, coef: np.ndarray,
                       d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = z.shape[0]
    k = centroids.shape[0]
    zf = z.reshape(n, -1)
    wf = centroids.reshape(k, -1)
    diff = zf[:, None, :] - wf[None, :, :]  # (N, k, F)
    safe = np.where(d < _DIST_EPS, 1.0, d)
    unit = diff / safe[:, :, None]
    unit[d < _DIST_EPS] = 0.0
    dz = np.einsum("nk,nkf->nf", coef, unit).reshape(z.shape)
    dw = -np.einsum("nk,nkf->kf", coef, unit).reshape(centroids.shape)
    return dz, dw


def _ce_grad(seq: np.ndarray, ce: np.ndarray) -> np.ndarray:
    """Gradient of the complexity estimate w.r.t. the sequence, batched."""
    u = np.diff(seq, axis=1)
    g = np.zeros_like(seq)
    g[:, :-1, :] -= u
    g[:, 1:, :] += u
    safe = np.where(ce < _CE_EPS, 1.0, ce)
    g = g / safe[:, None, None]
    g[ce < _CE_EPS] = 0.0
    return g


def _cid_pair_grads(z: np.ndarray, centroids: np.ndarray, coef: np.ndarray,
                    d_ed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of sum coef_ij * CID(z_i, w_j) w.r.t. z and centroids."""
    zs = _as_sequences(z)
    ws = _as_sequences(centroids)
    n, k = coef.shape
    ce_z = np.sqrt(np.sum(np.diff(zs, axis=1) ** 2, axis=(1, 2)))  # (N,)
    ce_w = np.sqrt(np.sum(np.diff(ws, axis=1) ** 2, axis=(1, 2)))  # (k,)
    gce_z = _ce_grad(zs, ce_z)  # (N, T, C)
    gce_w = _ce_grad(ws, ce_w)  # (k, T, C)

    hi = np.maximum(ce_z[:, None], ce_w[None, :])
    lo_raw = np.minimum(ce_z[:, None], ce_w[None, :])
    lo = np.maximum(lo_raw, _CE_EPS)
    both_flat = hi < _CE_EPS
    factor = np.where(both_flat, 1.0, hi / lo)

    # dF/d ce_z and dF/d ce_w, honouring the branch and the clamp at eps.
    z_is_hi = ce_z[:, None] >= ce_w[None, :]
    lo_active = lo_raw >= _CE_EPS
    df_dcez = np.where(z_is_hi, 1.0 / lo, np.where(lo_active, -hi / lo ** 2, 0.0))
    df_dcew = np.where(~z_is_hi, 1.0 / lo, np.where(lo_active, -hi / lo ** 2, 0.0))
    df_dcez = np.where(both_flat, 0.0, df_dcez)
    df_dcew = np.where(both_flat, 0.0, df_dcew)

    safe_ed = np.where(d_ed < _DIST_EPS, 1.0, d_ed)
    zf = zs.reshape(n, -1)
    wf = ws.reshape(k, -1)
    diff = zf[:, None, :] - wf[None, :, :]
    unit = diff / safe_ed[:, :, None]
    unit[d_ed < _DIST_EPS] = 0.0

    # CID = ED * F: chain through both factors.
    a_ed = coef * factor  # weight on the ED gradient
    a_fz = coef * d_ed * df_dcez  # weight on the CE(z) gradient
    a_fw = coef * d_ed * df_dcew
    dz = np.einsum("nk,nkf->nf", a_ed, unit).reshape(zs.shape) \
        + a_fz.sum(axis=1)[:, None, None] * gce_z
    dw = -np.einsum("nk,nkf->kf", a_ed, unit).reshape(ws.shape) \
        + a_fw.sum(axis=0)[:, None, None] * gce_w
    return dz.reshape(z.shape), dw.reshape(centroids.shape)


def clustering_kl_grads(z: np.ndarray, layer: ClusteringLayer, p: np.ndarray
                        ) -> tuple[float, np.ndarray, np.ndarray]:
    """Value and gradients of KL(P||Q) w.r.t. latents and centroids, P fixed."""
    d = latent_distances(z, layer.centroids, layer.metric)
    s = (1.0 + d / layer.alpha) ** (-(layer.alpha + 1.0) / 2.0)
    total = s.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(s)) or np.any(total <= 0):
        raise NonFiniteAssignment("soft assignment diverged")
    q = s / total
    value = kl_divergence(q, p)
    coef = _kl_dist_coefficients(q, p, d, layer.alpha)
    if layer.metric == "euclid":
        dz, dw = _euclid_pair_grads(z, layer.centroids, coef, d)
    else:
        zf = z.reshape(z.shape[0], -1)
        wf = layer.centroids.reshape(layer.k, -1)
        diff = zf[:, None, :] - wf[None, :, :]
        ed = np.sqrt(np.sum(diff * diff, axis=2))
        dz, dw = _cid_pair_grads(z, layer.centroids, coef, ed)
    return value, dz, dw


# --- objectives binding losses to an autoencoder --------------------------------

def _latent_from_embedding(ae, emb: np.ndarray) -> np.ndarray:
    if ae.variational:
        return emb[:, :ae.latent.dim]
    return emb


def _embedding_grad(ae, dz: np.ndarray) -> np.ndarray:
    if ae.variational:
        pad = np.zeros_like(dz)
        return np.concatenate([dz, pad], axis=1)
    return dz


class ReconstructionObjective:
    """Classical reconstruction loss bound to a forward/backward sweep."""

    def __init__(self, x: np.ndarray, train: bool = True):
        self.x = np.asarray(x, dtype=np.float64)
        self.train = train

    def _forward(self, ae):
        emb = ae.encode_stages(self.x, self.train)[-1]
        z = _latent_from_embedding(ae, emb)
        xr = ae.decode_stages(z, self.train)[-1]
        return z, xr

    def value(self, ae) -> float:
        _, xr = self._forward(ae)
        return recon_loss(self.x, xr)

    def backprop(self, ae) -> float:
        _, xr = self._forward(ae)
        n = self.x.shape[0]
        dxr = 2.0 * (xr - self.x) / n
        dz = ae.backward_decoder(dxr)
        ae.backward_encoder(_embedding_grad(ae, dz))
        return recon_loss(self.x, xr)


class LayerwiseObjective:
    """Depth-summed reconstruction loss with mirror pairing."""

    def __init__(self, x: np.ndarray, train: bool = True):
        self.x = np.asarray(x, dtype=np.float64)
        self.train = train

    def value(self, ae) -> float:
        return layerwise_recon_loss(ae.forward_layerwise(self.x, self.train))

    def backprop(self, ae) -> float:
        lo = ae.forward_layerwise(self.x, self.train)
        n = self.x.shape[0]
        L = len(lo.pairs)
        enc_grads: list[np.ndarray | None] = [None] * len(ae.enc_stages)
        dec_grads: list[np.ndarray | None] = [None] * len(ae.dec_stages)
        dz_extra = np.zeros_like(lo.pairs[-1][0])
        for l in range(L - 1):
            z, zr = lo.pairs[l]
            size = int(np.prod(z.shape[1:]))
            g = 2.0 * (z - zr) / (n * size)
            enc_grads[l] = g
            dec_grads[L - 2 - l] = -g
        d_out = np.zeros_like(self.x)
        dz = ae.backward_decoder(d_out, dec_grads)
        ae.backward_encoder(_embedding_grad(ae, dz + dz_extra), enc_grads)
        return layerwise_recon_loss(lo)


class ElboObjective:
    """Negated ELBO with one reparameterized draw and analytic Gaussian KL."""

    def __init__(self, x: np.ndarray, seed: int, train: bool = True):
        self.x = np.asarray(x, dtype=np.float64)
        self.seed = seed
        self.train = train
        self._eps: np.ndarray | None = None

    def _noise(self, shape) -> np.ndarray:
        if self._eps is None or self._eps.shape != shape:
            self._eps = np.random.default_rng(self.seed).standard_normal(shape)
        return self._eps

    def _forward(self, ae):
        if not ae.variational:
            raise UnsupportedArchitecture(
                "ELBO needs a Gaussian latent head; series latents are unsupported"
            )
        emb = ae.encode_stages(self.x, self.train)[-1]
        d = ae.latent.dim
        mu, logvar = emb[:, :d], emb[:, d:]
        eps = self._noise(mu.shape)
        sigma = np.exp(0.5 * logvar)
        zs = mu + sigma * eps
        xr = ae.decode_stages(zs, self.train)[-1]
        return mu, logvar, sigma, eps, zs, xr

    def _loss(self, mu, logvar, xr) -> float:
        diff = self.x - xr
        return float(np.sum(diff * diff)) + gaussian_kl(mu, logvar)

    def value(self, ae) -> float:
        mu, logvar, _, _, _, xr = self._forward(ae)
        return self._loss(mu, logvar, xr)

    def backprop(self, ae) -> float:
        mu, logvar, sigma, eps, _, xr = self._forward(ae)
        dxr = 2.0 * (xr - self.x)
        dzs = ae.backward_decoder(dxr)
        dmu = dzs + mu
        dlogvar = dzs * 0.5 * sigma * eps + 0.5 * (sigma * sigma - 1.0)
        ae.backward_encoder(np.concatenate([dmu, dlogvar], axis=1))
        return self._loss(mu, logvar, xr)


class ClusterLossObjective:
    """Second-phase loss: reconstruction plus KL to a fixed target distribution.

    After ``backprop`` the centroid gradient is available as
    ``centroid_grads``.
    """

    def __init__(self, x: np.ndarray, layer: ClusteringLayer, p: np.ndarray,
                 train: bool = True):
        self.x = np.asarray(x, dtype=np.float64)
        self.layer = layer
        self.p = np.asarray(p, dtype=np.float64)
        self.train = train
        self.centroid_grads: np.ndarray | None = None

    def _forward(self, ae):
        emb = ae.encode_stages(self.x, self.train)[-1]
        z = _latent_from_embedding(ae, emb)
        xr = ae.decode_stages(z, self.train)[-1]
        return z, xr

    def value(self, ae) -> float:
        z, xr = self._forward(ae)
        q = soft_assign(self.layer, z).q
        return clustering_loss(self.x, xr, q, self.p)

    def backprop(self, ae) -> float:
        z, xr = self._forward(ae)
        kl_value, dz_kl, dw = clustering_kl_grads(z, self.layer, self.p)
        n = self.x.shape[0]
        dxr = 2.0 * (xr - self.x) / n
        dz = ae.backward_decoder(dxr) + dz_kl
        ae.backward_encoder(_embedding_grad(ae, dz))
        self.centroid_grads = dw
        return recon_loss(self.x, xr) + kl_value

"""The four autoencoder architectures with forward, layerwise and gradient APIs.

Encoder/decoder are stage lists; a stage is one unit of the layerwise
pairing (dense block, residual block, recurrent layer or embedding head).

Layouts
-------
FCNN  encoder dense 500 -> 500 -> 2000 -> d (ReLU between, linear embedding),
      decoder mirrored d -> 2000 -> 500 -> 500 -> T.
CNN   encoder: residual blocks 1->32, 32->64, 64->64 (kernel 3), global
      average pool, dense 64 -> d; decoder: dense d -> 64*T grid, blocks
      64->64, 64->32, 32->1 (last one linear).
LSTM  encoder: two bidirectional layers (hidden 64 per direction), final
      hidden states concatenated and projected 128 -> d; decoder repeats the
      latent T times through two bidirectional layers and a per-step dense.
DTC   encoder: conv kernel 7 (32 channels), max-pool 10, two bidirectional
      layers (hidden 50); the latent is the full hidden sequence
      (T/10, 100). Decoder: upsample x10, conv to one channel.

A variational head doubles the embedding width to (mu, log sigma^2);
``encode`` returns the mean path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import (
    IncompatibleLength,
    NonFiniteGradient,
    ShapeMismatch,
    UnsupportedArchitecture,
)

ARCH_TAGS = ("FCNN", "CNN", "LSTM", "DTC")

FCNN_WIDTHS = (500, 500, 2000)
CNN_CHANNELS = (32, 64, 64)
CNN_KERNEL = 3
LSTM_HIDDEN = 64
DTC_CONV_CHANNELS = 32
DTC_CONV_KERNEL = 7
DTC_POOL = 10
DTC_HIDDEN = 50


@dataclass(frozen=True)
class LatentSpec:
    kind: str  # "vector" | "series" | "gaussian"
    dim: int
    steps: int | None = None  # series latents only

    @property
    def size(self) -> int:
        return self.dim * (self.steps or 1)


@dataclass
class LayerwiseOutputs:
    """Mirror-paired encoder/decoder activations; the embedding pair is last."""

    pairs: list[tuple[np.ndarray, np.ndarray]]

    @property
    def depth(self) -> int:
        return len(self.pairs)


class Autoencoder:
    def __init__(self, arch_tag: str, input_len: int, latent: LatentSpec,
                 enc_stages: list[nn.Layer], dec_stages: list[nn.Layer], seed: int,
                 variational: bool = False):
        self.arch_tag = arch_tag
        self.input_len = input_len
        self.latent = latent
        self.enc_stages = enc_stages
        self.dec_stages = dec_stages
        self.seed = seed
        self.variational = variational
        self._params = nn.collect_params(enc_stages) + nn.collect_params(dec_stages)
        self._grads = nn.collect_grads(enc_stages) + nn.collect_grads(dec_stages)
        self._buffers = nn.collect_buffers(enc_stages) + nn.collect_buffers(dec_stages)

    # --- parameter vector view ------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self._params)

    def get_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self._params])

    def set_params(self, vec: np.ndarray) -> None:
        if vec.shape != (self.n_params,):
            raise ShapeMismatch(f"expected parameter vector of length {self.n_params}")
        offset = 0
        for p in self._params:
            np.copyto(p, vec[offset:offset + p.size].reshape(p.shape))
            offset += p.size

    def get_grads(self) -> np.ndarray:
        vec = np.concatenate([g.ravel() for g in self._grads])
        if not np.all(np.isfinite(vec)):
            raise NonFiniteGradient(self.arch_tag)
        return vec

    def zero_grads(self) -> None:
        for g in self._grads:
            g[...] = 0.0

    def get_buffers(self) -> np.ndarray:
        if not self._buffers:
            return np.zeros(0)
        return np.concatenate([b.ravel() for b in self._buffers])

    def set_buffers(self, vec: np.ndarray) -> None:
        offset = 0
        for b in self._buffers:
            np.copyto(b, vec[offset:offset + b.size].reshape(b.shape))
            offset += b.size

    def freeze_normalization(self) -> None:
        """Pin normalization layers to their running statistics."""
        for stage in self.enc_stages + self.dec_stages:
            for layer in _walk(stage):
                if isinstance(layer, nn.BatchNorm1d):
                    layer.frozen = True

    # --- forward / backward ----------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_len:
            raise ShapeMismatch(
                f"expected (N, {self.input_len}) input, got {x.shape}"
            )
        return x

    def encode_stages(self, x: np.ndarray, train: bool = False) -> list[np.ndarray]:
        """Run the encoder, returning every stage output (last = embedding)."""
        x = self._check_input(x)
        outs = []
        for stage in self.enc_stages:
            x = stage.forward(x, train)
            outs.append(x)
        return outs

    def decode_stages(self, z: np.ndarray, train: bool = False) -> list[np.ndarray]:
        outs = []
        x = z
        for stage in self.dec_stages:
            x = stage.forward(x, train)
            outs.append(x)
        return outs

    def encode(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Latent representation; the Gaussian head returns its mean path."""
        emb = self.encode_stages(x, train)[-1]
        if self.variational:
            return emb[:, :self.latent.dim]
        return emb

    def encode_gaussian(self, x: np.ndarray, train: bool = False) -> tuple[np.ndarray, np.ndarray]:
        if not self.variational:
            raise UnsupportedArchitecture("autoencoder has no Gaussian head")
        emb = self.encode_stages(x, train)[-1]
        d = self.latent.dim
        return emb[:, :d], emb[:, d:]

    def decode(self, z: np.ndarray, train: bool = False) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        expected = self._latent_shape()
        if z.shape[1:] != expected:
            raise ShapeMismatch(f"expected latent of shape (N,)+{expected}, got {z.shape}")
        return self.decode_stages(z, train)[-1]

    def _latent_shape(self) -> tuple[int, ...]:
        if self.latent.kind == "series":
            return (self.latent.steps, self.latent.dim)
        return (self.latent.dim,)

    def backward_decoder(self, d_out: np.ndarray,
                         stage_grads: list[np.ndarray | None] | None = None) -> np.ndarray:
        """Backpropagate through the decoder; returns the latent gradient.

        ``stage_grads`` optionally injects extra gradient at each decoder
        stage output (layerwise loss).
        """
        dy = d_out
        for i in range(len(self.dec_stages) - 1, -1, -1):
            if stage_grads is not None and stage_grads[i] is not None:
                dy = dy + stage_grads[i]
            dy = self.dec_stages[i].backward(dy)
        return dy

    def backward_encoder(self, d_emb: np.ndarray,
                         stage_grads: list[np.ndarray | None] | None = None) -> np.ndarray:
        dy = d_emb
        for i in range(len(self.enc_stages) - 1, -1, -1):
            if stage_grads is not None and stage_grads[i] is not None:
                dy = dy + stage_grads[i]
            dy = self.enc_stages[i].backward(dy)
        return dy

    def forward_layerwise(self, x: np.ndarray, train: bool = False) -> LayerwiseOutputs:
        """Mirror-paired stage outputs for the layerwise reconstruction loss.

        Encoder stage l pairs with decoder stage L-l; the embedding pairs
        with the decoder input (identically, contributing zero loss).
        """
        if self.arch_tag not in ("FCNN", "CNN"):
            raise UnsupportedArchitecture(
                f"{self.arch_tag} decoder is structured differently from its encoder"
            )
        enc_outs = self.encode_stages(x, train)
        z = enc_outs[-1][:, :self.latent.dim] if self.variational else enc_outs[-1]
        dec_outs = self.decode_stages(z, train)
        L = len(enc_outs)
        pairs = [(enc_outs[l], dec_outs[L - 2 - l]) for l in range(L - 1)]
        pairs.append((z, z))
        for a, b in pairs:
            if a.shape != b.shape:
                raise ShapeMismatch(f"layerwise pair shapes differ: {a.shape} vs {b.shape}")
        return LayerwiseOutputs(pairs)


def _walk(stage: nn.Layer):
    yield stage
    for attr in ("layers",):
        for sub in getattr(stage, attr, []) or []:
            yield from _walk(sub)
    if isinstance(stage, nn.ResidualBlock1d):
        yield from iter(stage._sublayers())


def build_autoencoder(arch: str, input_len: int, latent_dim: int, seed: int,
                      variational: bool = False) -> Autoencoder:
    """Construct an initialized autoencoder; weights uniform +-1/sqrt(fan_in)."""
    if arch not in ARCH_TAGS:
        raise UnsupportedArchitecture(f"unknown architecture {arch!r}")
    if input_len < 20:
        raise IncompatibleLength("input length must be at least 20")
    rng = np.random.default_rng(seed)
    if arch == "FCNN":
        return _build_fcnn(input_len, latent_dim, rng, seed, variational)
    if arch == "CNN":
        return _build_cnn(input_len, latent_dim, rng, seed, variational)
    if arch == "LSTM":
        return _build_lstm(input_len, latent_dim, rng, seed, variational)
    if variational:
        raise UnsupportedArchitecture("DTC latent is a time series; no Gaussian head")
    return _build_dtc(input_len, rng, seed)


def _build_fcnn(t: int, d: int, rng, seed, variational) -> Autoencoder:
    w1, w2, w3 = FCNN_WIDTHS
    head = 2 * d if variational else d
    enc = [
        nn.Sequential(nn.Dense(t, w1, rng), nn.ReLU()),
        nn.Sequential(nn.Dense(w1, w2, rng), nn.ReLU()),
        nn.Sequential(nn.Dense(w2, w3, rng), nn.ReLU()),
        nn.Dense(w3, head, rng),
    ]
    dec = [
        nn.Sequential(nn.Dense(d, w3, rng), nn.ReLU()),
        nn.Sequential(nn.Dense(w3, w2, rng), nn.ReLU()),
        nn.Sequential(nn.Dense(w2, w1, rng), nn.ReLU()),
        nn.Dense(w1, t, rng),
    ]
    kind = "gaussian" if variational else "vector"
    return Autoencoder("FCNN", t, LatentSpec(kind, d), enc, dec, seed, variational)


def _build_cnn(t: int, d: int, rng, seed, variational) -> Autoencoder:
    c1, c2, c3 = CNN_CHANNELS
    head = 2 * d if variational else d
    enc = [
        nn.Sequential(nn.AddChannel(), nn.ResidualBlock1d(1, c1, CNN_KERNEL, rng)),
        nn.ResidualBlock1d(c1, c2, CNN_KERNEL, rng),
        nn.ResidualBlock1d(c2, c3, CNN_KERNEL, rng),
        nn.Sequential(nn.GlobalAvgPool1d(), nn.Dense(c3, head, rng)),
    ]
    dec = [
        nn.Sequential(nn.Dense(d, c3 * t, rng), nn.Reshape((t, c3))),
        nn.ResidualBlock1d(c3, c2, CNN_KERNEL, rng),
        nn.ResidualBlock1d(c2, c1, CNN_KERNEL, rng),
        nn.Sequential(
            nn.ResidualBlock1d(c1, 1, CNN_KERNEL, rng, linear_out=True),
            nn.DropChannel(),
        ),
    ]
    kind = "gaussian" if variational else "vector"
    return Autoencoder("CNN", t, LatentSpec(kind, d), enc, dec, seed, variational)


def _build_lstm(t: int, d: int, rng, seed, variational) -> Autoencoder:
    h = LSTM_HIDDEN
    head = 2 * d if variational else d
    enc = [
        nn.Sequential(nn.Reshape((t, 1)), nn.BiLSTM(1, h, rng)),
        nn.BiLSTM(2 * h, h, rng),
        nn.Sequential(nn.FinalHiddenConcat(h), nn.Dense(2 * h, head, rng)),
    ]
    dec = [
        nn.Sequential(nn.RepeatLatent(t), nn.BiLSTM(d, h, rng)),
        nn.BiLSTM(2 * h, h, rng),
        nn.Sequential(nn.Dense(2 * h, 1, rng), nn.Reshape((t,))),
    ]
    kind = "gaussian" if variational else "vector"
    return Autoencoder("LSTM", t, LatentSpec(kind, d), enc, dec, seed, variational)


def _build_dtc(t: int, rng, seed) -> Autoencoder:
    if t % DTC_POOL != 0:
        raise IncompatibleLength(
            f"DTC requires input length divisible by {DTC_POOL}, got {t}"
        )
    c = DTC_CONV_CHANNELS
    h = DTC_HIDDEN
    steps = t // DTC_POOL
    enc = [
        nn.Sequential(
            nn.AddChannel(),
            nn.Conv1d(1, c, DTC_CONV_KERNEL, rng),
            nn.LeakyReLU(0.1),
            nn.MaxPool1d(DTC_POOL),
        ),
        nn.BiLSTM(c, h, rng),
        nn.BiLSTM(2 * h, h, rng),
    ]
    dec = [
        nn.Sequential(
            nn.Upsample1d(DTC_POOL),
            nn.Conv1d(2 * h, 1, DTC_CONV_KERNEL, rng),
            nn.DropChannel(),
        ),
    ]
    latent = LatentSpec("series", 2 * h, steps)
    return Autoencoder("DTC", t, latent, enc, dec, seed)


def gradients(ae: Autoencoder, loss_eval) -> np.ndarray:
    """Accumulated parameter gradient of ``loss_eval`` at the current parameters.

    ``loss_eval`` is an objective exposing ``backprop(ae) -> float`` (the
    losses module provides these). Raises NonFiniteGradient on divergence.
    """
    ae.zero_grads()
    value = loss_eval.backprop(ae)
    if not np.isfinite(value):
        raise NonFiniteGradient(f"loss value {value!r}")
    return ae.get_grads()


# --- checkpoints --------------------------------------------------------------

_MAGIC = b"LCK1"


def save_checkpoint(ae: Autoencoder, path) -> None:
    """Binary checkpoint: header then 64-bit little-endian parameter values."""
    params = ae.get_params()
    buffers = ae.get_buffers()
    header = struct.pack(
        "<4sB B II Q Q q",
        _MAGIC,
        ARCH_TAGS.index(ae.arch_tag),
        1 if ae.variational else 0,
        ae.input_len,
        ae.latent.dim,
        params.size,
        buffers.size,
        ae.seed,
    )
    payload = header + params.astype("<f8").tobytes() + buffers.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(payload)


def load_checkpoint(path) -> Autoencoder:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_size = struct.calcsize("<4sB B II Q Q q")
    magic, arch_idx, variational, t, d, n_params, n_buffers, seed = struct.unpack(
        "<4sB B II Q Q q", raw[:head_size]
    )
    if magic != _MAGIC:
        raise ValueError("not a ledgercluster checkpoint")
    ae = build_autoencoder(ARCH_TAGS[arch_idx], t, d, seed, variational=bool(variational))
    if ae.n_params != n_params:
        raise ValueError("checkpoint parameter count does not match architecture")
    body = np.frombuffer(raw[head_size:], dtype="<f8")
    ae.set_params(body[:n_params].astype(np.float64))
    ae.set_buffers(body[n_params:n_params + n_buffers].astype(np.float64))
    return ae

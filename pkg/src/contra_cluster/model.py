"""Encoder, projector, decoder and conditional decoder."""
from __future__ import annotations

import numpy as np

from .nncore import Conv2d, ConvTranspose2d, Linear, Module, ops
from .nncore.tensor import as_tensor

LATENT_DIM = 128
PROJECTION_DIM = 64
ENCODER_CHANNELS = (1, 32, 64, 128)
DECODER_OUTPUT_PADS = (1, 0, 0)


class Encoder(Module):
    """Three stride-2 4x4 convs with GELU (28 -> 14 -> 7 -> 3), 2x2 avg-pool (3 -> 1), linear to 128."""

    def __init__(self, rng, latent_dim=LATENT_DIM, channels=ENCODER_CHANNELS):
        super().__init__()
        self.convs = [
            Conv2d(channels[i], channels[i + 1], rng, name=f"encoder.conv{i}") for i in range(len(channels) - 1)
        ]
        self.fc = Linear(channels[-1], latent_dim, rng, name="encoder.fc")

    def forward(self, x):
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1:] != (1, 28, 28):
            raise ops.ShapeError(f"encoder expects (B, 1, 28, 28), got {x.shape}")
        for conv in self.convs:
            x = ops.gelu(conv(x))
        x = ops.avgpool2d(x, 2, 2)
        return self.fc(x.reshape(x.shape[0], -1))


class Projector(Module):
    """128 -> 128 -> 128 -> 64 MLP, GELU between layers, none after the last."""

    def __init__(self, rng, latent_dim=LATENT_DIM, proj_dim=PROJECTION_DIM):
        super().__init__()
        self.layers = [
            Linear(latent_dim, latent_dim, rng, name="projector.fc0"),
            Linear(latent_dim, latent_dim, rng, name="projector.fc1"),
            Linear(latent_dim, proj_dim, rng, name="projector.fc2"),
        ]

    def forward(self, h):
        h = as_tensor(h)
        if h.ndim != 2 or h.shape[1] != self.layers[0].weight.shape[1]:
            raise ops.ShapeError(f"projector expects (B, {self.layers[0].weight.shape[1]}), got {h.shape}")
        for layer in self.layers[:-1]:
            h = ops.gelu(layer(h))
        return self.layers[-1](h)


class Decoder(Module):
    """Mirror of the encoder: linear to 128x3x3, transposed convs 3 -> 7 -> 14 -> 28, sigmoid."""

    def __init__(self, rng, latent_dim=LATENT_DIM, channels=ENCODER_CHANNELS):
        super().__init__()
        self.base = channels[-1]
        self.fc = Linear(latent_dim, self.base * 9, rng, name="decoder.fc")
        rev = channels[::-1]
        self.deconvs = [
            ConvTranspose2d(rev[i], rev[i + 1], rng, output_pad=DECODER_OUTPUT_PADS[i], name=f"decoder.deconv{i}")
            for i in range(len(rev) - 1)
        ]

    def forward(self, h):
        h = as_tensor(h)
        if h.ndim != 2 or h.shape[1] != self.fc.weight.shape[1]:
            raise ops.ShapeError(f"decoder expects (B, {self.fc.weight.shape[1]}), got {h.shape}")
        x = ops.gelu(self.fc(h)).reshape(h.shape[0], self.base, 3, 3)
        for i, deconv in enumerate(self.deconvs):
            x = deconv(x)
            x = ops.sigmoid(x) if i == len(self.deconvs) - 1 else ops.gelu(x)
        return x


class ConditionalDecoder(Module):
    """Decoder trunk preceded by a head mixing the latent code with a soft assignment.

    The head is linear on concat(h, c). Its latent block starts as the
    identity and its bias at zero, so before fine-tuning the conditional
    decoder reproduces the trunk it wraps; the assignment block starts small
    and random.
    """

    def __init__(self, trunk, k, rng, latent_dim=LATENT_DIM, simplex_tol=1e-4):
        super().__init__()
        if k < 2:
            raise ValueError("conditional decoder needs k >= 2 clusters")
        self.k = k
        self.simplex_tol = simplex_tol
        dtype = trunk.fc.weight.dtype
        w = np.zeros((latent_dim, latent_dim + k), dtype=dtype)
        w[:, :latent_dim] = np.eye(latent_dim, dtype=dtype)
        w[:, latent_dim:] = rng.uniform(-1.0, 1.0, size=(latent_dim, k)) / np.sqrt(k)
        self.cond = Linear(latent_dim + k, latent_dim, rng, name="decoder.cond", dtype=dtype)
        self.cond.weight.data = w
        self.cond.bias.data = np.zeros(latent_dim, dtype=dtype)
        self.trunk = trunk

    def forward(self, h, c):
        h, c = as_tensor(h), as_tensor(c)
        if c.ndim != 2 or c.shape != (h.shape[0], self.k):
            raise ops.ShapeError(f"assignment must be ({h.shape[0]}, {self.k}), got {c.shape}")
        sums = c.data.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > self.simplex_tol) or np.any(c.data < 0):
            raise ValueError("soft assignment rows must lie on the probability simplex")
        c = as_tensor(c.data.astype(h.dtype))
        return self.trunk(self.cond(ops.concat([h, c], axis=1)))


class ContrastiveAutoencoder(Module):
    """Container for the three networks trained in the warmup phase."""

    def __init__(self, rng):
        super().__init__()
        self.encoder = Encoder(rng)
        self.projector = Projector(rng)
        self.decoder = Decoder(rng)
        self.cond_decoder = None

    def attach_conditional(self, k, rng):
        self.cond_decoder = ConditionalDecoder(self.decoder, k, rng)
        return self.cond_decoder

    def named_parameters(self, prefix=""):
        yield from self.encoder.named_parameters(prefix + "encoder.")
        yield from self.projector.named_parameters(prefix + "projector.")
        yield from self.decoder.named_parameters(prefix + "decoder.")
        if self.cond_decoder is not None:
            yield from self.cond_decoder.cond.named_parameters(prefix + "cond.")

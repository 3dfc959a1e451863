"""The posterior network: scalar embedding, alternating sample/node attention
encoder with a query token, summary cross-attention, and a decoder emitting
permutation logits plus triangular edge logits that together parameterize a
sampleable distribution over DAGs.

No positional encodings anywhere: the architecture is permutation invariant
over samples and permutation equivariant over nodes by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ValidationError
from .graphs import compose_dag
from .metrics import PosteriorSampleSet
from .sinkhorn import (
    DEFAULT_GS_CONFIG,
    GumbelSinkhornConfig,
    gumbel_sinkhorn_batch,
)


@dataclass(frozen=True)
class ModelConfig:
    hidden_width: int = 64
    encoder_blocks: int = 2  # one block = sample-attention layer + node-attention layer
    decoder_layers_theta: int = 2
    decoder_layers_phi: int = 2
    num_heads: int = 4
    ffn_width: int = 128
    gs: GumbelSinkhornConfig = field(default_factory=GumbelSinkhornConfig)

    def __post_init__(self):
        if self.hidden_width % self.num_heads != 0:
            raise ValidationError("hidden_width must be divisible by num_heads")
        for name in ("hidden_width", "encoder_blocks", "decoder_layers_theta",
                     "decoder_layers_phi", "num_heads", "ffn_width"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.hidden_width // self.num_heads


class DecoderOutput(NamedTuple):
    """Permutation logits and edge logits for one dataset.  Only the strictly
    lower triangle of ``phi`` carries edge probabilities; everything at
    i <= j contributes probability exactly 0."""

    theta: torch.Tensor  # D x D
    phi: torch.Tensor  # D x D, strictly-lower entries are the live ones


def strict_lower_mask(d: int, device=None) -> torch.Tensor:
    return torch.tril(torch.ones(d, d, dtype=torch.bool, device=device), diagonal=-1)


def masked_edge_probabilities(phi: torch.Tensor) -> torch.Tensor:
    """sigmoid(phi) on the strict lower triangle, exact zeros elsewhere."""
    mask = strict_lower_mask(phi.shape[-1], device=phi.device)
    return torch.where(mask, torch.sigmoid(phi), torch.zeros((), dtype=phi.dtype))


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, width: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = width // num_heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)

    def forward(self, x):  # (B, T, H)
        b, t, h = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (b, t, self.num_heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        attn = F.scaled_dot_product_attention(q, k, v)
        return self.out(attn.transpose(1, 2).reshape(b, t, h))


class TransformerLayer(nn.Module):
    """Pre-norm residual self-attention followed by a residual feed-forward
    applied directly to the attention output."""

    def __init__(self, width: int, num_heads: int, ffn_width: int):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.attention = MultiHeadSelfAttention(width, num_heads)
        self.mlp = nn.Sequential(
            nn.Linear(width, ffn_width), nn.GELU(), nn.Linear(ffn_width, width)
        )

    def forward(self, x):  # (B, T, H) -> (B, T, H)
        h = x + self.attention(self.norm(x))
        return h + self.mlp(h)


class SummaryCrossAttention(nn.Module):
    """Multi-head cross-attention pooling: one query vector attends over a
    node's sample representations, which makes the result invariant to the
    order of the samples."""

    def __init__(self, width: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = width // num_heads
        self.query = nn.Linear(width, width)
        self.key = nn.Linear(width, width)
        self.value = nn.Linear(width, width)
        self.out = nn.Linear(width, width)

    def forward(self, q_tokens, kv_tokens):  # (B, 1, H), (B, T, H)
        b, t, h = kv_tokens.shape
        q = self.query(q_tokens).view(b, 1, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.key(kv_tokens).view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.value(kv_tokens).view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        attn = F.scaled_dot_product_attention(q, k, v)
        return self.out(attn.transpose(1, 2).reshape(b, 1, h))


class Encoder(nn.Module):
    """Alternates attention across samples and across nodes, then pools each
    node's samples with the evolved query token."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config
        self.embed = nn.Linear(1, c.hidden_width)
        self.sample_layers = nn.ModuleList(
            TransformerLayer(c.hidden_width, c.num_heads, c.ffn_width)
            for _ in range(c.encoder_blocks)
        )
        self.node_layers = nn.ModuleList(
            TransformerLayer(c.hidden_width, c.num_heads, c.ffn_width)
            for _ in range(c.encoder_blocks)
        )
        self.summary = SummaryCrossAttention(c.hidden_width, c.num_heads)

    def embed_dataset(self, x: torch.Tensor) -> torch.Tensor:
        """Map a (B, N, D) dataset to (B, D, N+1, H) tokens: a shared affine
        map of each scalar plus an all-zeros query slot appended along the
        sample axis."""
        if not torch.isfinite(x).all():
            raise ValidationError("dataset must be finite")
        b, n, d = x.shape
        tokens = self.embed(x.permute(0, 2, 1).unsqueeze(-1))  # (B, D, N, H)
        query = tokens.new_zeros(b, d, 1, tokens.shape[-1])
        return torch.cat([tokens, query], dim=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (B, N, D) -> (B, D, H)
        tokens = self.embed_dataset(x)
        b, d, t, h = tokens.shape
        for sample_layer, node_layer in zip(self.sample_layers, self.node_layers):
            tokens = sample_layer(tokens.reshape(b * d, t, h)).reshape(b, d, t, h)
            tokens = tokens.permute(0, 2, 1, 3).reshape(b * t, d, h)
            tokens = node_layer(tokens).reshape(b, t, d, h).permute(0, 2, 1, 3)
        query = tokens[:, :, -1:, :].reshape(b * d, 1, h)
        values = tokens[:, :, :-1, :].reshape(b * d, t - 1, h)
        return self.summary(query, values).reshape(b, d, h)


class ParameterAttention(nn.Module):
    """Softmax-free bilinear attention: per head (R Wq)(R Wk)^T / sqrt(H),
    heads combined by a scalar output projection.  Conjugates under row
    permutations of the input.

    The output projection uses a fan-in-scaled init (std 1/(2 sqrt(M))): the
    initial edge probabilities still start near 0.5, but the projection does
    not throttle the gradients flowing into the query/key weights the way a
    near-zero init does.
    """

    def __init__(self, width: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = width // num_heads
        self.width = width
        self.query = nn.Linear(width, width, bias=False)
        self.key = nn.Linear(width, width, bias=False)
        self.out = nn.Linear(num_heads, 1)
        nn.init.normal_(self.out.weight, std=0.5 / math.sqrt(num_heads))
        nn.init.zeros_(self.out.bias)

    def forward(self, r):  # (B, D, H) -> (B, D, D)
        b, d, h = r.shape
        shape = (b, d, self.num_heads, self.head_dim)
        q = self.query(r).view(shape).transpose(1, 2)
        k = self.key(r).view(shape).transpose(1, 2)
        heads = q @ k.transpose(-1, -2) / math.sqrt(self.width)  # (B, M, D, D)
        return self.out(heads.permute(0, 2, 3, 1)).squeeze(-1)


class Decoder(nn.Module):
    """Produces the permutation logits as a rank-one map (scalar head times
    the node-position vector [1..D]) and the edge logits via parameter
    attention over further transformer layers."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config
        self.theta_layers = nn.ModuleList(
            TransformerLayer(c.hidden_width, c.num_heads, c.ffn_width)
            for _ in range(c.decoder_layers_theta)
        )
        self.theta_head = nn.Linear(c.hidden_width, 1)
        self.phi_layers = nn.ModuleList(
            TransformerLayer(c.hidden_width, c.num_heads, c.ffn_width)
            for _ in range(c.decoder_layers_phi)
        )
        self.parameter_attention = ParameterAttention(c.hidden_width, c.num_heads)

    def forward(self, summary: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        r = summary  # (B, D, H)
        for layer in self.theta_layers:
            r = layer(r)
        d = r.shape[1]
        positions = torch.arange(1, d + 1, dtype=r.dtype, device=r.device)
        theta = self.theta_head(r) * positions  # (B, D, 1) * (D,) -> (B, D, D)
        for layer in self.phi_layers:
            r = layer(r)
        phi = self.parameter_attention(r)
        return theta, phi


class BcnpModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder = Decoder(config)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, N, D) datasets -> batched (theta, phi), each (B, D, D)."""
        if x.ndim != 3:
            raise ValidationError("expected a (batch, samples, nodes) tensor")
        weight_dtype = self.encoder.embed.weight.dtype
        return self.decoder(self.encoder(x.to(weight_dtype)))

    @torch.no_grad()
    def posterior_params(self, dataset: np.ndarray) -> DecoderOutput:
        """Decoder output for a single N x D dataset."""
        data = np.asarray(dataset, dtype=np.float64)
        if data.ndim != 2:
            raise ValidationError("dataset must be an N x D matrix")
        x = torch.from_numpy(data).unsqueeze(0)
        theta, phi = self.forward(x)
        return DecoderOutput(theta[0], phi[0])


def sample_dags(
    output: DecoderOutput,
    num_samples: int,
    config: GumbelSinkhornConfig = DEFAULT_GS_CONFIG,
    generator: torch.Generator | None = None,
) -> PosteriorSampleSet:
    """Draw DAGs from the decoder output: a hard permutation per sample from
    the Gumbel-perturbed assignment, independent Bernoulli edges on the strict
    lower triangle, composed as Q A Q^T (acyclic by construction).

    The attached marginals average Q sigma(phi) Q^T over the same permutation
    draws, which is the sampled-graph marginal with the Bernoulli noise
    integrated out.
    """
    if num_samples < 1:
        raise ValidationError("num_samples must be >= 1")
    theta = output.theta.detach()
    phi = output.phi.detach()
    d = theta.shape[0]
    _, hard = gumbel_sinkhorn_batch(theta, num_samples, config, generator, hard_only=True)
    probs = masked_edge_probabilities(phi)  # (D, D), zeros at i <= j
    uniforms = torch.rand((num_samples, d, d), generator=generator, dtype=probs.dtype)
    edges = (uniforms < probs).to(hard.dtype)

    hard_np = hard.cpu().numpy().astype(np.uint8)
    edges_np = edges.cpu().numpy().astype(np.uint8)
    graphs = [compose_dag(q, a) for q, a in zip(hard_np, edges_np)]

    marginals = torch.einsum("sia,ab,sjb->sij", hard, probs, hard).mean(dim=0)
    marginals = marginals.cpu().numpy().astype(np.float64)
    np.fill_diagonal(marginals, 0.0)
    return PosteriorSampleSet(graphs, marginals.clip(0.0, 1.0), num_samples)


def edge_marginals(
    output: DecoderOutput,
    num_samples: int,
    config: GumbelSinkhornConfig = DEFAULT_GS_CONFIG,
    generator: torch.Generator | None = None,
) -> np.ndarray:
    """Monte-Carlo marginal edge probabilities: the mean over hard permutation
    draws of Q sigma_mask(phi) Q^T.  Entries lie in [0, 1], diagonal is 0."""
    if num_samples < 1:
        raise ValidationError("num_samples must be >= 1")
    theta = output.theta.detach()
    phi = output.phi.detach()
    _, hard = gumbel_sinkhorn_batch(theta, num_samples, config, generator, hard_only=True)
    probs = masked_edge_probabilities(phi)
    marginals = torch.einsum("sia,ab,sjb->sij", hard, probs, hard).mean(dim=0)
    marginals = marginals.cpu().numpy().astype(np.float64)
    np.fill_diagonal(marginals, 0.0)
    return marginals.clip(0.0, 1.0)

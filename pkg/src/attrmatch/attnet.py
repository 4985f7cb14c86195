"""Attribute-association network.

Computes an m x n attribute-similarity matrix for an entity pair: per-attribute
token self-attention gives token importance weights, cross-entity interaction
attention aligns each source token with the target attribute's tokens, a
highway comparator scores each aligned token, and the weighted sum of token
scores fills one matrix cell. Both directions are computed with shared
parameters and averaged, so the matrix is symmetric in argument order.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class TokenEmbeddings:
    """Contextual token embeddings for one serialized pair."""

    vectors: torch.Tensor  # (seq_len, d)
    pooled: torch.Tensor  # (d,) embedding at the leading classification token
    left_spans: list
    right_spans: list

    @property
    def hidden_size(self) -> int:
        return self.vectors.shape[1]


@dataclass
class AttributeSimilarityMatrix:
    values: torch.Tensor  # (m, n)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


class AttentionParams(nn.Module):
    """Trainable weights of the association network.

    One self-attention bilinear form, one inter-attention bilinear form, one
    highway layer over the 2d comparison features and a scalar projection head;
    all shared across attributes and both directions.
    """

    def __init__(self, hidden_size: int, m2v_axis: str = "col"):
        super().__init__()
        if m2v_axis not in ("col", "row"):
            raise ValueError(f"m2v_axis must be 'col' or 'row', got {m2v_axis!r}")
        d = hidden_size
        self.hidden_size = d
        self.m2v_axis = m2v_axis
        scale = 1.0 / math.sqrt(d)
        self.W_self = nn.Parameter(torch.randn(d, d) * scale)
        self.W_inter = nn.Parameter(torch.randn(d, d) * scale)
        self.highway_transform = nn.Linear(2 * d, 2 * d)
        self.highway_gate = nn.Linear(2 * d, 2 * d)
        # Gate bias at -2: gates mostly carry the raw comparison features early on.
        nn.init.constant_(self.highway_gate.bias, -2.0)
        self.score_proj = nn.Linear(2 * d, 1)


def self_attention(H_attr: torch.Tensor, W_self: torch.Tensor) -> torch.Tensor:
    """Row-stochastic token-token attention within one attribute, (L, L)."""
    if H_attr.shape[1] < 1:
        raise ValueError("attribute must have at least one token")
    scores = H_attr.T @ W_self @ H_attr
    if not torch.isfinite(scores).all():
        raise FloatingPointError("non-finite self-attention scores")
    return F.softmax(scores, dim=-1)


def m2v(alpha: torch.Tensor, axis: str = "col") -> torch.Tensor:
    """Reduce a token-token attention matrix to per-token weights in (0, 1].

    "col" sums the attention mass each token receives; "row" reproduces the
    literal row-sum reading (constant 1 for row-stochastic input).
    """
    if axis == "col":
        mass = alpha.sum(dim=0)
    elif axis == "row":
        mass = alpha.sum(dim=1)
    else:
        raise ValueError(f"axis must be 'col' or 'row', got {axis!r}")
    peak = mass.max()
    if peak <= 0:
        raise FloatingPointError("attention mass vector has no positive entry")
    return mass / peak


def inter_attention(H_src_attr: torch.Tensor, H_tgt: torch.Tensor, W_inter: torch.Tensor):
    """Align source-attribute tokens against target tokens.

    Returns (beta, H_attended): beta is the (L_s, L_t) row-stochastic alignment,
    H_attended is (d, L_s) with column x the beta-weighted mix of target columns.
    """
    scores = H_src_attr.T @ W_inter @ H_tgt
    if not torch.isfinite(scores).all():
        raise FloatingPointError("non-finite inter-attention scores")
    beta = F.softmax(scores, dim=-1)
    H_attended = H_tgt @ beta.T
    return beta, H_attended


def compare_tokens(
    H_src_attr: torch.Tensor, H_attended: torch.Tensor, params: AttentionParams
) -> torch.Tensor:
    """Score each source token against its aligned target representation.

    Comparison features are |h - h_aligned| and h * h_aligned, passed through
    the highway layer and projected to one scalar per token; returns (L_s,).
    """
    if H_src_attr.shape != H_attended.shape:
        raise ValueError(f"shape mismatch: {tuple(H_src_attr.shape)} vs {tuple(H_attended.shape)}")
    u = torch.cat([(H_src_attr - H_attended).abs(), H_src_attr * H_attended], dim=0).T  # (L, 2d)
    gate = torch.sigmoid(params.highway_gate(u))
    transformed = F.relu(params.highway_transform(u))
    y = gate * transformed + (1.0 - gate) * u
    return params.score_proj(y).squeeze(-1)


def _directed_similarity(src_mats, tgt_mats, params: AttentionParams) -> torch.Tensor:
    """One direction of the similarity matrix; empty attributes contribute zeros."""
    m, n = len(src_mats), len(tgt_mats)
    rows = []
    for H_i in src_mats:
        if H_i.shape[1] == 0:
            rows.append([None] * n)
            continue
        alpha = self_attention(H_i, params.W_self)
        weights = m2v(alpha, axis=params.m2v_axis)
        row = []
        for H_j in tgt_mats:
            if H_j.shape[1] == 0:
                row.append(None)
                continue
            _, attended = inter_attention(H_i, H_j, params.W_inter)
            scores = compare_tokens(H_i, attended, params)
            row.append((scores * weights).sum())
        rows.append(row)
    zero = src_mats[0].new_zeros(()) if src_mats else torch.zeros(())
    flat = [cell if cell is not None else zero for row in rows for cell in row]
    return torch.stack(flat).reshape(m, n)


def span_matrices(emb: TokenEmbeddings):
    """Slice the (d, L) value-token matrix of every attribute on both sides."""
    left = [emb.vectors[s.start : s.end].T for s in emb.left_spans]
    right = [emb.vectors[s.start : s.end].T for s in emb.right_spans]
    return left, right


def attribute_similarity_matrix(
    emb: TokenEmbeddings, params: AttentionParams
) -> AttributeSimilarityMatrix:
    """Fused m x n similarity matrix: average of both directions."""
    left, right = span_matrices(emb)
    if not left or not right:
        raise ValueError("both entities need at least one attribute span")
    forward = _directed_similarity(left, right, params)
    backward = _directed_similarity(right, left, params)
    return AttributeSimilarityMatrix(values=0.5 * (forward + backward.T))

"""Semantic branch: pooled visual features scored against fixed word vectors.

Shapes follow the word-vector convention used throughout the package:

* ``W`` (d, k) fixed class word vectors (``W_s`` or the trainable ``W_fb``)
* ``M`` (v, d) trainable vocabulary attention
* ``D`` (d, v) fixed external vocabulary
* ``T`` (N, d) trainable feature-to-semantic adapter

The branch maps a feature ``x`` (N,) to logits through the composed matrix
``P = tanh(W^T M^T D^T T^T)`` of shape (k, N), i.e. ``tanh`` wraps the whole
product and is not applied to the feature.  ``D @ M`` is the ``(d, d)`` local
semantic information that the inter-stage flow replaces.
"""
from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn


class ShapeError(ValueError):
    pass


def _check_chain(W, M, D, T):
    d, k = W.shape
    pairs = [
        ("W", W.shape, "M", M.shape, W.shape[0] == M.shape[1]),
        ("M", M.shape, "D", D.shape, M.shape[0] == D.shape[1]),
        ("D", D.shape, "T", T.shape, D.shape[0] == T.shape[1]),
    ]
    for a, sa, b, sb, ok in pairs:
        if not ok:
            raise ShapeError(f"cannot compose {a}{tuple(sa)} with {b}{tuple(sb)}")


def compose_projection(W: torch.Tensor, M: torch.Tensor, D: torch.Tensor, T: torch.Tensor) -> torch.Tensor:
    """``tanh(W^T M^T D^T T^T)``: the (k, N) map from features to class logits."""
    _check_chain(W, M, D, T)
    return torch.tanh(W.T @ (D @ M).T @ T.T)


def project_with_semantics(W: torch.Tensor, f: torch.Tensor, T: torch.Tensor) -> torch.Tensor:
    """Same as :func:`compose_projection` with a precomputed (d, d) semantic matrix ``f``."""
    if W.shape[0] != f.shape[0] or f.shape[1] != T.shape[1]:
        raise ShapeError(f"cannot compose W{tuple(W.shape)}, f{tuple(f.shape)}, T{tuple(T.shape)}")
    return torch.tanh(W.T @ f.T @ T.T)


def logits_from_projection(P: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    if x.shape[-1] != P.shape[1]:
        raise ShapeError(f"feature of size {x.shape[-1]} does not match projection {tuple(P.shape)}")
    if not torch.isfinite(x).all():
        raise ValueError("non-finite feature")
    return x @ P.T


def semantic_scores(P: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Class probabilities ``softmax(P x)``; ``x`` may be (N,) or a batch (R, N)."""
    return torch.softmax(logits_from_projection(P, x), dim=-1)


def uniform_(tensor: torch.Tensor, fan_in: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)
    return tensor


class SemanticBranch(nn.Module):
    """The trainable half of a semantic branch (``T`` and ``M``).

    The fixed ``W`` and ``D`` live with the owner so several branches can
    reference one copy.
    """

    def __init__(self, feature_dim: int, embed_dim: int, vocab_size: int,
                 generator: Optional[torch.Generator] = None, dtype=torch.float32):
        super().__init__()
        self.T = nn.Parameter(torch.empty(feature_dim, embed_dim, dtype=dtype))
        self.M = nn.Parameter(torch.empty(vocab_size, embed_dim, dtype=dtype))
        uniform_(self.T, feature_dim, generator)
        uniform_(self.M, vocab_size, generator)

    def local_semantics(self, D: torch.Tensor) -> torch.Tensor:
        """``D @ M``, the (d, d) semantic information of this branch."""
        if D.shape[1] != self.M.shape[0]:
            raise ShapeError(f"cannot compose D{tuple(D.shape)} with M{tuple(self.M.shape)}")
        return D @ self.M

    def projection(self, W: torch.Tensor, D: torch.Tensor, f: Optional[torch.Tensor] = None) -> torch.Tensor:
        if f is None:
            return compose_projection(W, self.M, D, self.T)
        return project_with_semantics(W, f, self.T)

    def forward(self, x: torch.Tensor, W: torch.Tensor, D: torch.Tensor,
                f: Optional[torch.Tensor] = None) -> torch.Tensor:
        return logits_from_projection(self.projection(W, D, f), x)


def fb_scores(branch: SemanticBranch, W_fb: torch.Tensor, D: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Background/foreground probabilities; column 0 is background."""
    if W_fb.shape[1] != 2:
        raise ShapeError(f"W_fb must have 2 columns, got {tuple(W_fb.shape)}")
    return torch.softmax(branch(x, W_fb, D), dim=-1)

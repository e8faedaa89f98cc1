"""Semantic information flow between cascade stages.

Stage 1 starts from its local semantics ``f_1 = D M_1``; each later stage
fuses the previous state through two linear maps and adds its own local
semantics: ``f_t = A_t (B_t f_{t-1}) + D M_t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn

from .semantic_head import ShapeError, project_with_semantics, semantic_scores, uniform_


@dataclass(frozen=True)
class FlowState:
    f: torch.Tensor
    stage_index: int


class FlowFuser(nn.Module):
    """``H_t``: two bias-free linear maps, optionally with an activation between them."""

    def __init__(self, embed_dim: int, activation: Optional[str] = None,
                 generator: Optional[torch.Generator] = None, dtype=torch.float32):
        super().__init__()
        self.A = nn.Parameter(torch.empty(embed_dim, embed_dim, dtype=dtype))
        self.B = nn.Parameter(torch.empty(embed_dim, embed_dim, dtype=dtype))
        uniform_(self.A, embed_dim, generator)
        uniform_(self.B, embed_dim, generator)
        if activation not in (None, "relu", "tanh"):
            raise ValueError(f"unknown fuser activation {activation!r}")
        self.activation = activation

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        h = self.B @ f
        if self.activation == "relu":
            h = torch.relu(h)
        elif self.activation == "tanh":
            h = torch.tanh(h)
        return self.A @ h


def _local(D: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
    if D.shape[1] != M.shape[0]:
        raise ShapeError(f"cannot compose D{tuple(D.shape)} with M{tuple(M.shape)}")
    return D @ M


def init_flow(D: torch.Tensor, M1: torch.Tensor) -> FlowState:
    return FlowState(f=_local(D, M1), stage_index=1)


def fuse(prev: FlowState, D: torch.Tensor, Mt: torch.Tensor, fuser: FlowFuser) -> FlowState:
    local = _local(D, Mt)
    if prev.f.shape != local.shape:
        raise ShapeError(f"flow state {tuple(prev.f.shape)} does not match local semantics {tuple(local.shape)}")
    return FlowState(f=fuser(prev.f) + local, stage_index=prev.stage_index + 1)


def flow_states(D: torch.Tensor, Ms: Sequence[torch.Tensor], fusers: Sequence[FlowFuser]) -> list:
    """Run the recursion over all stages; ``fusers[i]`` feeds stage ``i + 2``."""
    if len(fusers) != len(Ms) - 1:
        raise ValueError(f"{len(Ms)} stages need {len(Ms) - 1} fusers, got {len(fusers)}")
    states = [init_flow(D, Ms[0])]
    for Mt, fuser in zip(Ms[1:], fusers):
        states.append(fuse(states[-1], D, Mt, fuser))
    return states


def stage_scores_with_flow(W_s: torch.Tensor, state: FlowState, T_t: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    return semantic_scores(project_with_semantics(W_s, state.f, T_t), x)

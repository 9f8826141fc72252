"""Differentiable architecture search over Conformer encoder hyper-parameters."""
from .search import (SearchReport, SearchSettings, TraceStep, injected_report, pipelined_search,
                     progressive_search, select_architecture)
from .supernet import (STAGES, ArchParams, CandidateSet, Supernet, apply_choices, arch_space,
                       build_supernet, enumerate_architectures)
from .weights import (ArchError, expected_cost, gumbel_noise, gumbel_weights, penalized_loss,
                      softmax_weights)

__all__ = [
    "STAGES", "ArchError", "ArchParams", "CandidateSet", "SearchReport", "SearchSettings",
    "Supernet", "TraceStep", "apply_choices", "arch_space", "build_supernet",
    "enumerate_architectures", "expected_cost", "gumbel_noise", "gumbel_weights",
    "injected_report", "penalized_loss", "pipelined_search", "progressive_search",
    "select_architecture", "softmax_weights",
]

"""Beam-search sampling, pass-rate testing, and prioritized experience
replay for curating code-generation fine-tuning data."""

from .beam import BeamConfig, Hypothesis, TokenModel, beam_search, sample_phase
from .harness import (
    CodeTask,
    ExecutionResult,
    Status,
    SubprocessRunner,
    TestCase,
    ToyRunner,
    load_tasks,
    pass_rate,
    run_one,
    test_phase,
)
from .replay import (
    PriorityConfig,
    PriorityScheme,
    ReplayBuffer,
    ReplayEntry,
    p2value,
    priorities,
    sample,
    sampling_distribution,
)
from .toylm import EOS_TOKEN, TOY_VOCABULARY, ToyLM
from .trainer import (
    LoopConfig,
    Minibatch,
    btp_loop,
    build_minibatch,
    export_jsonl,
    sweep_alpha,
    sweep_k,
)

__all__ = [
    "BeamConfig",
    "CodeTask",
    "EOS_TOKEN",
    "ExecutionResult",
    "Hypothesis",
    "LoopConfig",
    "Minibatch",
    "PriorityConfig",
    "PriorityScheme",
    "ReplayBuffer",
    "ReplayEntry",
    "Status",
    "SubprocessRunner",
    "TOY_VOCABULARY",
    "TestCase",
    "TokenModel",
    "ToyLM",
    "ToyRunner",
    "beam_search",
    "btp_loop",
    "build_minibatch",
    "export_jsonl",
    "load_tasks",
    "p2value",
    "pass_rate",
    "priorities",
    "run_one",
    "sample",
    "sample_phase",
    "sampling_distribution",
    "sweep_alpha",
    "sweep_k",
    "test_phase",
]

__version__ = "0.1.0"

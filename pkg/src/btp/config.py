"""Run configuration: one JSON document, mirrored one-to-one by CLI flags.

Values are parsed leniently and checked by ``validate``, which returns
every violation at once instead of stopping at the first, so an operator
can fix a config file in a single pass.  The strict core objects
(BeamConfig, PriorityConfig, LoopConfig) are only built after validation.
"""

import json
from dataclasses import dataclass, field, fields

from .beam import BeamConfig
from .replay import PriorityConfig, PriorityScheme
from .trainer import LoopConfig

SCHEMA_VERSION = 1


@dataclass
class BeamSettings:
    k: int = 3  # shipped default beam width
    max_len: int = 8


@dataclass
class PrioritySettings:
    mix_weight: float = 0.5
    prioritization_exponent: float = 1.0
    scheme: str = "rank"


@dataclass
class LoopSettings:
    iterations: int = 5
    minibatch_size: int = 16
    update_weight: float = 1.0
    buffer_capacity: int | None = None


@dataclass
class RunnerSettings:
    kind: str = "toy"
    command_template: str | None = None
    timeout_s: float = 5.0
    output_cap_bytes: int = 65536


@dataclass
class ModelSettings:
    order: int = 2
    smoothing: float = 1.0
    path: str | None = None


@dataclass
class PathSettings:
    tasks: str | None = None
    eval_tasks: str | None = None
    buffer: str | None = None
    batch_out: str | None = None
    metrics_out: str | None = None
    model_out: str | None = None


_SECTIONS = {
    "beam": BeamSettings,
    "priority": PrioritySettings,
    "loop": LoopSettings,
    "runner": RunnerSettings,
    "model": ModelSettings,
    "paths": PathSettings,
}


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    workers: int | None = None
    beam: BeamSettings = field(default_factory=BeamSettings)
    priority: PrioritySettings = field(default_factory=PrioritySettings)
    loop: LoopSettings = field(default_factory=LoopSettings)
    runner: RunnerSettings = field(default_factory=RunnerSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    unknown_fields: list[str] = field(default_factory=list)

    # -- lenient parsing ------------------------------------------------

    @classmethod
    def from_json_dict(cls, data: dict) -> "RunConfig":
        config = cls()
        for key, value in data.items():
            if key in ("schema_version", "seed", "workers"):
                setattr(config, key, value)
            elif key in _SECTIONS and isinstance(value, dict):
                section = getattr(config, key)
                names = {f.name for f in fields(section)}
                for sub, sub_value in value.items():
                    if sub in names:
                        setattr(section, sub, sub_value)
                    else:
                        config.unknown_fields.append(f"{key}.{sub}")
            else:
                config.unknown_fields.append(key)
        return config

    def to_json_dict(self) -> dict:
        out = {"schema_version": self.schema_version, "seed": self.seed,
               "workers": self.workers}
        for name in _SECTIONS:
            section = getattr(self, name)
            out[name] = {f.name: getattr(section, f.name) for f in fields(section)}
        return out

    # -- validation -----------------------------------------------------

    def validate(self) -> list[str]:
        """Every violated field, as 'dotted.name: problem' strings."""
        problems: list[str] = []

        def check(cond, name, message):
            if not cond:
                problems.append(f"{name}: {message}")

        for name in self.unknown_fields:
            problems.append(f"{name}: unknown field")
        check(self.schema_version == SCHEMA_VERSION, "schema_version",
              f"expected {SCHEMA_VERSION}, got {self.schema_version!r}")
        check(isinstance(self.seed, int) and not isinstance(self.seed, bool),
              "seed", f"must be an integer, got {self.seed!r}")
        check(self.workers is None or (isinstance(self.workers, int) and self.workers >= 1),
              "workers", f"must be a positive integer or null, got {self.workers!r}")

        check(isinstance(self.beam.k, int) and self.beam.k >= 1,
              "beam.k", f"must be an integer >= 1, got {self.beam.k!r}")
        check(isinstance(self.beam.max_len, int) and self.beam.max_len >= 1,
              "beam.max_len", f"must be an integer >= 1, got {self.beam.max_len!r}")

        check(isinstance(self.priority.mix_weight, (int, float))
              and 0 <= self.priority.mix_weight <= 1,
              "priority.mix_weight", f"must lie in [0, 1], got {self.priority.mix_weight!r}")
        check(isinstance(self.priority.prioritization_exponent, (int, float))
              and self.priority.prioritization_exponent >= 0,
              "priority.prioritization_exponent",
              f"must be >= 0, got {self.priority.prioritization_exponent!r}")
        check(self.priority.scheme in ("proportional", "rank"),
              "priority.scheme",
              f"must be 'proportional' or 'rank', got {self.priority.scheme!r}")

        check(isinstance(self.loop.iterations, int) and self.loop.iterations >= 1,
              "loop.iterations", f"must be an integer >= 1, got {self.loop.iterations!r}")
        check(isinstance(self.loop.minibatch_size, int) and self.loop.minibatch_size >= 1,
              "loop.minibatch_size",
              f"must be an integer >= 1, got {self.loop.minibatch_size!r}")
        check(isinstance(self.loop.update_weight, (int, float))
              and self.loop.update_weight > 0,
              "loop.update_weight", f"must be > 0, got {self.loop.update_weight!r}")
        check(self.loop.buffer_capacity is None
              or (isinstance(self.loop.buffer_capacity, int) and self.loop.buffer_capacity >= 1),
              "loop.buffer_capacity",
              f"must be a positive integer or null, got {self.loop.buffer_capacity!r}")

        check(self.runner.kind in ("toy", "subprocess"),
              "runner.kind", f"must be 'toy' or 'subprocess', got {self.runner.kind!r}")
        if self.runner.kind == "subprocess":
            check(isinstance(self.runner.command_template, str)
                  and "{file}" in (self.runner.command_template or ""),
                  "runner.command_template",
                  "subprocess runner needs a command template containing {file}")
        check(isinstance(self.runner.timeout_s, (int, float)) and self.runner.timeout_s > 0,
              "runner.timeout_s", f"must be > 0, got {self.runner.timeout_s!r}")
        check(isinstance(self.runner.output_cap_bytes, int)
              and self.runner.output_cap_bytes >= 1,
              "runner.output_cap_bytes",
              f"must be an integer >= 1, got {self.runner.output_cap_bytes!r}")

        check(isinstance(self.model.order, int) and self.model.order >= 1,
              "model.order", f"must be an integer >= 1, got {self.model.order!r}")
        check(isinstance(self.model.smoothing, (int, float)) and self.model.smoothing > 0,
              "model.smoothing", f"must be > 0, got {self.model.smoothing!r}")
        return problems

    # -- strict core objects ---------------------------------------------

    def beam_config(self) -> BeamConfig:
        return BeamConfig(k=self.beam.k, max_len=self.beam.max_len)

    def priority_config(self) -> PriorityConfig:
        return PriorityConfig(
            mix_weight=float(self.priority.mix_weight),
            prioritization_exponent=float(self.priority.prioritization_exponent),
            scheme=PriorityScheme(self.priority.scheme),
        )

    def loop_config(self) -> LoopConfig:
        return LoopConfig(
            iterations=self.loop.iterations,
            beam=self.beam_config(),
            priority=self.priority_config(),
            minibatch_size=self.loop.minibatch_size,
            update_weight=float(self.loop.update_weight),
            buffer_capacity=self.loop.buffer_capacity,
        )


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must contain a JSON object")
    return RunConfig.from_json_dict(data)


def default_config() -> RunConfig:
    return RunConfig()

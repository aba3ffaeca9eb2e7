"""Design-command and spatial-feature label types."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class CommandLabel(str, Enum):
    """The three decodable design commands. Definition order fixes tie-break priority."""

    INCREASE_TRANSPARENCY = "increase_transparency"
    MORE_LUXURIOUS_DECORATION = "more_luxurious_decoration"
    MORE_CLASSICAL_STYLE = "more_classical_style"


COMMANDS: tuple[CommandLabel, ...] = tuple(CommandLabel)

SPATIAL_FEATURES = ("transparency", "style", "decoration_density", "color_scheme")


@dataclass(frozen=True)
class FeatureLabels:
    """Signed scores for the four spatial features, each in [-5, 5].

    Positive directions: open/transparent, classical, luxurious/ornate,
    bright/colorful. A score's weight is |score| / 5, so integral scores
    give weights on a 0.2 grid.
    """

    transparency: float
    style: float
    decoration_density: float
    color_scheme: float

    def __post_init__(self):
        for name in SPATIAL_FEATURES:
            score = getattr(self, name)
            if not -5 <= score <= 5:
                raise ValueError(f"{name} score {score} outside [-5, 5]")

    def score(self, feature: str) -> float:
        if feature not in SPATIAL_FEATURES:
            raise ValueError(f"unknown spatial feature {feature!r}")
        return getattr(self, feature)

    def weight(self, feature: str) -> float:
        """Label weight in [0, 1]: |score| / 5."""
        return abs(self.score(feature)) / 5.0

    def direction(self, feature: str) -> int:
        """+1 or -1; a zero score carries weight 0 and defaults to +1."""
        return 1 if self.score(feature) >= 0 else -1

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in SPATIAL_FEATURES}

    @classmethod
    def from_dict(cls, scores: dict[str, float]) -> "FeatureLabels":
        unknown = set(scores) - set(SPATIAL_FEATURES)
        if unknown:
            raise ValueError(f"unknown spatial features: {sorted(unknown)}")
        return cls(**{name: scores[name] for name in SPATIAL_FEATURES})

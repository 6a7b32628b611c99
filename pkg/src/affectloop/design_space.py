"""Bijective indexing, sampling, and mutation over the lobby design space.

A design is six indices: envelope, layout, ceiling fixture, and three color
slots drawn from one palette. The mixed-radix index puts the envelope in the
most significant position.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

COLOR_SLOTS = ("walls", "floor", "furniture")
COMPONENTS = ("envelope", "layout", "fixture", "color0", "color1", "color2")


def _default_labels(prefix: str, n: int) -> tuple[str, ...]:
    return tuple(f"{prefix} {i:02d}" for i in range(n))


@dataclass(frozen=True)
class Catalog:
    """Option counts (and display labels) for each design category."""

    envelope_count: int = 31
    layout_count: int = 21
    fixture_count: int = 20
    palette_count: int = 14
    color_slots: int = 3
    envelope_labels: tuple[str, ...] = ()
    layout_labels: tuple[str, ...] = ()
    fixture_labels: tuple[str, ...] = ()
    palette_labels: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("envelope_count", "layout_count", "fixture_count",
                     "palette_count", "color_slots"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for cat, count in (("envelope", self.envelope_count),
                           ("layout", self.layout_count),
                           ("fixture", self.fixture_count),
                           ("palette", self.palette_count)):
            labels = getattr(self, f"{cat}_labels")
            if not labels:
                object.__setattr__(self, f"{cat}_labels",
                                   _default_labels(cat, count))
            elif len(labels) != count:
                raise ValueError(f"{cat}_labels must have {count} entries")

    @property
    def radices(self) -> tuple[int, ...]:
        return ((self.envelope_count, self.layout_count, self.fixture_count)
                + (self.palette_count,) * self.color_slots)

    @classmethod
    def from_json(cls, path: str) -> "Catalog":
        with open(path) as fh:
            doc = json.load(fh)
        kwargs = {}
        for cat in ("envelope", "layout", "fixture", "palette"):
            if f"{cat}s" in doc:
                labels = tuple(doc[f"{cat}s"])
                kwargs[f"{cat}_labels"] = labels
                kwargs[f"{cat}_count"] = len(labels)
        if "color_slots" in doc:
            kwargs["color_slots"] = int(doc["color_slots"])
        return cls(**kwargs)

    def to_json(self, path: str) -> None:
        doc = {
            "envelopes": list(self.envelope_labels),
            "layouts": list(self.layout_labels),
            "fixtures": list(self.fixture_labels),
            "palettes": list(self.palette_labels),
            "color_slots": self.color_slots,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")


DEFAULT_CATALOG = Catalog()


@dataclass(frozen=True)
class DesignConfig:
    """One point in the design space."""

    envelope: int = 0
    layout: int = 0
    fixture: int = 0
    colors: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "colors", tuple(int(c) for c in self.colors))
        fields = (self.envelope, self.layout, self.fixture) + self.colors
        if any(v < 0 for v in fields):
            raise ValueError("design indices must be nonnegative")

    def as_digits(self) -> tuple[int, ...]:
        return (self.envelope, self.layout, self.fixture) + self.colors


def validate_config(config: DesignConfig, catalog: Catalog = DEFAULT_CATALOG) -> None:
    for value, radix, name in zip(config.as_digits(), catalog.radices, COMPONENTS):
        if not 0 <= value < radix:
            raise ValueError(f"{name}={value} outside [0, {radix})")


def total_combinations(catalog: Catalog = DEFAULT_CATALOG) -> int:
    """Exact integer count of distinct designs."""
    total = 1
    for r in catalog.radices:
        total *= int(r)
    return total


def index_to_config(i: int, catalog: Catalog = DEFAULT_CATALOG) -> DesignConfig:
    """Mixed-radix decode; the envelope is the most significant digit."""
    i = int(i)
    total = total_combinations(catalog)
    if not 0 <= i < total:
        raise ValueError(f"index {i} outside [0, {total})")
    digits = []
    for radix in reversed(catalog.radices):
        i, d = divmod(i, radix)
        digits.append(d)
    digits.reverse()
    config = DesignConfig(digits[0], digits[1], digits[2], tuple(digits[3:]))
    validate_config(config, catalog)
    return config


def config_to_index(config: DesignConfig, catalog: Catalog = DEFAULT_CATALOG) -> int:
    validate_config(config, catalog)
    i = 0
    for value, radix in zip(config.as_digits(), catalog.radices):
        i = i * radix + value
    return i


def random_config(rng: np.random.Generator,
                  catalog: Catalog = DEFAULT_CATALOG) -> DesignConfig:
    return index_to_config(int(rng.integers(total_combinations(catalog))), catalog)


def mutate(config: DesignConfig, component: str, rng: np.random.Generator,
           catalog: Catalog = DEFAULT_CATALOG) -> DesignConfig:
    """Change exactly one field to a uniformly random different value."""
    validate_config(config, catalog)
    if component not in COMPONENTS:
        raise ValueError(f"unknown component {component!r}; expected one of {COMPONENTS}")
    digits = list(config.as_digits())
    pos = COMPONENTS.index(component)
    size = catalog.radices[pos]
    if size == 1:
        warnings.warn(f"component {component} has a single option; design unchanged")
        return config
    digits[pos] = (digits[pos] + 1 + int(rng.integers(size - 1))) % size
    return DesignConfig(digits[0], digits[1], digits[2], tuple(digits[3:]))


def describe(config: DesignConfig, catalog: Catalog = DEFAULT_CATALOG) -> dict:
    """Human-readable view of one design, with catalog labels."""
    validate_config(config, catalog)
    return {
        "index": config_to_index(config, catalog),
        "envelope": catalog.envelope_labels[config.envelope],
        "layout": catalog.layout_labels[config.layout],
        "fixture": catalog.fixture_labels[config.fixture],
        "colors": {slot: catalog.palette_labels[c]
                   for slot, c in zip(COLOR_SLOTS, config.colors)},
    }


def config_to_dict(config: DesignConfig) -> dict:
    return {"envelope": config.envelope, "layout": config.layout,
            "fixture": config.fixture, "colors": list(config.colors)}


def config_from_dict(d: dict) -> DesignConfig:
    return DesignConfig(int(d["envelope"]), int(d["layout"]), int(d["fixture"]),
                        tuple(int(c) for c in d["colors"]))

"""Light-cone audit of protocol schedules (one spatial dimension)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .errors import ValidationError

SPEED_OF_LIGHT = 2.998e8  # m/s
EARTH_MOON_DISTANCE = 3.84e8  # m

PARTIES = ("Alice", "Bob", "Source")
KINDS = ("setting_choice", "quantum_outcome", "relay_start", "pointer_readout")
QUANTUM_KINDS = ("setting_choice", "quantum_outcome")

STRICT = "strict"
RELAXED = "relaxed"
MODES = (STRICT, RELAXED)

RELAXED_PREMISE = (
    "after the quantum outcome is relayed, each Cavendish stage evolves under local classical "
    "equations of motion that distant operations do not influence (assumed, not checked)"
)


@dataclass(frozen=True)
class SpacetimeEvent:
    label: str
    party: str
    kind: str
    t: float
    position: float

    def __post_init__(self) -> None:
        if self.party not in PARTIES:
            raise ValidationError(f"event {self.label!r}: unknown party {self.party!r}")
        if self.kind not in KINDS:
            raise ValidationError(f"event {self.label!r}: unknown kind {self.kind!r}")
        if not (math.isfinite(self.t) and math.isfinite(self.position)):
            raise ValidationError(f"event {self.label!r}: coordinates must be finite")

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label, "party": self.party, "kind": self.kind, "t": self.t, "position": self.position}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SpacetimeEvent:
        try:
            return cls(str(d["label"]), str(d["party"]), str(d["kind"]), float(d["t"]), float(d["position"]))
        except KeyError as exc:
            raise ValidationError(f"event record missing field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class ViolatingPair:
    alice_event: str
    bob_event: str
    slack_m: float  # c |dt| - |dx|
    slack_s: float  # |dt| - |dx| / c

    def to_dict(self) -> dict[str, Any]:
        return {
            "alice_event": self.alice_event,
            "bob_event": self.bob_event,
            "slack_m": self.slack_m,
            "slack_s": self.slack_s,
        }


@dataclass(frozen=True)
class AuditVerdict:
    mode: str
    loophole_free: bool
    violating_pairs: tuple[ViolatingPair, ...] = ()
    premises: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.loophole_free == bool(self.violating_pairs):
            raise ValidationError("loophole_free must hold exactly when there are no violating pairs")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "loophole_free": self.loophole_free,
            "violating_pairs": [p.to_dict() for p in self.violating_pairs],
            "premises": list(self.premises),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AuditVerdict:
        return cls(
            mode=d["mode"],
            loophole_free=bool(d["loophole_free"]),
            violating_pairs=tuple(ViolatingPair(**p) for p in d["violating_pairs"]),
            premises=tuple(d.get("premises", ())),
        )


def required_separation(window: float, c: float = SPEED_OF_LIGHT) -> float:
    """Distance light covers during ``window`` seconds."""
    if not (math.isfinite(window) and window > 0):
        raise ValidationError(f"time window must be positive, got {window!r}")
    if not (math.isfinite(c) and c > 0):
        raise ValidationError(f"signal speed must be positive, got {c!r}")
    return c * window


def _check_ordering(events: Sequence[SpacetimeEvent]) -> None:
    rank = {k: i for i, k in enumerate(KINDS)}
    for party in ("Alice", "Bob"):
        evs = sorted((e for e in events if e.party == party), key=lambda e: rank[e.kind])
        for prev, nxt in zip(evs, evs[1:]):
            if nxt.t < prev.t:
                raise ValidationError(
                    f"{party}: {nxt.kind} event {nxt.label!r} at t={nxt.t:g} precedes "
                    f"{prev.kind} event {prev.label!r} at t={prev.t:g}"
                )


def audit_schedule(
    events: Iterable[SpacetimeEvent], mode: str = STRICT, c: float = SPEED_OF_LIGHT
) -> AuditVerdict:
    """Cross-check Alice's events against Bob's for spacelike separation.

    Strict mode checks every event kind. Relaxed mode checks only the setting
    choice and quantum outcome, and records the premise that licenses it.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    if not (math.isfinite(c) and c > 0):
        raise ValidationError(f"signal speed must be positive, got {c!r}")
    events = list(events)
    _check_ordering(events)
    kinds = KINDS if mode == STRICT else QUANTUM_KINDS
    alice = [e for e in events if e.party == "Alice" and e.kind in kinds]
    bob = [e for e in events if e.party == "Bob" and e.kind in kinds]
    bad = []
    for ea in alice:
        for eb in bob:
            dt = abs(ea.t - eb.t)
            dx = abs(ea.position - eb.position)
            if not dx > c * dt:
                bad.append(ViolatingPair(ea.label, eb.label, c * dt - dx, dt - dx / c))
    premises = (RELAXED_PREMISE,) if mode == RELAXED else ()
    return AuditVerdict(mode, not bad, tuple(bad), premises)


def protocol_schedule(
    separation: float,
    quantum_window: float,
    relay_window: float,
    start: float = 0.0,
) -> list[SpacetimeEvent]:
    """Symmetric two-party schedule with the parties at +/- separation / 2.

    Both parties choose at ``start``, see the quantum outcome after
    ``quantum_window``, start the relay immediately and read the pointer
    ``relay_window`` later.
    """
    if separation < 0 or quantum_window < 0 or relay_window < 0:
        raise ValidationError("separation and windows must be non-negative")
    events = []
    t_out = start + quantum_window
    times = {
        "setting_choice": start,
        "quantum_outcome": t_out,
        "relay_start": t_out,
        "pointer_readout": t_out + relay_window,
    }
    for party, x in (("Alice", -separation / 2), ("Bob", separation / 2)):
        for kind in KINDS:
            events.append(SpacetimeEvent(f"{party.lower()}_{kind}", party, kind, times[kind], x))
    return events


def schedule_from_records(records: Iterable[dict[str, Any]]) -> list[SpacetimeEvent]:
    return [SpacetimeEvent.from_dict(r) for r in records]

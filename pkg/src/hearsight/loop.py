"""The device cycle as a deterministic, single-owner state machine.

One cycle: a loud audio window is localized and classified, the wearer is
told what and where, the wearer turns and the camera fires, and the chosen
box is reported. Windows that arrive while a cycle is running are dropped.
Time is logical (whatever ``t`` the events carry), never wall-clock.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from hearsight.errors import DomainError

log = logging.getLogger(__name__)

ALERT_TEMPLATE = "There is {article} {object} in the {direction}"


class Phase(str, enum.Enum):
    IDLE = "Idle"
    GATED = "Gated"
    AWAIT_TURN = "AwaitTurn"
    AWAIT_IMAGE = "AwaitImage"
    DONE = "Done"


@dataclass(frozen=True)
class CycleState:
    phase: Phase = Phase.IDLE
    cycle_id: int = 0  # id of the running cycle, or of the last one when idle
    direction: str | None = None
    sound_class: str | None = None
    alert_time: float | None = None
    result: object = None


@dataclass(frozen=True)
class AudioWindow:
    clip: object
    t: float = 0.0


@dataclass(frozen=True)
class ImageFrame:
    """What the camera stage hands over: detector boxes and a localization map."""

    candidates: object  # fusion.CandidateSet
    loc_map: np.ndarray


@dataclass(frozen=True)
class Image:
    frame: ImageFrame | None = None
    t: float = 0.0
    path: str | None = None


@dataclass(frozen=True)
class Reset:
    t: float = 0.0


@dataclass(frozen=True)
class DisplayMessage:
    text: str
    kind: str  # "direction_alert" | "box_result" | "diagnostic"
    cycle_id: int


@dataclass
class StepOutput:
    messages: list = field(default_factory=list)
    requests: list = field(default_factory=list)  # e.g. "camera"
    transitions: list = field(default_factory=list)  # (cycle_id, from, to)
    dropped: bool = False
    level_db: float | None = None


@dataclass
class LoopConfig:
    gate_db: float = 60.0
    calibration_offset_db: float = 94.0
    timeout_s: float | None = 10.0


def rms_db(clip, calibration_offset_db: float = 94.0) -> float:
    """Level of the channel-mean signal: 20 log10(rms) + offset; -inf for silence."""
    x = np.asarray(clip.channels, dtype=float).mean(axis=0)
    if x.size == 0:
        raise DomainError("pipeline-loop", "rms_db", "empty clip")
    rms = math.sqrt(float(np.mean(x**2)))
    if rms == 0:
        return -math.inf
    return 20 * math.log10(rms) + calibration_offset_db


def alert_text(sound_class: str, direction: str) -> str:
    article = "an" if sound_class[:1].lower() in "aeiou" else "a"
    return ALERT_TEMPLATE.format(article=article, object=sound_class, direction=direction)


def box_text(result) -> str:
    b = result.chosen.box
    name = result.chosen.label or "object"
    return f"{name} at x={b.x} y={b.y} w={b.w} h={b.h} (IoU {result.iou:.3f})"


class Pipeline:
    """Binds the three model stages to the cycle state machine.

    ``locate(clip) -> direction``, ``classify(clip) -> class or None`` and
    ``fuse(frame, direction, sound_class) -> SelectionResult`` are plain
    callables so tests can substitute stubs.
    """

    def __init__(
        self,
        locate: Callable,
        classify: Callable,
        fuse: Callable,
        cfg: LoopConfig | None = None,
        load_frame: Callable | None = None,
    ):
        self.locate = locate
        self.classify = classify
        self.fuse = fuse
        self.cfg = cfg or LoopConfig()
        self.load_frame = load_frame

    def step(self, state: CycleState, event) -> tuple[CycleState, StepOutput]:
        out = StepOutput()

        def move(st: CycleState, phase: Phase, **kw) -> CycleState:
            out.transitions.append((st.cycle_id, st.phase.value, phase.value))
            return replace(st, phase=phase, **kw)

        def back_to_idle(st: CycleState) -> CycleState:
            return move(st, Phase.IDLE, direction=None, sound_class=None, alert_time=None, result=None)

        if isinstance(event, Reset):
            if state.phase is not Phase.IDLE:
                state = back_to_idle(state)
            return state, out

        t = getattr(event, "t", 0.0)
        if (
            state.phase is Phase.AWAIT_IMAGE
            and self.cfg.timeout_s is not None
            and state.alert_time is not None
            and t - state.alert_time > self.cfg.timeout_s
        ):
            log.info("cycle %d timed out waiting for an image", state.cycle_id)
            state = back_to_idle(state)

        if isinstance(event, AudioWindow):
            if state.phase is not Phase.IDLE:
                log.debug("dropping audio window at t=%s during cycle %d", t, state.cycle_id)
                out.dropped = True
                return state, out
            level = rms_db(event.clip, self.cfg.calibration_offset_db)
            out.level_db = level
            if not level >= self.cfg.gate_db:
                return state, out
            state = move(replace(state, cycle_id=state.cycle_id + 1), Phase.GATED)
            try:
                direction = self.locate(event.clip)
                sound_class = self.classify(event.clip)
            except DomainError as exc:
                out.messages.append(DisplayMessage(str(exc), "diagnostic", state.cycle_id))
                return back_to_idle(state), out
            if sound_class is None:
                return back_to_idle(state), out
            state = move(state, Phase.AWAIT_TURN, direction=direction, sound_class=sound_class, alert_time=t)
            out.messages.append(DisplayMessage(alert_text(sound_class, direction), "direction_alert", state.cycle_id))
            # the wearer turning is what triggers the camera
            state = move(state, Phase.AWAIT_IMAGE)
            out.requests.append("camera")
            return state, out

        if isinstance(event, Image):
            if state.phase is not Phase.AWAIT_IMAGE:
                out.dropped = True
                return state, out
            try:
                frame = event.frame
                if frame is None:
                    if self.load_frame is None:
                        raise DomainError("pipeline-loop", "step", "image event carries no frame")
                    frame = self.load_frame(event.path)
                result = self.fuse(frame, state.direction, state.sound_class)
            except DomainError as exc:
                out.messages.append(DisplayMessage(str(exc), "diagnostic", state.cycle_id))
                return back_to_idle(state), out
            state = move(state, Phase.DONE, result=result)
            out.messages.append(DisplayMessage(box_text(result), "box_result", state.cycle_id))
            return back_to_idle(state), out

        raise DomainError("pipeline-loop", "step", f"unknown event {event!r}")

    def run(self, events, state: CycleState | None = None):
        """Apply events in order; yields (event, state, output) per event."""
        state = state or CycleState()
        for ev in events:
            state, out = self.step(state, ev)
            yield ev, state, out


# -- scripted event files ---------------------------------------------------


def read_events(path: str | Path, load_clip: Callable) -> list:
    """JSON lines ``{"t", "type": "audio"|"image"|"reset", "path"}``; paths relative to the file."""
    path = Path(path)
    events = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            kind, t = d["type"], float(d.get("t", 0.0))
        except (ValueError, KeyError) as exc:
            raise DomainError("pipeline-loop", "read_events", f"{path}:{n}: {exc}") from exc
        ref = d.get("path")
        full = str((path.parent / ref).resolve()) if ref else None
        if kind == "audio":
            events.append(AudioWindow(load_clip(full), t))
        elif kind == "image":
            events.append(Image(None, t, full))
        elif kind == "reset":
            events.append(Reset(t))
        else:
            raise DomainError("pipeline-loop", "read_events", f"{path}:{n}: unknown event type {kind!r}")
    return events


def output_records(event, out: StepOutput) -> list[dict]:
    t = getattr(event, "t", 0.0)
    recs = [{"t": t, "type": "transition", "cycle_id": c, "from": a, "to": b} for c, a, b in out.transitions]
    recs += [{"t": t, "type": "message", "kind": m.kind, "text": m.text, "cycle_id": m.cycle_id} for m in out.messages]
    recs += [{"t": t, "type": "request", "request": r} for r in out.requests]
    if out.dropped:
        recs.append({"t": t, "type": "dropped", "event": type(event).__name__})
    return recs

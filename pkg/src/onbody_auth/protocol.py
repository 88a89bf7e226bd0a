"""Gateway state machine for the spoofing and deadlock mitigations.

The gateway asks a requester for a burst of empty packets and lets a PHY
verifier decide whether that burst was sent from the wearer's body. Time is
logical: events carry a timestamp ``t`` but no airtime is simulated.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .channel import (CONTROLLED_MOTIONS, EnvironmentClass, MotionClass, RssTrace,
                      gen_offbody_trace, gen_onbody_trace)
from .profile import SEGMENT_SECONDS, build_profile, decompose, segment
from .seeding import derive_seed, rng_for

GATEWAY = "gateway"


class Kind(str, enum.Enum):
    ASSOC_REQUEST = "AssocRequest"
    VERIFY_ACK = "VerifyAck"
    EMPTY_PACKET_BURST = "EmptyPacketBurst"
    ASSOC_ACCEPT = "AssocAccept"
    ASSOC_DENY = "AssocDeny"
    AUTH_REQUEST = "AuthRequest"
    DEVICE_DENIAL_CHALLENGE = "DeviceDenialChallenge"
    DROP_NOTICE = "DropNotice"
    DATA_FRAME = "DataFrame"


class State(str, enum.Enum):
    IDLE = "Idle"
    AWAITING_BURST = "AwaitingBurst"
    VERIFYING = "Verifying"
    ASSOCIATED = "Associated"
    DATA_TRANSFER = "DataTransfer"
    SUSPICION_CHALLENGE = "SuspicionChallenge"
    AWAITING_SUSPECT_BURST = "AwaitingSuspectBurst"


WAITING_STATES = (State.AWAITING_BURST, State.SUSPICION_CHALLENGE, State.AWAITING_SUSPECT_BURST)


@dataclass(frozen=True)
class Message:
    kind: Kind
    claimed: str
    actual: str
    t: float = 0.0
    trace: RssTrace | None = field(default=None, compare=False)
    to: str | None = None

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "claimed": self.claimed, "actual": self.actual}
        if self.to is not None:
            out["to"] = self.to
        return out


@dataclass(frozen=True)
class GatewayState:
    """FSM state plus the association table.

    ``peer`` is the claimed id of the handshake in progress and ``resume`` the
    state to fall back to when a suspicion challenge ends. ``since`` is the
    time the current waiting state was entered.
    """

    state: State = State.IDLE
    table: tuple[tuple[str, bool], ...] = ()
    peer: str | None = None
    resume: State | None = None
    since: float = 0.0

    def __post_init__(self):
        if self.state in (State.ASSOCIATED, State.DATA_TRANSFER) and not self.is_authenticated(self.peer):
            raise ValueError(f"{self.state.value} requires an authenticated table entry for {self.peer!r}")

    def associations(self) -> dict[str, bool]:
        return dict(self.table)

    def is_authenticated(self, device: str | None) -> bool:
        return device is not None and self.associations().get(device, False)

    def with_entry(self, device: str) -> tuple[tuple[str, bool], ...]:
        entries = self.associations()
        entries[device] = True
        return tuple(sorted(entries.items()))


@dataclass(frozen=True)
class Verdict:
    on_body: bool
    score: float


class Verifier(Protocol):
    def decide(self, trace: RssTrace) -> Verdict: ...


# ---------------------------------------------------------------- verifiers

class OracleVerifier:
    """Reads the ground-truth label of the burst."""

    def decide(self, trace: RssTrace) -> Verdict:
        return Verdict(bool(trace.y == 1), float(trace.y))


def high_scale_variance(trace: RssTrace) -> float:
    """Median over 5 s segments of the small-scale (> 15 Hz) variance."""
    return float(np.median([decompose(s)[2].var() for s in segment(trace)]))


@dataclass(frozen=True)
class ThresholdVerifier:
    """On-body when the small-scale variance stays at or below ``cutoff`` dB^2.

    Off-body links pick up fast multipath from the walking attacker, while
    the surface wave along the body varies slowly.
    """

    cutoff: float

    def decide(self, trace: RssTrace) -> Verdict:
        stat = high_scale_variance(trace)
        # squash to (0, 1) around the cutoff so the score is usable for ROC
        score = 1.0 / (1.0 + stat / self.cutoff)
        return Verdict(stat <= self.cutoff, score)


def calibrate_threshold(traces: Sequence[RssTrace]) -> ThresholdVerifier:
    """Cutoff minimising the error count on labelled traces (geometric midpoint)."""
    stats = np.array([high_scale_variance(t) for t in traces])
    y = np.array([t.y for t in traces])
    if not (y == 1).any() or not (y == 0).any():
        raise ValueError("calibration needs on-body and off-body traces")
    cands = np.sort(np.unique(stats))
    mids = np.sqrt(cands[:-1] * cands[1:]) if len(cands) > 1 else cands
    errors = [np.sum((stats <= c) != (y == 1)) for c in mids]
    return ThresholdVerifier(float(mids[int(np.argmin(errors))]))


@dataclass
class LearnedVerifier:
    """Profile -> normalise -> predictor, majority vote over ``k_segments``.

    A tied vote denies. The score is the mean on-body probability.
    """

    model: object
    normalizer: object
    k_segments: int = 1

    def decide(self, trace: RssTrace) -> Verdict:
        segs = segment(trace)[:self.k_segments]
        if len(segs) < self.k_segments:
            raise ValueError(f"burst holds {len(segs)} segments, verifier needs {self.k_segments}")
        X = self.normalizer.apply(np.stack([build_profile(s).features for s in segs]))
        probs = self.model.predict_proba(X)
        votes = int(np.sum(probs[:, 1] > probs[:, 0]))
        return Verdict(2 * votes > len(segs), float(probs[:, 1].mean()))


# ---------------------------------------------------------------- transitions

def _reply(kind: Kind, event: Message, to: str) -> Message:
    return Message(kind, GATEWAY, GATEWAY, event.t, to=to)


def expire(gw: GatewayState, now: float, timeout: float | None) -> GatewayState:
    """Leave a waiting state whose deadline passed; the association table is kept."""
    if timeout is None or gw.state not in WAITING_STATES or now - gw.since <= timeout:
        return gw
    if gw.state == State.AWAITING_BURST:
        return GatewayState(State.IDLE, gw.table)
    return GatewayState(gw.resume, gw.table, gw.peer)


def gateway_step(gw: GatewayState, event: Message, verifier: Verifier,
                 timeout: float | None = None):
    """One transition. Returns (new state, emitted messages, verdict or None).

    Events that make no sense in the current state leave it unchanged.
    """
    gw = expire(gw, event.t, timeout)
    s, k = gw.state, event.kind
    c = event.claimed

    if s == State.IDLE and k == Kind.ASSOC_REQUEST:
        return (GatewayState(State.AWAITING_BURST, gw.table, c, since=event.t),
                [_reply(Kind.VERIFY_ACK, event, c)], None)

    if s == State.AWAITING_BURST and k == Kind.EMPTY_PACKET_BURST and c == gw.peer:
        # Verifying is transient: the verifier runs synchronously inside this step
        verdict = verifier.decide(event.trace)
        if verdict.on_body:
            return (GatewayState(State.ASSOCIATED, gw.with_entry(c), c),
                    [_reply(Kind.ASSOC_ACCEPT, event, c)], verdict)
        return GatewayState(State.IDLE, gw.table), [_reply(Kind.ASSOC_DENY, event, c)], verdict

    if s in (State.ASSOCIATED, State.DATA_TRANSFER):
        if k == Kind.DATA_FRAME and c == gw.peer:
            return replace(gw, state=State.DATA_TRANSFER), [], None
        if k == Kind.AUTH_REQUEST and gw.is_authenticated(c):
            # suspicious: the entry stays until the claimed device confirms
            return replace(gw, state=State.SUSPICION_CHALLENGE, resume=s, since=event.t), [], None

    if s == State.SUSPICION_CHALLENGE and k == Kind.DEVICE_DENIAL_CHALLENGE and c == gw.peer:
        return (replace(gw, state=State.AWAITING_SUSPECT_BURST, since=event.t),
                [_reply(Kind.VERIFY_ACK, event, c)], None)

    if s == State.AWAITING_SUSPECT_BURST and k == Kind.EMPTY_PACKET_BURST and c == gw.peer:
        verdict = verifier.decide(event.trace)
        if verdict.on_body:
            # the second request really came from the body: accept it as a re-authentication
            return (GatewayState(State.ASSOCIATED, gw.with_entry(c), c),
                    [_reply(Kind.ASSOC_ACCEPT, event, c)], verdict)
        return (GatewayState(gw.resume, gw.table, c),
                [_reply(Kind.DROP_NOTICE, event, c)], verdict)

    return gw, [], None


# ---------------------------------------------------------------- scenarios

def is_attacker(device: str) -> bool:
    return device.startswith("attacker")


def parse_script(obj) -> list[dict]:
    """Validate a JSON script: a time-ordered list of {t, kind, claimed, actual}."""
    if not isinstance(obj, list):
        raise ValueError("scenario script must be a JSON list")
    events = []
    last = -math.inf
    for i, ev in enumerate(obj):
        if not isinstance(ev, dict):
            raise ValueError(f"event {i} is not an object")
        missing = {"t", "kind", "claimed", "actual"} - set(ev)
        if missing:
            raise ValueError(f"event {i} lacks {sorted(missing)}")
        try:
            Kind(ev["kind"])
        except ValueError:
            raise ValueError(f"event {i} has unknown kind {ev['kind']!r}") from None
        t = ev["t"]
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
            raise ValueError(f"event {i} has invalid time {t!r}")
        if t < last:
            raise ValueError(f"event {i} at t={t} is earlier than the previous event")
        if not isinstance(ev["claimed"], str) or not isinstance(ev["actual"], str):
            raise ValueError(f"event {i} sender ids must be strings")
        last = t
        events.append(ev)
    return events


def burst_trace(ev: dict, index: int, seed: int, k_segments: int = 1) -> RssTrace:
    """Burst recorded at the gateway for event ``index``.

    The sender is on-body unless its actual id starts with "attacker"; an
    event may override that with ``"onbody": true/false``. Motion and
    environment come from the event when given, otherwise from the seed.
    """
    on_body = ev.get("onbody", not is_attacker(ev["actual"]))
    rng = rng_for(seed, "burst-labels", index)
    z = MotionClass.parse(ev["motion"]) if "motion" in ev else \
        CONTROLLED_MOTIONS[int(rng.integers(len(CONTROLLED_MOTIONS)))]
    v = EnvironmentClass.parse(ev["environment"]) if "environment" in ev else \
        EnvironmentClass(int(rng.integers(len(EnvironmentClass))))
    sub = derive_seed(seed, "burst", index) >> 1
    duration = SEGMENT_SECONDS * k_segments
    if on_body:
        return gen_onbody_trace(z, v, duration, sub)
    return gen_offbody_trace(v, duration=duration, seed=sub, z=z)


@dataclass
class Transcript:
    entries: list[dict]
    final: GatewayState

    def messages(self) -> list[str]:
        """Flattened message kinds: each input event followed by its emissions."""
        out = []
        for e in self.entries:
            out.append(e["event"]["kind"])
            out.extend(m["kind"] for m in e["emitted"])
        return out

    def emitted(self) -> list[str]:
        return [m["kind"] for e in self.entries for m in e["emitted"]]

    def states(self) -> list[str]:
        return [e["state_after"] for e in self.entries]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.entries)


def run_scenario(script, verifier: Verifier, seed: int = 0, timeout: float | None = None,
                 k_segments: int = 1) -> Transcript:
    events = parse_script(script)
    gw = GatewayState()
    entries = []
    for i, ev in enumerate(events):
        kind = Kind(ev["kind"])
        trace = burst_trace(ev, i, seed, k_segments) if kind == Kind.EMPTY_PACKET_BURST else None
        msg = Message(kind, ev["claimed"], ev["actual"], float(ev["t"]), trace)
        before = gw
        gw, emitted, verdict = gateway_step(gw, msg, verifier, timeout)
        entry = {
            "t": float(ev["t"]),
            "state_before": before.state.value,
            "event": msg.to_json(),
            "state_after": gw.state.value,
            "emitted": [m.to_json() for m in emitted],
            "table": dict(gw.table),
        }
        if verdict is not None:
            entry["verdict"] = {"on_body": verdict.on_body, "score": verdict.score}
        entries.append(entry)
    return Transcript(entries, gw)


def load_script(path: Path) -> list[dict]:
    return parse_script(json.loads(Path(path).read_text()))


def write_transcript(transcript: Transcript, path: Path):
    Path(path).write_text(transcript.to_jsonl())


# ---------------------------------------------------------------- script builders

def _ev(t, kind: Kind, claimed: str, actual: str, **extra) -> dict:
    return {"t": t, "kind": kind.value, "claimed": claimed, "actual": actual, **extra}


def legitimate_script(device: str = "device-1", **burst) -> list[dict]:
    return [_ev(0.0, Kind.ASSOC_REQUEST, device, device),
            _ev(1.0, Kind.EMPTY_PACKET_BURST, device, device, **burst)]


def spoofing_script(victim: str = "device-1", attacker: str = "attacker-1", **burst) -> list[dict]:
    return [_ev(0.0, Kind.ASSOC_REQUEST, victim, attacker),
            _ev(1.0, Kind.EMPTY_PACKET_BURST, victim, attacker, **burst)]


def deadlock_script(device: str = "device-1", attacker: str = "attacker-1", **burst) -> list[dict]:
    return legitimate_script(device) + [
        _ev(2.0, Kind.DATA_FRAME, device, device),
        _ev(3.0, Kind.DATA_FRAME, device, device),
        _ev(4.0, Kind.AUTH_REQUEST, device, attacker),
        _ev(5.0, Kind.DEVICE_DENIAL_CHALLENGE, device, device),
        _ev(6.0, Kind.EMPTY_PACKET_BURST, device, attacker, **burst),
        _ev(7.0, Kind.DATA_FRAME, device, device),
    ]


def seeded_spoofing_scripts(n: int, seed: int) -> list[list[dict]]:
    """Spoofing attempts with varied ids, environments, wearer motions and
    junk events (frames from the attacker that the gateway should ignore)."""
    scripts = []
    for i in range(n):
        rng = rng_for(seed, "spoof-script", i)
        victim, attacker = f"device-{int(rng.integers(100))}", f"attacker-{int(rng.integers(100))}"
        burst = {"environment": EnvironmentClass(int(rng.integers(5))).label,
                 "motion": CONTROLLED_MOTIONS[int(rng.integers(5))].label}
        script = spoofing_script(victim, attacker, **burst)
        if rng.random() < 0.5:
            script.insert(1, _ev(0.5, Kind.DATA_FRAME, victim, attacker))
        if rng.random() < 0.5:
            script.insert(1, _ev(0.5, Kind.DEVICE_DENIAL_CHALLENGE, victim, attacker))
        scripts.append(script)
    return scripts

"""Online decision stage: per-pair case probabilities to per-room occupancy.

Each transmission pair covers two rooms. Its 4-case probabilities merge into
binary [empty, presence] per room: for the RX room, cases 1 and 2 are empty;
for the shared TX room, cases 1 and 3 are empty. TX-room probabilities from
all pairs are averaged (the multi-room vote) before the final argmax. An
exact 0.5/0.5 tie decides occupied: for a security application the safe
failure mode is a false alarm, not a missed presence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError

PROB_TOL = 1e-6


@dataclass(frozen=True)
class PairPrediction:
    """4-case probabilities [o1, o2, o3, o4] of one pair at one window."""

    pair_id: int
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (4,):
            raise StructuralError(f"pair prediction needs 4 probabilities, got {p.shape}")
        if (p < -PROB_TOL).any() or abs(p.sum() - 1.0) > PROB_TOL:
            raise StructuralError(f"pair probabilities not a simplex: {p}")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class RoomProbability:
    """Binary [empty, presence] probabilities for one room."""

    room_id: int
    pv: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pv, dtype=np.float64)
        if p.shape != (2,) or abs(p.sum() - 1.0) > PROB_TOL:
            raise StructuralError(f"room probabilities not a binary simplex: {p}")
        object.__setattr__(self, "pv", p)


@dataclass(frozen=True)
class RoomDecision:
    room_id: int
    occupied: bool
    confidence: float


def merge_rx(pred: PairPrediction, room_id: int = 0) -> RoomProbability:
    """RX room: cases 1 and 2 are empty, cases 3 and 4 are presence."""
    p = pred.probs
    return RoomProbability(room_id=room_id, pv=np.array([p[0] + p[1], p[2] + p[3]]))


def merge_tx(pred: PairPrediction, room_id: int = 0) -> RoomProbability:
    """TX room: cases 1 and 3 are empty, cases 2 and 4 are presence."""
    p = pred.probs
    return RoomProbability(room_id=room_id, pv=np.array([p[0] + p[2], p[1] + p[3]]))


def vote_tx(merged: list[RoomProbability]) -> RoomProbability:
    """Average the TX-room probabilities over all transmission pairs."""
    if not merged:
        raise StructuralError("vote needs at least one pair probability")
    room_id = merged[0].room_id
    stacked = np.stack([m.pv for m in merged])
    return RoomProbability(room_id=room_id, pv=stacked.mean(axis=0))


def decide(pv: RoomProbability) -> RoomDecision:
    """Argmax decision; an exact tie counts as occupied."""
    occupied = bool(pv.pv[1] >= pv.pv[0])
    return RoomDecision(room_id=pv.room_id, occupied=occupied,
                        confidence=float(pv.pv.max()))


def predict_rooms(preds: list[PairPrediction],
                  topology: dict[int, tuple[int, int]]) -> list[RoomDecision]:
    """All room decisions for one window from every pair's prediction.

    The topology maps pair_id -> (tx_room, rx_room) and must be a star:
    one shared TX room and a distinct RX room per pair.
    """
    if not preds:
        raise StructuralError("no pair predictions")
    tx_rooms = {topology[p.pair_id][0] for p in preds}
    if len(tx_rooms) != 1:
        raise StructuralError(f"all pairs must share one TX room, got {sorted(tx_rooms)}")
    rx_rooms = [topology[p.pair_id][1] for p in preds]
    if len(set(rx_rooms)) != len(rx_rooms):
        raise StructuralError(f"each RX room must appear in exactly one pair: {rx_rooms}")
    tx_room = tx_rooms.pop()
    if tx_room in rx_rooms:
        raise StructuralError(f"TX room {tx_room} cannot also be an RX room")

    decisions = []
    for p in preds:
        decisions.append(decide(merge_rx(p, room_id=topology[p.pair_id][1])))
    voted = vote_tx([merge_tx(p, room_id=tx_room) for p in preds])
    decisions.append(decide(voted))
    return sorted(decisions, key=lambda d: d.room_id)


def smooth_decisions(flags: list[bool], window: int) -> list[bool]:
    """Optional majority vote over the trailing `window` decisions (off by default)."""
    if window <= 1:
        return list(flags)
    out = []
    for i in range(len(flags)):
        recent = flags[max(0, i - window + 1) : i + 1]
        out.append(sum(recent) * 2 >= len(recent))
    return out

"""Seeded synthetic CSI generator.

A qualitative surrogate for through-the-wall WiFi measurements: it reproduces
the variance orderings and shape-fluctuation regimes observed on hardware,
not radio physics. Accuracy numbers on this data validate the pipeline
mechanics, not any real-world deployment.

Encoded observations, in order of increasing amplitude variance:
    empty room < person in the TX room (wall-attenuated) < person at NLoS in
    an open space < person at NLoS in a reflective space < person blocking
    the LoS path.
A walker blocking the LoS path modulates all subcarriers, with extra gain
while crossing mid-path; NLoS walkers modulate a contiguous subcarrier band
(wide when multipath is rich, narrow in open space). A present person also
adds a static deformation to the amplitude shape (multipath changes), which
is what the condition path of the network keys on.

Each room-occupancy combination is cut into segments; every segment draws its
own walker trajectory, band profile, and deformation. Walkers pause at random
spots, so motion arrives in bursts within a window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .csi import CsiFrame, StreamHeader
from .dataio import Dataset, Segment
from .errors import ConfigError, StructuralError

SCENARIOS = ("two-room", "three-room")
REGIMES = ("los", "nlos_rich", "nlos_open")

CASE_TABLE = {(0, 0): 1, (1, 0): 2, (0, 1): 3, (1, 1): 4}  # (tx, rx) -> case


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    q: int = 56
    k: int = 4
    pairs: int = 1
    ticks_per_segment: int = 100
    sigma_empty: float = 0.015
    sigma_tx: float = 0.12
    sigma_rx_nlos_open: float = 0.22
    sigma_rx_nlos_rich: float = 0.32
    sigma_rx_los: float = 0.62
    wall_attenuation: tuple[float, ...] = (1.0, 0.55)
    static_shift: float = 0.12
    sample_rate: float = 10.0

    def __post_init__(self):
        if self.q < 2 or self.k < 1 or self.pairs < 1 or self.ticks_per_segment < 2:
            raise ConfigError(f"invalid generator geometry: {self}")
        order = (self.sigma_empty, self.sigma_tx, self.sigma_rx_nlos_open,
                 self.sigma_rx_nlos_rich, self.sigma_rx_los)
        if not all(a < b for a, b in zip(order, order[1:])):
            raise ConfigError(
                "variance scales must be strictly ordered: "
                f"empty < tx < rx_nlos_open < rx_nlos_rich < rx_los, got {order}"
            )
        if not self.wall_attenuation or min(self.wall_attenuation) <= 0:
            raise ConfigError(f"wall attenuation factors must be positive: {self}")

    def rx_sigma(self, regime: str) -> float:
        return {"los": self.sigma_rx_los, "nlos_rich": self.sigma_rx_nlos_rich,
                "nlos_open": self.sigma_rx_nlos_open}[regime]

    def attenuation_of(self, pair_id: int) -> float:
        return self.wall_attenuation[(pair_id - 1) % len(self.wall_attenuation)]


@dataclass(frozen=True)
class EnvironmentProfile:
    """Per-pair static channel: smooth positive baseline curves plus noise."""

    pair_id: int
    baseline: np.ndarray  # (K, Q), strictly positive
    noise_sigma: float
    wall_attenuation: float
    richness: str  # 'rich' | 'scarce'

    def __post_init__(self):
        if self.baseline.min() <= 0:
            raise StructuralError("environment baseline must be strictly positive")
        if self.richness not in ("rich", "scarce"):
            raise StructuralError(f"unknown richness {self.richness!r}")


@dataclass(frozen=True)
class MotionModel:
    """Occupancy case plus the RX walker's position regime."""

    case: int
    regime: str = "nlos_rich"

    def __post_init__(self):
        if self.case not in (1, 2, 3, 4):
            raise StructuralError(f"case must be 1..4, got {self.case}")
        if self.regime not in REGIMES:
            raise StructuralError(f"regime must be one of {REGIMES}, got {self.regime!r}")


def make_environment(cfg: GenConfig, pair_id: int, rng: np.random.Generator) -> EnvironmentProfile:
    """Baseline = 1 + a few random-phase sinusoids per antenna pair."""
    q_idx = np.arange(cfg.q)
    baseline = np.empty((cfg.k, cfg.q))
    for k in range(cfg.k):
        n_waves = int(rng.integers(3, 7))
        curve = np.ones(cfg.q)
        for _ in range(n_waves):
            amp = rng.uniform(0.04, 0.11)
            freq = rng.uniform(0.5, 3.5)
            phase = rng.uniform(0, 2 * np.pi)
            curve = curve + amp * np.sin(2 * np.pi * freq * q_idx / cfg.q + phase)
        baseline[k] = curve
    richness = "rich" if pair_id % 2 == 1 else "scarce"
    return EnvironmentProfile(pair_id=pair_id, baseline=baseline,
                              noise_sigma=cfg.sigma_empty,
                              wall_attenuation=cfg.attenuation_of(pair_id),
                              richness=richness)


def _band_profile(cfg: GenConfig, rng: np.random.Generator, width_frac: tuple[float, float],
                  full_band: bool, band: str = "any") -> np.ndarray:
    """(K, Q) smooth positive envelope on a contiguous band, per-antenna gains.

    `band` confines where the bump may sit: through-wall (TX-room) effects are
    modeled as frequency selective toward the 'low' subcarriers, while in-room
    scatterer geometry puts RX-room effects toward the 'high' ones. The split
    gives each room a stable spectral territory, which is what makes the
    4-case problem learnable from a single transmission pair.
    """
    q_idx = np.arange(cfg.q)
    if full_band:
        wobble = rng.uniform(0.3, 0.6)
        phase = rng.uniform(0, 2 * np.pi)
        base = 1.0 + wobble * np.sin(2 * np.pi * q_idx / cfg.q + phase)
    else:
        width = int(round(rng.uniform(*width_frac) * cfg.q))
        width = max(3, min(width, cfg.q))
        lo, hi = 0, cfg.q - width + 1
        if band == "low":
            hi = max(1, int(0.45 * cfg.q) - width + 1)
        elif band == "high":
            lo = min(int(0.40 * cfg.q), cfg.q - width)
        start = int(rng.integers(lo, max(lo + 1, hi)))
        base = np.zeros(cfg.q)
        x = (q_idx[start : start + width] - start) / max(width - 1, 1)
        base[start : start + width] = 0.5 * (1.0 - np.cos(2 * np.pi * x))  # raised cosine
    gains = rng.uniform(0.7, 1.3, size=cfg.k)
    return gains[:, None] * base[None, :]


def _walker(ticks: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Reflected random-walk position in [0, 1] with random pauses.

    Returns (position, moving flag). Pauses freeze the position so motion
    arrives in bursts.
    """
    pos = np.empty(ticks)
    moving = np.ones(ticks, dtype=bool)
    x = rng.uniform(0.1, 0.9)
    pause_left = 0
    for t in range(ticks):
        if pause_left > 0:
            pause_left -= 1
            moving[t] = False
        else:
            if rng.random() < 0.03:
                pause_left = int(rng.integers(5, 26))
                moving[t] = False
            else:
                x += rng.normal(scale=0.05)
                if x < 0.0:
                    x = -x
                if x > 1.0:
                    x = 2.0 - x
        pos[t] = x
    return pos, moving


TX_DRIVER_RHO = 0.97  # through-wall fading is slower than in-room fading


def _motion_driver(moving: np.ndarray, rng: np.random.Generator, rho: float = 0.88) -> np.ndarray:
    """AR(1) modulation signal, excited only while the walker moves."""
    ticks = len(moving)
    noise = rng.normal(size=ticks)
    v = np.empty(ticks)
    state = 0.0
    excite = np.sqrt(1.0 - rho * rho)
    for t in range(ticks):
        state = rho * state + (excite * noise[t] if moving[t] else 0.0)
        v[t] = state
    return np.clip(v, -2.0, 2.0)


def _occupant_effect(cfg: GenConfig, env: EnvironmentProfile, regime: str, scale: float,
                     ticks: int, rng: np.random.Generator) -> np.ndarray:
    """(T, K, Q) additive effect of one person: motion modulation + deformation."""
    pos, moving = _walker(ticks, rng)
    v = _motion_driver(moving, rng)
    full_band = regime == "los"
    widths = {"los": (1.0, 1.0), "nlos_rich": (0.45, 0.70),
              "nlos_open": (0.15, 0.30), "tx": (0.30, 0.50)}[regime]
    profile = _band_profile(cfg, rng, widths, full_band, band="high")
    if env.richness == "scarce" and not full_band:
        profile = profile * 0.75  # scarce multipath carries weaker reflections
    gain = np.ones(ticks)
    if full_band:
        gain = np.where(np.abs(pos - 0.5) < 0.12, 2.0, 1.0)  # crossing the direct path
    defo = cfg.static_shift * _band_profile(cfg, rng, (0.25, 0.55), False, band="high")
    modulation = (scale * gain * v)[:, None, None] * profile[None, :, :]
    return modulation + defo[None, :, :]


def segment_amplitudes(cfg: GenConfig, env: EnvironmentProfile, motion: MotionModel,
                       ticks: int, rng: np.random.Generator,
                       tx_rng: np.random.Generator | None = None) -> np.ndarray:
    """(T, K, Q) amplitudes for one labeled segment of one pair.

    The TX-room walker consumes `tx_rng` when given (so one shared person can
    drive several pairs while band profiles stay pair-specific).
    """
    amps = np.broadcast_to(env.baseline, (ticks, cfg.k, cfg.q)).copy()
    tx_present = motion.case in (2, 4)
    rx_present = motion.case in (3, 4)
    if tx_present:
        walk_rng = tx_rng if tx_rng is not None else rng
        # walker trajectory from the shared stream, channel coupling from the pair's
        pos, moving = _walker(ticks, walk_rng)
        v = _motion_driver(moving, walk_rng, rho=TX_DRIVER_RHO)
        profile = _band_profile(cfg, rng, (0.22, 0.38), False, band="low")
        if env.richness == "scarce":
            profile = profile * 0.75
        defo = cfg.static_shift * env.wall_attenuation * _band_profile(
            cfg, rng, (0.25, 0.55), False, band="low")
        scale = cfg.sigma_tx * env.wall_attenuation
        amps += (scale * v)[:, None, None] * profile[None, :, :] + defo[None, :, :]
    if rx_present:
        amps += _occupant_effect(cfg, env, motion.regime, cfg.rx_sigma(motion.regime),
                                 ticks, rng)
    amps += rng.normal(scale=env.noise_sigma, size=amps.shape)
    return np.maximum(amps, 0.02 * env.baseline.min())


def gen_stream(env: EnvironmentProfile, motion: MotionModel, ticks: int, seed: int,
               cfg: GenConfig | None = None) -> tuple[list[CsiFrame], int]:
    """One labeled segment as complex CsiFrames (random phase; it is discarded
    downstream). Bitwise deterministic under (env, motion, ticks, seed)."""
    cfg = cfg if cfg is not None else GenConfig()
    rng = np.random.default_rng(seed)
    amps = segment_amplitudes(cfg, env, motion, ticks, rng)  # (T, K, Q)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=amps.shape)
    values = amps * np.exp(1j * phases)
    frames = [CsiFrame(pair_id=env.pair_id, tick=t, values=values[t].T)  # (Q, K)
              for t in range(ticks)]
    return frames, motion.case


# ---------------------------------------------------------------------------
# dataset assembly


def _segment_lengths(total: int, per_segment: int) -> list[int]:
    """Cut `total` ticks into segments of ~per_segment; the sum is exact."""
    if total < 2:
        raise ConfigError(f"need at least 2 ticks per case, got {total}")
    lengths = []
    left = total
    while left > 0:
        take = min(per_segment, left)
        if 0 < left - take < 10:  # avoid a uselessly short trailing segment
            take = left
        lengths.append(take)
        left -= take
    return lengths


def _combos(scenario: str) -> list[tuple[int, ...]]:
    if scenario == "two-room":
        return [(0, 0), (1, 0), (0, 1), (1, 1)]
    rooms = [(o1, o2, o3) for o1 in (0, 1) for o2 in (0, 1) for o3 in (0, 1)]
    return rooms


def pair_case(combo: tuple[int, ...], pair_id: int) -> int:
    """Project a room-occupancy tuple onto one pair's 4-case label."""
    tx = combo[0]
    rx = combo[pair_id]
    return CASE_TABLE[(tx, rx)]


def pairs_for(scenario: str) -> int:
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    return 1 if scenario == "two-room" else 2


def build_split(scenario: str, ticks_per_case: int, cfg: GenConfig,
                envs: list[EnvironmentProfile], seed_seq: np.random.SeedSequence,
                ) -> tuple[Dataset, list[tuple[str, object]]]:
    """One split (train or test): balanced segments over all occupancy combos."""
    n_pairs = pairs_for(scenario)
    combos = _combos(scenario)
    lengths = _segment_lengths(ticks_per_case, cfg.ticks_per_segment)
    # interleave combos round-robin so cases alternate along the tick axis
    schedule: list[tuple[tuple[int, ...], int, str]] = []
    for si, seg_len in enumerate(lengths):
        regime = REGIMES[si % len(REGIMES)]
        for combo in combos:
            schedule.append((combo, seg_len, regime))

    total_ticks = sum(seg_len for _, seg_len, _ in schedule)
    amps = np.empty((total_ticks, n_pairs, cfg.k, cfg.q))
    segments: list[Segment] = []
    manifest: list[tuple[str, object]] = []
    children = iter(seed_seq.spawn(len(schedule) * (n_pairs + 1)))

    tick = 0
    for combo, seg_len, regime in schedule:
        tx_seed = next(children)
        for pair_id in range(1, n_pairs + 1):
            pair_seed = next(children)
            case = pair_case(combo, pair_id)
            motion = MotionModel(case=case, regime=regime)
            rng = np.random.default_rng(pair_seed)
            tx_rng = np.random.default_rng(tx_seed)  # same walker for every pair
            seg = segment_amplitudes(cfg, envs[pair_id - 1], motion, seg_len, rng,
                                     tx_rng=tx_rng)
            amps[tick : tick + seg_len, pair_id - 1] = seg
            segments.append(Segment(tick, tick + seg_len, pair_id, case))
        manifest.append(("segment",
                         f"{tick}:{tick + seg_len} combo {''.join(map(str, combo))} regime {regime}"))
        tick += seg_len

    header = StreamHeader(q=cfg.q, k=cfg.k, p=n_pairs, sample_rate=cfg.sample_rate,
                          n_ticks=total_ticks)
    counts: dict[int, int] = {}
    for s in segments:
        if s.pair_id == 1:
            counts[s.case] = counts.get(s.case, 0) + (s.end - s.start)
    for case in sorted(counts):
        manifest.append((f"pair1_ticks_case_{case}", counts[case]))
    return Dataset(header=header, amplitudes=amps, segments=segments), manifest


def build_datasets(scenario: str, train_ticks: int, test_ticks: int, cfg: GenConfig,
                   ) -> tuple[Dataset, Dataset, list[tuple[str, object]]]:
    """Train and test datasets (disjoint by segment) plus manifest entries.

    `train_ticks` / `test_ticks` are ticks per occupancy combination, matching
    the collected-packets unit used for dataset sizing.
    """
    n_pairs = pairs_for(scenario)
    root = np.random.SeedSequence(cfg.seed)
    env_seq, train_seq, test_seq = root.spawn(3)
    env_children = env_seq.spawn(n_pairs)
    envs = [make_environment(cfg, pid, np.random.default_rng(env_children[pid - 1]))
            for pid in range(1, n_pairs + 1)]

    train_ds, train_manifest = build_split(scenario, train_ticks, cfg, envs, train_seq)
    test_ds, test_manifest = build_split(scenario, test_ticks, cfg, envs, test_seq)

    manifest: list[tuple[str, object]] = [
        ("format_version", 1),
        ("scenario", scenario),
        ("seed", cfg.seed),
        ("q", cfg.q), ("k", cfg.k), ("pairs", n_pairs),
        ("sample_rate", cfg.sample_rate),
        ("ticks_per_segment", cfg.ticks_per_segment),
        ("train_ticks_per_case", train_ticks),
        ("test_ticks_per_case", test_ticks),
        ("sigma_order", f"{cfg.sigma_empty} < {cfg.sigma_tx} < {cfg.sigma_rx_nlos_open}"
                        f" < {cfg.sigma_rx_nlos_rich} < {cfg.sigma_rx_los}"),
    ]
    manifest += [("train_" + k, v) for k, v in train_manifest]
    manifest += [("test_" + k, v) for k, v in test_manifest]
    return train_ds, test_ds, manifest

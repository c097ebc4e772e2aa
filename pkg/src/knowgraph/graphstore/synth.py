"""Synthetic authentication traffic with planted communities and an attack.

Benign events pick both endpoints inside a planted community; a small
cross-community fraction grows in late windows (controlled by
``shift_strength``) to create an inductive distribution gap.  Malicious
events form a lateral-movement chain: a compromised host fans out to hosts
in other communities, mostly over NTLM, starting halfway through the trace
so a clean pre-attack training span exists.  Every draw comes from streams
derived from the config seed, so output is byte-identical across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from knowgraph.graphstore.events import AuthEvent, RedteamEvent

# Fixed schedule fractions of the window span.
ATTACK_FRACTION = 0.5  # first malicious event at this point
DRIFT_FRACTION = 0.75  # cross-community mixing starts ramping here

BASE_CROSS_RATE = 0.05
PROPENSITY_SPREAD = 0.7  # per-community NTLM propensity range around the base rate
POPULARITY_EXPONENT = 2.0  # hub-heavy endpoint selection, Zipf-like
ATTACKER_USER = "ATTACKER@DOM1"


@dataclass(frozen=True)
class SynthConfig:
    n_computers: int = 500
    n_windows: int = 100
    window_secs: int = 1800
    benign_rate: float = 2000.0  # events per window
    malicious_rate: float = 0.25  # events per window, concentrated post-attack
    p_ntlm_given_malicious: float = 0.9
    p_ntlm_given_benign: float = 0.3
    community_count: int = 10
    shift_strength: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.n_computers < 2:
            raise ValueError("n_computers must be >= 2")
        if self.n_windows < 1 or self.window_secs < 1:
            raise ValueError("n_windows and window_secs must be positive")
        if self.benign_rate < 0 or self.malicious_rate < 0 or self.shift_strength < 0:
            raise ValueError("rates and shift_strength must be >= 0")
        for p in (self.p_ntlm_given_malicious, self.p_ntlm_given_benign):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"probability {p} outside [0, 1]")
        if not (1 <= self.community_count <= self.n_computers):
            raise ValueError("community_count must be in [1, n_computers]")


def _communities(cfg: SynthConfig) -> np.ndarray:
    # Contiguous equal-size blocks.
    return (np.arange(cfg.n_computers) * cfg.community_count) // cfg.n_computers


def _ntlm_propensity(cfg: SynthConfig) -> np.ndarray:
    m = cfg.community_count
    if m == 1:
        return np.array([cfg.p_ntlm_given_benign])
    centered = np.arange(m) / (m - 1) - 0.5
    return np.clip(cfg.p_ntlm_given_benign + PROPENSITY_SPREAD * centered, 0.02, 0.98)


def _cross_rate(cfg: SynthConfig, window: int) -> float:
    if cfg.community_count == 1:
        return 0.0
    drift_start = DRIFT_FRACTION * cfg.n_windows
    span = max(cfg.n_windows - drift_start, 1.0)
    ramp = max(0.0, (window - drift_start) / span)
    return float(np.clip(BASE_CROSS_RATE + cfg.shift_strength * ramp, 0.0, 0.9))


def _computer_name(i: int) -> str:
    return f"C{i:05d}"


def synth_generate(cfg: SynthConfig) -> tuple[list[AuthEvent], list[RedteamEvent]]:
    """Generate (auth events, red-team records), both sorted by time."""
    ss = np.random.SeedSequence(cfg.seed)
    rng_benign, rng_mal = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2))
    comm = _communities(cfg)
    members = [np.flatnonzero(comm == c) for c in range(cfg.community_count)]
    propensity = _ntlm_propensity(cfg)
    # Hub-heavy traffic: per-community rank determines endpoint popularity.
    rank_in_comm = np.concatenate([np.arange(m.size) for m in members])
    popularity = 1.0 / (1.0 + rank_in_comm[np.argsort(np.concatenate(members))]) ** POPULARITY_EXPONENT
    member_weights = [popularity[m] / popularity[m].sum() for m in members]

    events: list[AuthEvent] = []
    for w in range(cfg.n_windows):
        n_ev = int(rng_benign.poisson(cfg.benign_rate))
        if n_ev == 0:
            continue
        p_cross = _cross_rate(cfg, w)
        src_comm = rng_benign.integers(cfg.community_count, size=n_ev)
        src = np.array(
            [int(rng_benign.choice(members[c], p=member_weights[c])) for c in src_comm]
        )
        cross = rng_benign.random(n_ev) < p_cross
        dst = np.empty(n_ev, dtype=np.int64)
        for i in range(n_ev):
            home = comm[src[i]]
            if cross[i]:
                other = rng_benign.integers(cfg.community_count - 1)
                if other >= home:
                    other += 1
                dst[i] = rng_benign.choice(members[other], p=member_weights[other])
            else:
                pool = members[home]
                d = int(rng_benign.choice(pool, p=member_weights[home]))
                if d == src[i]:
                    d = int(pool[(np.searchsorted(pool, d) + 1) % pool.size])
                dst[i] = d
        # Same-node fallback can still collide when a community has one member.
        keep = dst != src
        ntlm = rng_benign.random(n_ev) < propensity[comm[src]]
        times = w * cfg.window_secs + rng_benign.integers(cfg.window_secs, size=n_ev)
        for i in np.flatnonzero(keep):
            events.append(
                AuthEvent(
                    time=int(times[i]),
                    src_user=f"U{src[i]:05d}@DOM1",
                    dst_user=f"U{dst[i]:05d}@DOM1",
                    src_computer=_computer_name(int(src[i])),
                    dst_computer=_computer_name(int(dst[i])),
                    auth_type="NTLM" if ntlm[i] else "Kerberos",
                    logon_type="Network",
                    orientation="LogOn",
                    success=True,
                )
            )

    redteam: list[RedteamEvent] = []
    total_malicious = int(round(cfg.malicious_rate * cfg.n_windows))
    if total_malicious > 0:
        first_attack = int(np.ceil(ATTACK_FRACTION * cfg.n_windows))
        first_attack = min(first_attack, cfg.n_windows - 1)
        attack_windows = np.sort(
            rng_mal.integers(first_attack, cfg.n_windows, size=total_malicious)
        )
        head = int(rng_mal.integers(cfg.n_computers))
        last_window = None
        for w in attack_windows.tolist():
            if last_window is not None and w != last_window:
                head = pending_head
            last_window = w
            home = comm[head]
            if cfg.community_count > 1:
                other = int(rng_mal.integers(cfg.community_count - 1))
                if other >= home:
                    other += 1
                target = int(rng_mal.choice(members[other]))
            else:
                target = int(rng_mal.integers(cfg.n_computers - 1))
                if target >= head:
                    target += 1
            pending_head = target
            t = int(w * cfg.window_secs + rng_mal.integers(cfg.window_secs))
            is_ntlm = bool(rng_mal.random() < cfg.p_ntlm_given_malicious)
            repeats = int(3 + rng_mal.integers(4))  # retries merge into event_count
            for _ in range(repeats):
                events.append(
                    AuthEvent(
                        time=t,
                        src_user=ATTACKER_USER,
                        dst_user=ATTACKER_USER,
                        src_computer=_computer_name(head),
                        dst_computer=_computer_name(target),
                        auth_type="NTLM" if is_ntlm else "Kerberos",
                        logon_type="Network",
                        orientation="LogOn",
                        success=True,
                    )
                )
            redteam.append(
                RedteamEvent(
                    time=t,
                    user=ATTACKER_USER,
                    src_computer=_computer_name(head),
                    dst_computer=_computer_name(target),
                )
            )

    events.sort(key=lambda e: (e.time, e.src_computer, e.dst_computer))
    redteam.sort(key=lambda e: (e.time, e.src_computer, e.dst_computer))
    return events, redteam

"""
Synthetic labeled flow corpus.

Every class gets `sessions_per_class` sessions named `<class>-sNN` with
`flows_per_session` flows each. The last `test_fraction` of each class's
sessions are test sessions. Background flows in test sessions come from the
held-out background sub-profiles, so the test set contains background traffic
never seen in training.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List

import numpy as np
from scipy.stats import truncnorm

from ingest.records import Direction, Flow, FlowKey, FlowPacket
from ingest.sessions import TEST, TRAIN
from synth.profiles import MAX_SIZE, MIN_SIZE, ClassProfile, ProfileSet, SizeDistribution
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

SESSION_SPACING = 3600.0
FLOW_SPACING = 30.0


@dataclass(frozen=True)
class SyntheticCorpus:
    flows: List[Flow]
    assignment: Dict[str, str]


def truncated_mean(dist: SizeDistribution) -> float:
    """Mean of the size distribution after truncation to [40, 1500]."""
    a, b = (MIN_SIZE - dist.mean) / dist.std, (MAX_SIZE - dist.mean) / dist.std
    return float(truncnorm.mean(a, b, loc=dist.mean, scale=dist.std))


def _sizes(dist: SizeDistribution, count: int, rng: np.random.Generator) -> np.ndarray:
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    a, b = (MIN_SIZE - dist.mean) / dist.std, (MAX_SIZE - dist.mean) / dist.std
    draws = truncnorm.rvs(a, b, loc=dist.mean, scale=dist.std, size=count, random_state=rng)
    return np.clip(np.rint(draws), MIN_SIZE, MAX_SIZE).astype(np.int64)


def generate_flow(
    profile: ClassProfile,
    rng: np.random.Generator,
    flow_id: str,
    session_id: str,
    session_type: str,
    start_time: float,
    client_addr: str,
    client_port: int,
    server_net: int,
) -> Flow:
    """One flow; the server address encodes the profile (third octet) and domain (fourth)."""
    length = int(rng.integers(profile.min_length, profile.max_length + 1))
    switches = rng.random(length - 1) < profile.switch_prob
    # first packet is client to server; a switch flips the direction
    server_side = np.concatenate([[False], np.cumsum(switches) % 2 == 1])
    gaps = rng.exponential(profile.inter_arrival, size=length - 1)
    times = np.concatenate([[0.0], np.cumsum(gaps)])

    sizes = np.empty(length, dtype=np.int64)
    sizes[~server_side] = _sizes(profile.c2s_size, int((~server_side).sum()), rng)
    sizes[server_side] = _sizes(profile.s2c_size, int(server_side.sum()), rng)
    domain_index = int(rng.integers(len(profile.domains)))
    domain = profile.domains[domain_index]
    server_addr = f"198.18.{server_net}.{domain_index + 1}"

    packets = tuple(
        FlowPacket(
            float(t),
            int(s),
            Direction.SERVER_TO_CLIENT if srv else Direction.CLIENT_TO_SERVER,
        )
        for t, s, srv in zip(times, sizes, server_side)
    )
    return Flow(
        flow_id=flow_id,
        key=FlowKey(client_addr, client_port, server_addr, profile.server_port, profile.transport),
        start_time=start_time,
        packets=packets,
        session_id=session_id,
        session_type=session_type,
        domain=domain,
        label=profile.name,
    )


def held_out_session_count(sessions: int, test_fraction: float) -> int:
    if sessions < 2:
        return 0
    return min(max(int(round(test_fraction * sessions)), 1), sessions - 1)


def generate_flows(
    profiles: ProfileSet,
    sessions_per_class: int = 5,
    flows_per_session: int = 20,
    seed: int = 0,
    test_fraction: float = 0.3,
    background_share: float = 0.0,
) -> SyntheticCorpus:
    """
    Generate the corpus and its session assignment.

    Args:
        profiles: Class and background profiles.
        sessions_per_class: Sessions per class (background included).
        flows_per_session: Flows per session.
        seed: Seed of the only random generator used.
        test_fraction: Share of each class's sessions held out for testing.
        background_share: Share of flows in application sessions drawn from
            background sub-profiles.

    Returns:
        SyntheticCorpus with flows labeled by their generating profile.
    """
    if sessions_per_class < 1 or flows_per_session < 1:
        raise ConfigurationError("sessions_per_class and flows_per_session must be positive")
    if not 0.0 <= background_share < 1.0:
        raise ConfigurationError("background_share must lie in [0, 1)")
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError("test_fraction must lie in (0, 1)")

    rng = np.random.default_rng(seed)
    flows: List[Flow] = []
    assignment: Dict[str, str] = {}
    session_types = [(p.name, p) for p in profiles.classes]
    if profiles.background:
        session_types.append((profiles.background_name, None))
    n_test = held_out_session_count(sessions_per_class, test_fraction)
    server_nets = {p: i for i, p in enumerate(profiles.classes + profiles.background)}

    session_index = 0
    for session_type, profile in session_types:
        for s in range(sessions_per_class):
            session_id = f"{session_type}-s{s:02d}"
            is_test = s >= sessions_per_class - n_test
            assignment[session_id] = TEST if is_test else TRAIN
            background_pool = profiles.background_profiles(held_out=is_test)
            session_start = session_index * SESSION_SPACING
            client_addr = f"10.{session_index // 250}.{session_index % 250}.2"
            for f in range(flows_per_session):
                if profile is None or (profiles.background and rng.random() < background_share):
                    chosen = background_pool[int(rng.integers(len(background_pool)))]
                else:
                    chosen = profile
                flows.append(
                    generate_flow(
                        chosen,
                        rng,
                        flow_id=f"{session_id}:{f}",
                        session_id=session_id,
                        session_type=session_type,
                        start_time=session_start + f * FLOW_SPACING,
                        client_addr=client_addr,
                        client_port=20000 + f,
                        server_net=server_nets[chosen],
                    )
                )
            session_index += 1

    logger.info(
        "Generated %d synthetic flows in %d sessions (%d test)",
        len(flows), len(assignment), sum(v == TEST for v in assignment.values()),
    )
    return SyntheticCorpus(flows=flows, assignment=assignment)


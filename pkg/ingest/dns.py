"""
DNS association: attach to each flow the domain name whose response resolved
the flow's server address most recently before the flow started.
"""

import bisect
import dataclasses
import logging
from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

from ingest.records import DnsResponse, Flow

logger = logging.getLogger(__name__)


def associate_dns(flows: Sequence[Flow], dns_responses: Sequence[DnsResponse]) -> List[Flow]:
    """
    Set each flow's domain from the preceding DNS responses.

    Args:
        flows: Flows to annotate.
        dns_responses: Responses in time order. For equal timestamps the later
            response in the sequence is the more recent one.

    Returns:
        New Flow objects; flows without a matching response keep domain None.
    """
    by_address: Dict[str, List[Tuple[float, int, str]]] = defaultdict(list)
    for order, response in enumerate(dns_responses):
        for address in response.addresses:
            by_address[address].append((response.timestamp, order, response.domain))
    for entries in by_address.values():
        entries.sort()

    annotated = []
    matched = 0
    for flow in flows:
        entries = by_address.get(flow.key.server_addr, [])
        # last entry with timestamp <= flow start
        position = bisect.bisect_right(entries, (flow.start_time, len(dns_responses), ""))
        if position:
            matched += 1
            annotated.append(dataclasses.replace(flow, domain=entries[position - 1][2]))
        else:
            annotated.append(flow)

    logger.debug("Associated a domain with %d of %d flows", matched, len(flows))
    return annotated

"""Built-in scenarios, in the same schema as scenario files.

The canonical topology is a single chain between a victim network (G) and an
attacker network (B)::

    G_host -25ms- G_gw1 - G_gw2 - G_gw3 - B_gw3 - B_gw2 - B_gw1 - B_host

All other links take 1 ms, so the victim-to-gateway round trip is 50 ms.
"""

import copy
from typing import Any, Dict, List, Optional

VICTIM = "10.1.0.1"
ATTACKER = "10.2.0.1"
SPOOFER = "10.3.0.1"

CHAIN = ["G_host", "G_gw1", "G_gw2", "G_gw3", "B_gw3", "B_gw2", "B_gw1", "B_host"]


def _fig1(name: str, description: str, attacker: str = "ignore",
          ignoring: Optional[List[str]] = None, duration: str = "10s") -> Dict[str, Any]:
    ignoring = set(ignoring or ())
    nodes = [
        {"id": "G_host", "kind": "host", "address": VICTIM},
        {"id": "B_host", "kind": "host", "address": ATTACKER, "behavior": attacker},
    ]
    for node_id in CHAIN[1:-1]:
        node = {"id": node_id, "kind": "border"}
        if node_id in ignoring:
            node["behavior"] = "ignore"
        nodes.append(node)
    links = []
    for a, b in zip(CHAIN, CHAIN[1:]):
        links.append({"a": a, "b": b, "delay": 25 if "G_host" in (a, b) else 1})
    return {
        "name": name,
        "description": description,
        "seed": 1,
        "duration": duration,
        "params": {"T": "60s", "T_tmp": "600ms", "grace_attacker": "200ms", "grace_victim_gw": "500ms",
                   "handshake_timeout": "1s"},
        "defaults": {"r1": 100, "r2": 1},
        "nodes": nodes,
        "links": links,
        "contracts": [
            {"edge": ["G_gw1", "G_host"], "r1": 100, "r2": 1, "burst1": 100},
            {"edge": ["B_gw1", "B_host"], "r1": 100, "r2": 1, "burst2": 1},
        ],
        "flows": [
            {"id": "attack", "src": "B_host", "dst": "G_host", "proto": "udp", "sport": 4000, "dport": 80,
             "rate": 1000, "size": 1000, "undesired": True},
        ],
        "classifiers": [{"host": "G_host", "detection_delay": 0}],
    }


def _on_off() -> Dict[str, Any]:
    scenario = _fig1("on-off", "On-off attacker behind a non-cooperating gateway (B_gw1).",
                     attacker="on_off", ignoring=["B_gw1"], duration="600s")
    for node in scenario["nodes"]:
        if node["id"] == "B_host":
            node.update({"on_ms": 100, "off_ms": 2000})
    scenario["flows"][0]["rate"] = 200
    return scenario


def _spoofer() -> Dict[str, Any]:
    scenario = _fig1("spoofer", "Off-path host forges requests against the legitimate flow B_host -> G_host.",
                     attacker="compliant", duration="30s")
    scenario["nodes"] += [
        {"id": "X_gw", "kind": "border"},
        {"id": "S_host", "kind": "host", "address": SPOOFER, "behavior": "spoofer", "forged": [
            # in the victim's name: dropped by S_host's own gateway
            {"at": 100, "kind": "FILTER_REQ", "req_type": "TO_VICTIM_GW", "label": f"{ATTACKER}>{VICTIM}",
             "destination": "G_gw1", "requester": "G_host", "attack_path": ["B_gw1", "G_gw1"],
             "count": 250, "every": 20},
            # in its own name at the victim's gateway: fails ingress verification
            {"at": 105, "kind": "FILTER_REQ", "req_type": "TO_VICTIM_GW", "label": f"{ATTACKER}>{VICTIM}",
             "destination": "G_gw1", "requester": "S_host",
             "attack_path": ["B_gw1", "B_gw2", "B_gw3", "G_gw3", "G_gw2", "G_gw1"], "count": 250, "every": 20},
            # straight to the source's gateway: the handshake with G_host never completes
            {"at": 110, "kind": "FILTER_REQ", "req_type": "TO_ATTACKER_GW", "label": f"{ATTACKER}>{VICTIM}",
             "destination": "B_gw1", "requester": "S_host", "count": 250, "every": 20},
            # guessed verification replies: random nonces
            {"at": 115, "kind": "VERIFY_REPLY", "label": f"{ATTACKER}>{VICTIM}",
             "destination": "B_gw1", "requester": "S_host", "count": 250, "every": 20},
            # straight to the source host in its own name: the host obeys only its gateway
            {"at": 120, "kind": "FILTER_REQ", "req_type": "TO_ATTACKER", "label": f"{ATTACKER}>{VICTIM}",
             "destination": "B_host", "requester": "S_host", "count": 250, "every": 20},
        ]},
    ]
    scenario["links"] += [
        {"a": "G_gw3", "b": "X_gw", "delay": 1},
        {"a": "X_gw", "b": "S_host", "delay": 1},
    ]
    scenario["flows"] = [
        {"id": "legit", "src": "B_host", "dst": "G_host", "proto": "udp", "sport": 5000, "dport": 443,
         "rate": 100, "size": 500},
    ]
    scenario["classifiers"] = []
    return scenario


def _provisioning_load() -> Dict[str, Any]:
    scenario = _fig1("provisioning-load",
                     "100 new undesired flows per second at one victim for 130 s; compliant sources.",
                     attacker="compliant", duration="130s")
    scenario["defaults"] = {"r1": 100, "r2": 100}
    scenario["contracts"] = [
        {"edge": ["G_gw1", "G_host"], "r1": 100, "r2": 1, "burst1": 100},
        {"edge": ["B_gw1", "B_host"], "r1": 100, "r2": 100, "burst2": 100},
    ]
    for node in scenario["nodes"]:
        if node["id"] == "G_gw1":
            node.update({"filter_capacity": 160, "shadow_capacity": 6100})
        elif node["id"] == "B_gw1":
            node.update({"filter_capacity": 6100})
    scenario["flows"] = [
        {"id": "load", "src": "B_host", "dst": "G_host", "proto": "udp", "sport": 10000, "dport": 80,
         "rate": 10, "size": 1000, "duration": "1s", "undesired": True,
         "repeat": {"count": 13000, "every": 10}},
    ]
    return scenario


def _client_bound() -> Dict[str, Any]:
    scenario = _fig1("client-bound",
                     "Two new undesired flows per second from one client; its provider may accept 1 request/s.",
                     attacker="compliant", duration="90s")
    # only the provider-to-client budget at B_gw1 is tight
    scenario["defaults"] = {"r1": 100, "r2": 100}
    scenario["flows"] = [
        {"id": "short", "src": "B_host", "dst": "G_host", "proto": "udp", "sport": 20000, "dport": 80,
         "rate": 100, "size": 1000, "duration": "100ms", "undesired": True,
         "repeat": {"count": 180, "every": 500}},
    ]
    return scenario


BUILTIN_SCENARIOS: Dict[str, Dict[str, Any]] = {
    "fig1-cooperative": _fig1(
        "fig1-cooperative", "Every gateway cooperates; the attacker ignores requests.", duration="60s"),
    "fig1-bgw1-ignores": _fig1(
        "fig1-bgw1-ignores", "The attacker's gateway B_gw1 ignores requests; the next one takes over.",
        ignoring=["B_gw1"]),
    "fig1-all-ignore": _fig1(
        "fig1-all-ignore", "Every attacker-side gateway ignores requests.",
        ignoring=["B_gw1", "B_gw2", "B_gw3"]),
    "on-off": _on_off(),
    "spoofer": _spoofer(),
    "provisioning-load": _provisioning_load(),
    "client-bound": _client_bound(),
}


def builtin(name: str) -> Dict[str, Any]:
    """A private copy of a built-in scenario document."""
    try:
        return copy.deepcopy(BUILTIN_SCENARIOS[name])
    except KeyError:
        raise KeyError(f"unknown built-in scenario {name!r}") from None


def describe() -> List[str]:
    return [f"{name:<20} {doc['description']}" for name, doc in BUILTIN_SCENARIOS.items()]

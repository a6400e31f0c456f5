"""Serve a target over HTTP and attack it through the wire.

The same attack is run in-process and remotely; the full-posterior endpoint gives
identical metrics, the rank-only endpoint leaves the attacker at chance.
"""

from speakermia import ExperimentSpec, Pipeline
from speakermia.attack import evaluate_attack
from speakermia.obfuscation import ObfuscationConfig
from speakermia.server import ServeConfig, endpoint_info, query_endpoint, remote_attack, serve

pipeline = Pipeline(ExperimentSpec())
target = pipeline.baseline_target(seed=0)
members, nonmembers = pipeline.pool("target", "attack_eval")

attack, threshold = pipeline.attack(seed=0)
local = evaluate_attack(attack, threshold, target, members, nonmembers)
print(f"in-process attack accuracy {local.accuracy:.3f}")

with serve(ServeConfig("", ObfuscationConfig("full")), model=target) as server:
    print("endpoint", server.url, endpoint_info(server.url))
    print("one response:", query_endpoint(server.url, members[0]).to_json())
    remote = remote_attack(server.url, attack, threshold, members, nonmembers)
    print(f"remote attack accuracy {remote.accuracy:.3f}")

rank = ObfuscationConfig("rank")
attack, threshold = pipeline.attack(seed=0, obfuscation=rank)
with serve(ServeConfig("", rank), model=target) as server:
    print("one rank response:", query_endpoint(server.url, members[0]).to_json())
    remote = remote_attack(server.url, attack, threshold, members, nonmembers)
    print(f"remote attack against rank-only outputs {remote.accuracy:.3f}")

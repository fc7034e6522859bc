"""Closed-loop driving-style personalization demo stack.

Modules: a pub/sub bus (MQTT 3.1.1 subset), a kinematic vehicle simulator,
a synthetic driver with physiological sensor emission, an echo-state stress
detector, an actor-critic profile agent, and an orchestrator wiring them all
together over the bus.
"""

__version__ = "0.1.0"

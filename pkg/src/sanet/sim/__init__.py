"""Deterministic multi-node simulation, attacker scripts and audits."""

from .engine import SimResult, Simulator, TraceEvent, run
from .knowledge import KnowledgeSet, knowledge_closure
from .scenario import AttackerSpec, Command, NodeSpec, Scenario, load_scenario, loads_scenario

__all__ = ["AttackerSpec", "Command", "KnowledgeSet", "NodeSpec", "Scenario", "SimResult", "Simulator",
           "TraceEvent", "knowledge_closure", "load_scenario", "loads_scenario", "run"]

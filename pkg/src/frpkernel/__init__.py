"""Deterministic desk-scale kernel of filter-and-refine adaptive components.

Submodules:
  engine        in-memory transactional KV store on a logical-tick clock
  cc_adaptive   learned concurrency control (observe, detect, evolve, refine)
  recovery      sealed redo/anchor log, tamper detection, bounded replay
  model_select  budgeted proxy-score filtering plus successive halving
  plan_opt      cardinality-mutation plan candidates and bandit selection
  gate          predicate-encoded sparse expert gating
  harness       scenario drivers, metrics emission, circular data feed, CLI
"""

__version__ = "0.1.0"

"""provgate: a context-aware transaction gateway for smart spaces.

Transactions enter an embedded proof-of-work ledger, are screened against
contextual provenance (what kinds of operations this fleet has executed
before, plus live sensor readings), and either flow to an emulated device
fleet or are held for a trusted human's approve/revoke decision.
"""

__version__ = "0.1.0"

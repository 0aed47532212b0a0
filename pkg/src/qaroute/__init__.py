"""Decision-aware question answering: every query is routed to one of three
actions — answer from retrieved evidence, ask a targeted clarifying question,
or abstain — driven by numeric evidence signals, a priority-ordered gate, and
a decision-weighted knowledge graph."""

__version__ = "0.1.0"

from .core import Action, InformationState, UnifiedSample  # noqa: F401

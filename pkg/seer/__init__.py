"""Seer: proactive revenue-aware scheduling of live-streaming requests on edge servers."""

__version__ = "0.1.0"

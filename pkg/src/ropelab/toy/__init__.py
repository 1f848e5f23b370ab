"""Desk-scale decoder with pluggable positional encoding, synthetic retrieval
and grounding tasks, and the channel-group attention probe."""

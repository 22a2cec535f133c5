"""Loss-landscape probes for zero-shot domain transfer."""

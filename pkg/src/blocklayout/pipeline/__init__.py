"""Outer shell: ingestion, dataset persistence, rendering, reports, CLI."""

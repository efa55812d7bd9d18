"""Renderers for result files and run digests."""

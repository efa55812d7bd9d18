"""Top-level package for modular components."""

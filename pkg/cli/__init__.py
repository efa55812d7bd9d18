"""Command-line surface: subcommand registry and experiment handlers."""

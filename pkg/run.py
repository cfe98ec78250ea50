#!/usr/bin/env python3
"""Entry point: ``./run.py run --config example_config.json``."""

from seer.cli import cli

if __name__ == "__main__":
    cli()  # pylint: disable=no-value-for-parameter

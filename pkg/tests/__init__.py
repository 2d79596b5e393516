"""Tests for the feature stream, the selection stages and the CLI."""

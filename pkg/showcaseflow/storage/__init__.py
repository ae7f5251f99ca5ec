"""Persistence of pipeline datasets and artifacts."""

"""Command-line interface of the pipeline."""

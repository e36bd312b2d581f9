"""Bundled problem files for the worked examples."""

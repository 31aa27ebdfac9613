"""Bundled scenario configs (JSON) and sample data shipped with the package."""

"""Command line, configuration, artifact persistence, extraction pipeline and HTTP service."""

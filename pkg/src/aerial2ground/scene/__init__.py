"""Procedural paired aerial/ground scenes with analytic height maps."""

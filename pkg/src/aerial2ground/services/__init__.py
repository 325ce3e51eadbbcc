"""Stage services: synchronous compute behind the CLI and the Temporal activities."""

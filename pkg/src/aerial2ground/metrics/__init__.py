"""Image metrics, significance testing and run evaluation."""

"""Training loop, checkpoints, data loading, CLI and composite apps."""

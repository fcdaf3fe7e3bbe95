"""Present so pytest puts this directory on sys.path (oracles, worldgen)."""

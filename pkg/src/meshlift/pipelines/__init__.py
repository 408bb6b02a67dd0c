"""Command-line programs built on meshlift."""

"""Trust poisoning in LiDAR collaborative perception: attack, defenses, mitigation, metrics."""

__version__ = "0.1.0"

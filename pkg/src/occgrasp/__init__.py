"""Planar occluded-grasping simulator and goal-conditioned RL toolkit."""
__version__ = "0.1.0"

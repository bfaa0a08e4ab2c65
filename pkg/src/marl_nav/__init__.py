"""Two-UAV indoor navigation: lidar simulator, PPO trainer and curriculum driver."""

__version__ = "0.1.0"

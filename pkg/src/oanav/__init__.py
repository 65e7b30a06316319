"""Object-aware LiDAR navigation: simulated perception, ICP geometry
verification, multi-object tracking, affordance costmaps, A*/DWA planning,
and the auto-annotation pipeline, with a benchmark harness."""

__version__ = "0.1.0"

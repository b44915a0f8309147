"""Reactive arm control on a planar 3-link robot.

Pipeline: sample cluttered scenes, plan collision-free joint paths, distill
the planner into a waypoint network conditioned on a learned scene latent,
then train a velocity-control policy that follows those waypoints and
reacts when the scene changes. A sensor-translation model maps degraded
depth images into the clean rendering domain so models trained in
simulation transfer to noisy sensing.
"""

__version__ = "0.1.0"

"""Hand-motion teleoperation workbench for simulated drone swarms.

Learns a personalized mapping from hand kinematics to 4-DoF swarm
commands (center x/y/z plus expansion) from a short imitation
demonstration, then evaluates it closed-loop on a gated obstacle course.
"""

__version__ = "0.1.0"

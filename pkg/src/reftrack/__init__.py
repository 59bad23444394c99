"""Closed-loop dynamics learning and reference-trajectory adjustment for
excavator-style joint tracking.

Learn how a PD-controlled plant responds to reference trajectories, then
train a policy (by backpropagating tracking error through the learned model
over a multi-step horizon) that nudges each reference position so the
realized motion lands on the desired trajectory.
"""

__version__ = "0.1.0"

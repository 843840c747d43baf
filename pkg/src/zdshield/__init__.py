"""Detection and recovery of zero-dynamics actuator attacks on normal-form plants.

The four-tank benchmark is provided as a ready-made plant together with
scenario presets, a fast closed-loop engine and a command line harness.
"""

__version__ = "0.1.0"

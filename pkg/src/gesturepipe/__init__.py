"""Lidar-based gesture recognition and gesture-driven teleoperation.

Modules: ``cloud`` (point clouds, clustering), ``track`` (Kalman tracker),
``project`` (depth images), ``nncore`` (numpy neural nets), ``models``
(pose CNN and gesture LSTM), ``poseseq``, ``postfilter``, ``teleop``,
``simgen`` (synthetic skeleton and lidar data), ``pipeline`` and ``cli``.
"""
from ._accel import USE_NUMBA

__version__ = "0.1.0"

__all__ = ["USE_NUMBA", "__version__"]

"""Hot numeric kernels in two lanes: numba JIT and pure numpy.

Import the active lane through fieldlab.backend.kernels().
"""

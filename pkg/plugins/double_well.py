"""Example target plugin: a two-dimensional double well.

The first coordinate has two wells at +-2, the second is Gaussian. Load
it with ``gmmreject run --plugin plugins/double_well.py``. No gradient
is given, so dual numbers differentiate ``log_density``.
"""

DIMS = 2
DOMAIN = [(float("-inf"), float("inf")), (float("-inf"), float("inf"))]


def log_density(x):
    return -0.25 * (x[0] ** 2 - 4.0) ** 2 - 0.5 * x[1] ** 2

import numpy as np
import pytest
from scipy.integrate import quad

from ahtis.mathcore import SpdMatrix
from ahtis.studentt import StudentTParams


def integrate_real_line(f, epsabs=1e-13, epsrel=1e-12):
    """Adaptive quadrature of f over R after x = tan(theta).

    Polynomial tails become bounded integrands on (-pi/2, pi/2).
    """
    def g(th):
        c = np.cos(th)
        return f(np.tan(th)) / (c * c)

    # split at 0 so a mode at the origin is never an interval endpoint
    left = quad(g, -np.pi / 2, 0.0, epsabs=epsabs, epsrel=epsrel, limit=500)[0]
    right = quad(g, 0.0, np.pi / 2, epsabs=epsabs, epsrel=epsrel, limit=500)[0]
    return left + right


def t1(nu, mu=0.0, scale=1.0):
    """1-d Student-t with scale *variance* ``scale``."""
    return StudentTParams([mu], SpdMatrix(np.array([[np.sqrt(scale)]])), nu)


@pytest.fixture
def quad_line():
    return integrate_real_line

import numpy as np
import pytest
from scipy.linalg import expm

from specdiff.inhomogeneous import InhomDistribution
from specdiff.tls import EmitterParams

T1 = 1.83e-9
T2 = 3.66e-9
INHOM_FWHM = 4.0e9


@pytest.fixture
def ref_emitter():
    return EmitterParams(T1, T2, inhom_fwhm=INHOM_FWHM)


@pytest.fixture
def ref_dist():
    return InhomDistribution.gaussian(INHOM_FWHM)


def lindblad_g2(rabi, detuning, t1, t2, tau):
    """g2 from the full 2x2 Lindblad master equation via matrix exponentials.

    Independent of the Bloch-vector integrator: decay and pure dephasing are
    written as jump operators on the density matrix in Liouville space.
    """
    g1 = 1.0 / t1
    gphi = 1.0 / t2 - g1 / 2
    sz = np.diag([1.0, -1.0])
    sx = np.array([[0, 1.0], [1.0, 0]])
    sm = np.array([[0, 0], [1.0, 0]])  # basis (e, g): |g><e|
    H = -detuning / 2 * sz + rabi / 2 * sx
    eye = np.eye(2)

    def pre(a):
        return np.kron(a, eye)

    def post(a):
        return np.kron(eye, a.T)

    L = -1j * (pre(H) - post(H))
    for c, rate in ((sm, g1), (sz, gphi / 2)):
        cd = c.conj().T
        L = L + rate * (np.kron(c, c.conj()) - 0.5 * pre(cd @ c) - 0.5 * post(cd @ c))
    w, v = np.linalg.eig(L)
    ss = v[:, np.argmin(np.abs(w))].reshape(2, 2)
    ss = ss / np.trace(ss)
    ground = np.array([[0, 0], [0, 1.0]], dtype=complex).ravel()
    pops = [(expm(L * t) @ ground).reshape(2, 2)[0, 0].real for t in np.atleast_1d(tau)]
    return np.array(pops) / ss[0, 0].real


# --- acceptance report -----------------------------------------------------------

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance check; printed again in the terminal summary."""
    def record(ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {request.node.name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

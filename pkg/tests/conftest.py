import numpy as np
import pytest

from mlparch.network import MlpParams, Tanh, Logistic
from mlparch.reparam import DEFAULT_CLUSTER_TOL


def random_theta(rng, k, d, scale=1.5):
    return MlpParams(
        beta=rng.normal(),
        a=rng.normal(size=k) * scale,
        b=rng.normal(size=k) * scale,
        W=rng.normal(size=(k, d)) * scale,
    )


def clustered_theta(rng, theta0, k, tol=DEFAULT_CLUSTER_TOL):
    """A network with k units: every true unit gets at least one nearby copy,
    any units left over are placed far from all true units."""
    k0, d = theta0.k, theta0.d
    owner = np.concatenate((np.arange(k0), rng.integers(0, k0, size=rng.integers(0, k - k0 + 1))))
    m = k - owner.size
    a, b, W = [], [], []
    for i in range(k0):
        idx = np.flatnonzero(owner == i)
        share = rng.dirichlet(np.ones(idx.size)) * (theta0.a[i] + rng.normal(scale=0.05))
        for j in range(idx.size):
            step = rng.normal(size=1 + d)
            step *= rng.uniform(0, 0.9 * tol) / np.linalg.norm(step)
            a.append(share[j])
            b.append(theta0.b[i] + step[0])
            W.append(theta0.W[i] + step[1:])
    for _ in range(m):
        a.append(rng.normal())
        b.append(theta0.b.max() + 5 + rng.uniform(0, 2))
        W.append(rng.normal(size=d))
    perm = rng.permutation(k)
    return MlpParams(theta0.beta + rng.normal(scale=0.05), np.array(a)[perm], np.array(b)[perm],
                     np.array(W)[perm])


def separated_theta0(rng, k0, d):
    while True:
        th = random_theta(rng, k0, d)
        loc = np.column_stack((th.b, th.W))
        gaps = [np.linalg.norm(loc[i] - loc[j]) for i in range(k0) for j in range(i)]
        if not gaps or min(gaps) > 0.5:
            return th


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["tanh", "logistic"])
def phi(request):
    return Tanh() if request.param == "tanh" else Logistic()


@pytest.fixture
def theta_true():
    """One tanh unit: beta=0, a=2, b=1, w=1.5."""
    return MlpParams(beta=0.0, a=[2.0], b=[1.0], W=[[1.5]])


_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is not None and report.when == "call":
        detail = dict(item.user_properties).get("detail", "")
        _ACCEPTANCE.append((marker.args[0], "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")

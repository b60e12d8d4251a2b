import numpy as np
import pytest

from simlr.sir_core import RateParams, SirState, simulate


def daily_trajectory(initial, betas, gammas):
    """Initial state followed by one simulated state per (beta, gamma) pair."""
    seq = [RateParams(b, g) for b, g in zip(betas, gammas)]
    return [initial, *simulate(initial, seq)]


def grid_objective(states, betas, gammas, lambda1=0.0, lambda2=0.0, beta0=0.0, gamma0=0.0):
    """Brute-force objective over a (beta, gamma) grid.

    Evaluates the unclamped one-step predictions for every grid point by
    broadcasting; shares no code with the closed-form solver.
    """
    B, G = np.meshgrid(betas, gammas, indexing="ij")
    total = np.zeros_like(B)
    for prev, cur in zip(states[:-1], states[1:]):
        flow = B * prev.s * prev.i / prev.n
        s_hat = prev.s - flow
        i_hat = prev.i + flow - G * prev.i
        total += (cur.s - s_hat) ** 2 + (cur.i - i_hat) ** 2
    total += lambda1 * (B - beta0) ** 2 + lambda2 * (G - gamma0) ** 2
    return total


def noisy_window(rng, beta, gamma, n=1e6, days=7, noise_frac=1e-3, i0_frac=None):
    if i0_frac is None:
        i0_frac = rng.uniform(0.01, 0.2)
    r0 = rng.uniform(0, 0.3) * n
    i0 = i0_frac * n
    initial = SirState(n - i0 - r0, i0, r0, n)
    clean = daily_trajectory(initial, [beta] * days, [gamma] * days)
    out = []
    for st in clean:
        ds, di = rng.normal(0, noise_frac * n, size=2)
        s = min(max(st.s + ds, 0.0), n)
        i = min(max(st.i + di, 0.0), n - s)
        out.append(SirState(s, i, n - s - i, n))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20200726)


# one pass/fail line per acceptance criterion in the terminal summary
_ACCEPTANCE: dict[int, dict] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            number, title = mark.args
            _ACCEPTANCE.setdefault(number, {"title": title, "outcomes": []})


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        if call.excinfo is None:
            outcome = "PASS"
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            outcome = "SKIP"
        else:
            outcome = "FAIL"
        _ACCEPTANCE[mark.args[0]]["outcomes"].append(outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        entry = _ACCEPTANCE[number]
        outs = entry["outcomes"]
        if not outs:
            status = "NOT RUN"
        elif "FAIL" in outs:
            status = "FAIL"
        elif all(o == "SKIP" for o in outs):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {number:2d}: {status:7s} {entry['title']}")

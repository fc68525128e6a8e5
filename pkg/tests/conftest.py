import numpy as np
import pytest

from qaoi.model import SourceSpec, SystemSpec


def two_source_spec(N=3, p=0.9, lam=0.9, gamma_tr=0.5, gamma_sm=0.3, mu=0.6, rho=0.7,
                    rho_bar=0.4) -> SystemSpec:
    return SystemSpec(
        (SourceSpec.random_arrival(mu, rho, rho_bar), SourceSpec.generate_at_will(rho, rho_bar)),
        p=p, N=N, lam=lam, gamma_tr=gamma_tr, gamma_sm=gamma_sm,
    )


def random_spec(rng: np.random.Generator, N: int, lam: float) -> SystemSpec:
    return SystemSpec(
        (SourceSpec.random_arrival(rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9),
                                   rng.uniform(0.2, 0.9)),
         SourceSpec.generate_at_will(rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9))),
        p=rng.uniform(0.4, 1.0), N=N, lam=lam,
        gamma_tr=rng.uniform(0.1, 0.8), gamma_sm=rng.uniform(0.05, 0.5),
    )


def always_query_spec(N=2, lam=0.5) -> SystemSpec:
    # rho = 1, rho_bar = 0: once on, always on; steady state is "on"
    return SystemSpec(
        (SourceSpec.random_arrival(0.5, 1.0, 0.0), SourceSpec.generate_at_will(1.0, 0.0)),
        p=0.9, N=N, lam=lam, gamma_tr=0.5, gamma_sm=0.3,
    )


@pytest.fixture
def spec3():
    return two_source_spec(N=3)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])

"""Acceptance gate: every quantitative target runs at its stated tolerance and
prints one pass/fail line.

Two checks are expected to fail honestly at desk scale, with the analysis in
their detail text (see also notes in the README):

* 06-speed-law: the right-most point lags its asymptote by roughly
  (3/(2 sqrt(2 alpha))) log t / t, which at the stated horizons exceeds the
  5-7% bands for any correct simulator; the incremental front speed, which
  cancels the offset, is validated inside the check and in test_sim.
* 10-tail-asymptotics: the band-plus-trend probes of the tail law pass, but
  the first-order plug-in prediction still carries ~30% log-scale corrections
  at thresholds n <= 100 and sits outside the Wilson intervals there.
"""

import pytest

from superbbm.verify import CHECK_NAMES, run_verify_suite

MASTER_SEED = 20240801


@pytest.fixture(scope="module")
def report():
    rep = run_verify_suite(master_seed=MASTER_SEED, threads=2)
    print()
    for r in rep.results:
        print(f"[{r.status:4s}] {r.name} ({r.runtime_s:.1f}s)")
    return rep


@pytest.mark.parametrize("name", CHECK_NAMES)
def test_criterion(report, name):
    result = next(r for r in report.results if r.name == name)
    assert result.status == "pass", f"{name}: {result.detail}"


def test_runtime_budgets(report):
    budgets = {
        "01-mechanism-algebra": 5.0,
        "02-mean-identity": 10.0,
        "03-wave-dichotomy": 30.0,
        "04-wave-exact-oracle": 10.0,
        "05-decay-rate": 10.0,
        "06-speed-law": 300.0,
        "07-extinction-identity": 300.0,
        "08-poisson-embedding": 60.0,
        "09-poissonization-identity": 30.0,
        "10-tail-asymptotics": 900.0,
        "11-flow-properties": 30.0,
        "12-determinism": 60.0,
    }
    over = {r.name: r.runtime_s for r in report.results
            if r.runtime_s > budgets.get(r.name, 1e9)}
    assert not over, f"checks over their runtime budget: {over}"

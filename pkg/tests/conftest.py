"""Shared fixtures for the test suite.

The ordering experiment (criterion 6 of the acceptance suite) trains a
teacher plus a grid of students and takes tens of minutes, so it runs once
per session and is shared by whatever tests need it.
"""

import time

import pytest


@pytest.fixture(scope="session")
def ordering_result():
    from gluse.experiments import run_ordering_experiment

    t0 = time.time()
    result = run_ordering_experiment()
    return result, time.time() - t0

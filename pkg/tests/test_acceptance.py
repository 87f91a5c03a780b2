"""Acceptance criteria, one test each, at the full stated sizes.

Each test prints a single PASS/FAIL line (visible without ``-s``) and then
asserts the same verdict. The pinned models are trained once and cached under
``.cache/`` (override with FLOODSTREAM_CACHE); the first run trains three
models and takes roughly half an hour on one CPU core.
"""

import pytest

import checks


@pytest.fixture
def report(capsys):
    def emit(result):
        with capsys.disabled():
            print("\n" + result.line())
        assert result.passed, result.detail
    return emit


def test_schedule_exactness(report):
    report(checks.schedule_exactness())


@pytest.mark.slow
def test_streaming_locality_equivalence(report, pinned):
    report(checks.streaming_equivalence(pinned.denoiser, pinned.vae))


@pytest.mark.slow
def test_vae_causality(report, pinned):
    report(checks.vae_causality(pinned.vae))


def test_gradient_correctness(report):
    report(checks.gradient_correctness())


def test_euler_target_identity(report):
    report(checks.euler_identity())


@pytest.mark.slow
def test_end_to_end_toy_run(report, pinned):
    report(checks.end_to_end(pinned))


@pytest.mark.slow
def test_ablation_directions(report, pinned, pinned_causal, pinned_random):
    report(checks.ablation_directions(pinned, pinned_causal, pinned_random))


@pytest.mark.slow
def test_latency_contract(report, pinned):
    report(checks.latency_contract(pinned))


def test_som_closed_form(report):
    report(checks.som_closed_form())


def test_smoothness_calibration(report):
    report(checks.smoothness_calibration())

import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dsvio.sampling import (KernelConfigurationError, Normal, ProbabilityKernel, RngStream, UniformAffine,
                            sample_batch, stream_id)

KERNEL = ProbabilityKernel([Normal(1.0, 0.5), UniformAffine(-1.0, -1.0, 1.0, 1.0)])


def test_invalid_configurations():
    with pytest.raises(KernelConfigurationError):
        Normal(0.0, 0.0)
    with pytest.raises(KernelConfigurationError):
        ProbabilityKernel([])
    k = ProbabilityKernel([UniformAffine(0.0, 1.0, 1.0, 0.0)])  # empty from t = 1 on
    k.validate(0.5)
    with pytest.raises(KernelConfigurationError):
        k.validate(2.0)
    with pytest.raises(KernelConfigurationError):
        sample_batch(k, 1.5, 10, RngStream(0), 0)
    with pytest.raises(ValueError):
        sample_batch(KERNEL, 0.0, 0, RngStream(0), 0)


def test_uniforms_are_open_interval():
    u = RngStream(3).uniforms(0, 200_000)
    assert u.min() > 0 and u.max() < 1


def test_determinism_and_prefix_property():
    s = RngStream(7, run_id=2)
    a = sample_batch(KERNEL, 0.3, 500, s, 11).samples
    b = sample_batch(KERNEL, 0.3, 500, RngStream(7, 2), 11).samples
    np.testing.assert_array_equal(a, b)
    # sample j does not depend on the batch size
    np.testing.assert_array_equal(sample_batch(KERNEL, 0.3, 20, s, 11).samples, a[:20])
    assert not np.array_equal(sample_batch(KERNEL, 0.3, 20, s, 12).samples, a[:20])
    assert not np.array_equal(sample_batch(KERNEL, 0.3, 20, RngStream(7, 3), 11).samples, a[:20])


def test_stream_id_is_stable():
    assert stream_id("trial", 0.5, 30, 1) == stream_id("trial", 0.5, 30, 1)
    assert stream_id("trial", 0.5, 30, 1) != stream_id("trial", 0.5, 30, 2)
    assert stream_id("reference", 0.1) == zlib.crc32(b"('reference', 0.1)")


@pytest.mark.parametrize("t", [0.0, 0.4, 1.0])
def test_marginals(t):
    J = 100_000
    x = sample_batch(KERNEL, t, J, RngStream(1), 5).samples
    # law of large numbers at 5 standard errors
    assert abs(x[:, 0].mean() - 1.0) < 5 * 0.5 / np.sqrt(J)
    half = 1 + t
    assert abs(x[:, 1].mean()) < 5 * (2 * half / np.sqrt(12)) / np.sqrt(J)
    assert x[:, 1].min() >= -half and x[:, 1].max() <= half
    assert stats.kstest(x[:, 0], "norm", args=(1.0, 0.5)).pvalue > 1e-3
    assert stats.kstest(x[:, 1], "uniform", args=(-half, 2 * half)).pvalue > 1e-3
    counts, _ = np.histogram(x[:, 1], bins=20, range=(-half, half))
    assert stats.chisquare(counts).pvalue > 1e-3
    assert abs(stats.pearsonr(x[:, 0], x[:, 1])[0]) < 5 / np.sqrt(J)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 63 - 1), st.integers(0, 2 ** 32 - 1), st.integers(0, 10 ** 6))
def test_any_seed_gives_finite_samples(seed, run, node):
    x = sample_batch(KERNEL, 0.5, 8, RngStream(seed, run), node).samples
    assert x.shape == (8, 2) and np.all(np.isfinite(x))
    assert np.all(np.abs(x[:, 1]) <= 1.5)

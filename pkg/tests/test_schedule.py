import logging

import pytest
from hypothesis import given, strategies as st

from c2vl.errors import ConfigError
from c2vl.schedule import AlphaSchedule, OptimizerConfig, alpha_at, lr_at, partition_batch


def test_alpha_endpoints_and_midpoint():
    sched = AlphaSchedule(150)
    assert alpha_at(0, sched) == pytest.approx(0.9, abs=1e-12)
    assert alpha_at(150, sched) == pytest.approx(0.1, abs=1e-12)
    assert alpha_at(75, sched) == pytest.approx(0.5, abs=1e-12)


def test_alpha_out_of_range_clamps_with_warning(caplog):
    sched = AlphaSchedule(10)
    with caplog.at_level(logging.WARNING):
        assert alpha_at(12, sched) == alpha_at(10, sched)
        assert alpha_at(-1, sched) == alpha_at(0, sched)
    assert "clamping" in caplog.text


def test_alpha_schedule_validation():
    with pytest.raises(ConfigError):
        AlphaSchedule(10, alpha_start=0.1, alpha_end=0.9)
    with pytest.raises(ConfigError):
        AlphaSchedule(0)


@given(st.integers(1, 500), st.floats(0, 1), st.floats(0, 1))
def test_alpha_monotone(t, a, b):
    sched = AlphaSchedule(t, max(a, b), min(a, b))
    vals = [alpha_at(e, sched) for e in range(t + 1)]
    assert all(x >= y - 1e-15 for x, y in zip(vals, vals[1:]))
    assert vals[0] == pytest.approx(max(a, b), abs=1e-9)
    assert vals[-1] == pytest.approx(min(a, b), abs=1e-9)


@pytest.mark.parametrize("size,alpha,want", [(400, 0.9, (360, 40)), (7, 1.0, (7, 0)), (5, 0.5, (2, 3)),
                                             (5, 0.0, (0, 5))])
def test_partition_examples(size, alpha, want):
    part = partition_batch(size, alpha)
    assert (part.n_intra, part.n_inter) == want
    assert part.intra == slice(0, want[0]) and part.inter == slice(want[0], size)


@given(st.integers(1, 1000), st.floats(0, 1))
def test_partition_sums(size, alpha):
    part = partition_batch(size, alpha)
    assert part.n_intra + part.n_inter == size
    assert part.n_intra >= 0 and part.n_inter >= 0
    assert (part.n_inter == 0) == (alpha == 1.0)


def test_partition_rejects_bad_input():
    with pytest.raises(ConfigError):
        partition_batch(0, 0.5)
    with pytest.raises(ConfigError):
        partition_batch(4, 1.5)


def test_lr_steps():
    cfg = OptimizerConfig()
    assert (cfg.lr, cfg.milestones, cfg.gamma, cfg.epochs, cfg.batch_size, cfg.weight_decay) == \
        (0.1, [130, 140], 0.1, 150, 400, 5e-4)
    assert lr_at(0, cfg) == pytest.approx(0.1)
    assert lr_at(129, cfg) == pytest.approx(0.1)
    assert lr_at(130, cfg) == pytest.approx(0.01)
    assert lr_at(140, cfg) == pytest.approx(0.001)


def test_lr_sequence_has_two_drops():
    cfg = OptimizerConfig()
    seq = [lr_at(e, cfg) for e in range(cfg.epochs)]
    drops = sum(1 for a, b in zip(seq, seq[1:]) if b < a)
    assert drops == 2 and all(b <= a for a, b in zip(seq, seq[1:]))


def test_optimizer_validation():
    with pytest.raises(ConfigError):
        OptimizerConfig(epochs=100).validate()
    with pytest.raises(ConfigError):
        OptimizerConfig(grad_clip=-1).validate()
    with pytest.raises(ConfigError):
        OptimizerConfig(kind="adam").validate()

"""The round loop: selection forcing, training, detection, aggregation."""
import numpy as np
import pytest

from fedsim import nn
from fedsim.aggregation import AggregatorConfig, Submission, select_participants
from fedsim.attack import AttackConfig, Attacker
from fedsim.data import (
    BackdoorSpec,
    dirichlet_partition,
    make_pixel_backdoor,
)
from fedsim.errors import ConfigError
from fedsim.rounds import (
    STREAM_SELECT,
    STREAM_TRAIN,
    DetectorConfig,
    EvalSuite,
    MetricsRecord,
    RoundConfig,
    RoundState,
    _force_include,
    backdoor_accuracy,
    run_round,
    substream,
)


@pytest.fixture(scope="module")
def world(small_blobs):
    part = dirichlet_partition(small_blobs, 10, 0.9, seed=2)
    shards = {i: part.shard(i) for i in range(10)}
    template = nn.linear_softmax(10, 4)
    suite = EvalSuite(template=template, main_test=small_blobs)
    return dict(shards=shards, template=template, suite=suite,
                g=nn.init_params(template))


def small_round_cfg(**kw) -> RoundConfig:
    base = dict(n=10, m=4, eta=2.5, epochs=1, lr=0.1, batch_size=16)
    base.update(kw)
    return RoundConfig(**base)


# --- substreams --------------------------------------------------------------


def test_substream_determinism_and_independence():
    a = substream(7, 2, 3, 4).standard_normal(5)
    b = substream(7, 2, 3, 4).standard_normal(5)
    assert np.array_equal(a, b)
    c = substream(7, 2, 3, 5).standard_normal(5)
    assert not np.array_equal(a, c)
    d = substream(8, 2, 3, 4).standard_normal(5)
    assert not np.array_equal(a, d)


# --- config validation -------------------------------------------------------


def test_round_config_validation():
    with pytest.raises(ConfigError):
        RoundConfig(n=10, m=11)
    with pytest.raises(ConfigError):
        RoundConfig(m=0)
    with pytest.raises(ConfigError):
        RoundConfig(eta=0.0)
    with pytest.raises(ConfigError):
        RoundConfig(batch_size=0)


def test_detector_config_validation():
    DetectorConfig(name="norm")
    with pytest.raises(ConfigError):
        DetectorConfig(name="oracle")


# --- selection forcing -------------------------------------------------------


def test_force_include_noop_when_present():
    assert _force_include([1, 5, 9], {5}) == [1, 5, 9]


def test_force_include_evicts_highest_benign():
    assert _force_include([1, 5, 9], {2}) == [1, 2, 5]
    assert _force_include([1, 5, 9], {2, 7}) == [1, 2, 7]


def test_force_include_keeps_already_included_controlled():
    # 9 is controlled, so 5 is the highest benign id and gets evicted
    assert _force_include([1, 5, 9], {2, 9}) == [1, 2, 9]


def test_force_include_too_many_controlled():
    with pytest.raises(ValueError):
        _force_include([1, 2], {3, 4, 5})


# --- backdoor accuracy -------------------------------------------------------


def test_backdoor_accuracy(world, small_blobs):
    model = nn.with_params(world["template"], world["g"])
    # the zero model predicts class 0 everywhere
    acc = backdoor_accuracy(model, small_blobs, 0)
    assert acc == 1.0
    assert backdoor_accuracy(model, small_blobs, 1) == 0.0
    with pytest.raises(ValueError):
        backdoor_accuracy(model, small_blobs.subset(np.array([], dtype=int)), 0)


# --- the loop ----------------------------------------------------------------


def test_run_round_all_benign_mean(world):
    """With eta = n/m the new global is exactly the mean of local models."""
    cfg = small_round_cfg(eta=10.0 / 4.0)
    state = RoundState(0, world["g"].copy(), master_seed=5)
    new_state, rec = run_round(state, world["shards"], cfg, world["suite"])
    assert new_state.t == 1
    selected = list(select_participants(10, 4, substream(5, STREAM_SELECT, 0)))
    locals_ = []
    for pid in selected:
        shard = world["shards"][pid]
        if len(shard) == 0:
            locals_.append(world["g"].values)
        else:
            p = nn.train_local(nn.with_params(world["template"], world["g"]),
                               shard, 1, 0.1, 16, substream(5, STREAM_TRAIN, 0, pid))
            locals_.append(p.values)
    assert np.allclose(new_state.global_params.values,
                       np.mean(locals_, axis=0), rtol=1e-12)
    assert not rec.attacker_present
    assert rec.gamma is None and rec.flags == ""
    assert rec.max_update_norm >= rec.median_update_norm


def test_run_round_deterministic(world):
    cfg = small_round_cfg()

    def play():
        s = RoundState(0, world["g"].copy(), master_seed=3)
        mains = []
        for _ in range(10):
            s, rec = run_round(s, world["shards"], cfg, world["suite"])
            mains.append(rec.main_acc)
        return mains, s.global_params.values

    mains_a, end_a = play()
    mains_b, end_b = play()
    assert mains_a == mains_b
    assert np.array_equal(end_a, end_b)


def test_run_round_empty_shard_submits_global(world):
    shards = dict(world["shards"])
    empty = shards[0].subset(np.array([], dtype=int))
    shards = {i: empty for i in range(10)}
    cfg = small_round_cfg()
    state = RoundState(0, world["g"].copy(), master_seed=5)
    new_state, rec = run_round(state, shards, cfg, world["suite"])
    assert np.array_equal(new_state.global_params.values, world["g"].values)
    assert rec.max_update_norm == 0.0


def make_attacker(world, controlled, **cfg_kw):
    base = dict(strategy="train_and_scale", gamma=None, alpha=1.0, epochs=5,
                lr=0.05, step_sched=(), epsilon=0.02, c=6, batch_size=32,
                train_noise=0.05, norm_bound=2.0)
    base.update(cfg_kw)
    spec = BackdoorSpec(kind="pixel_pattern", target_label=2,
                        pattern={2: 60.0, 8: -60.0}, holdout_count=3,
                        eval_augmentations=20, eval_jitter=0.05)
    blob = world["suite"].main_test
    bd_train, bd_eval, _ = make_pixel_backdoor(blob, spec, 30,
                                               np.random.default_rng(9))
    return Attacker(AttackConfig(**base), controlled, [bd_train],
                    [(bd_eval, 2)], gamma_full=10.0 / 2.5)


def test_run_round_attacker_forced_and_flagged(world):
    atk = make_attacker(world, controlled=(7,))
    suite = EvalSuite(template=world["template"], main_test=world["suite"].main_test,
                      backdoor_evals=((atk.backdoor_evals[0][0], 2),),
                      detectors=(DetectorConfig(name="norm", bound=1e-6),))
    cfg = small_round_cfg()
    state = RoundState(0, world["g"].copy(), master_seed=5)
    new_state, rec = run_round(state, world["shards"], cfg, suite, attacker=atk,
                               force_attacker=True)
    assert rec.attacker_present
    assert rec.gamma is not None
    assert len(rec.backdoor_acc) == 1
    # bound 1e-6 flags every mover, the attacker among them
    assert "norm:7" in rec.flags
    flagged = {v.participant_id for v in rec.verdicts if v.flagged}
    assert 7 in flagged


def test_run_round_exclude_all_flagged_keeps_global(world):
    suite = EvalSuite(template=world["template"],
                      main_test=world["suite"].main_test,
                      detectors=(DetectorConfig(name="norm", bound=1e-9),),
                      exclude_flagged=True)
    cfg = small_round_cfg()
    state = RoundState(0, world["g"].copy(), master_seed=5)
    new_state, rec = run_round(state, world["shards"], cfg, suite)
    # every submission moved, every one flagged, nothing left to aggregate
    assert np.array_equal(new_state.global_params.values, world["g"].values)
    assert rec.flags != ""


def test_run_round_attacker_not_selected_stays_out(world):
    # id 9 is not in the round-0 selection for seed 5 unless forced
    selected = list(select_participants(10, 4, substream(5, STREAM_SELECT, 0)))
    assert 9 not in selected
    atk = make_attacker(world, controlled=(9,))
    cfg = small_round_cfg()
    state = RoundState(0, world["g"].copy(), master_seed=5)
    _, rec = run_round(state, world["shards"], cfg, world["suite"], attacker=atk,
                       force_attacker=False)
    assert not rec.attacker_present
    assert rec.gamma is None

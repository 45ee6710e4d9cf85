import json

import numpy as np
import pandas as pd
import pytest

from auctionlab.exceptions import ConfigurationError, DomainError
from auctionlab.experiment import (
    COVARIATES,
    DATASET_COLUMNS,
    DEFAULT_ARMS,
    Dataset,
    ExperimentConfig,
    TrialSimulator,
    default_output_dir,
    derive_trial_seed,
    metadata_path,
    read_dataset,
    run_experiment,
    sample_trial_config,
    write_dataset,
)
from auctionlab.trial import TrialConfig, run_trial


def small(**kw):
    return ExperimentConfig(num_trials=kw.pop("num_trials", 6), master_seed=kw.pop("master_seed", 3),
                            max_episodes=kw.pop("max_episodes", 300), **kw)


def test_sampling_deterministic_and_seed_sensitive():
    a = [sample_trial_config(i, 7) for i in range(20)]
    b = [sample_trial_config(i, 7) for i in range(20)]
    c = [sample_trial_config(i, 8) for i in range(20)]
    assert a == b
    assert a != c
    assert len({r.seed for r in a}) == 20


def test_trial_seed_independent_of_count():
    # trial i's draws do not depend on how many trials are run
    assert sample_trial_config(4, 1) == sample_trial_config(4, 1)
    assert derive_trial_seed(1, 4) == run_experiment(small(master_seed=1)).records[4].seed


def test_covariates_come_from_arms():
    for i in range(50):
        r = sample_trial_config(i, 0)
        for name in COVARIATES:
            assert getattr(r, name) in DEFAULT_ARMS[name]


def test_degenerate_arm_fixes_covariate():
    arms = dict(DEFAULT_ARMS, design=(1, 1), N=(4, 4))
    recs = [sample_trial_config(i, 0, arms) for i in range(30)]
    assert {r.design for r in recs} == {1}
    assert {r.N for r in recs} == {4}


def test_arms_roughly_balanced():
    recs = [sample_trial_config(i, 11) for i in range(2000)]
    for name in COVARIATES:
        share = np.mean([getattr(r, name) == DEFAULT_ARMS[name][1] for r in recs])
        assert abs(share - 0.5) < 4 * np.sqrt(0.25 / 2000), name


def test_arm_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(arms={k: v for k, v in DEFAULT_ARMS.items() if k != "gamma"})
    with pytest.raises(ConfigurationError):
        ExperimentConfig(arms=dict(DEFAULT_ARMS, gamma=(0.0, 0.5, 0.9)))
    with pytest.raises(ConfigurationError):
        ExperimentConfig(num_trials=0)


def test_record_matches_direct_trial():
    ds = run_experiment(small())
    r = ds.records[2]
    direct = run_trial(r.trial_config(300)).outcomes
    assert (r.bid2val, r.vol, r.episodes) == (direct.bid2val, direct.vol, direct.episodes)
    assert isinstance(r.trial_config(), TrialConfig)


def test_roundtrip(tmp_path):
    path = tmp_path / "data.csv"
    ds = run_experiment(small(output=str(path)))
    back = read_dataset(path)
    assert back == ds
    header = path.read_text().splitlines()[0].split(",")
    assert tuple(header) == DATASET_COLUMNS
    meta = json.loads(metadata_path(path).read_text())
    assert meta["master_seed"] == 3 and meta["failures"] == {}


def test_frame_columns():
    df = run_experiment(small()).to_frame()
    assert tuple(df.columns) == DATASET_COLUMNS
    assert len(df) == 6 and df["trial"].tolist() == list(range(6))


def test_empty_dataset_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    write_dataset(Dataset([]), path)
    assert path.read_text() == ",".join(DATASET_COLUMNS) + "\n"
    assert len(read_dataset(path)) == 0


def test_failed_trial_recorded(tmp_path, monkeypatch):
    import auctionlab.experiment as ex

    real = ex.run_trial

    def flaky(cfg, *a, **k):
        if cfg.seed == derive_trial_seed(3, 1):
            raise FloatingPointError("boom")
        return real(cfg, *a, **k)

    monkeypatch.setattr(ex, "run_trial", flaky)
    path = tmp_path / "d.csv"
    ds = run_experiment(small(output=str(path)))
    assert not ds.records[1].ok and "boom" in ds.records[1].status
    assert len(ds.to_frame()) == 5
    assert len(ds.to_frame(include_failed=True)) == 6
    back = read_dataset(path)
    assert "boom" in back.records[1].status
    assert back.to_frame(include_failed=True)["bid2val"].isna().sum() == 1


def test_partial_file_on_abort(tmp_path, monkeypatch):
    path = tmp_path / "d.csv"

    def progress(done, total, elapsed):
        if done == 3:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        run_experiment(small(output=str(path)), progress=progress)
    assert not path.exists()
    partial = read_dataset(str(path) + ".partial.csv")
    assert len(partial) == 3


def test_parallel_matches_serial(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_experiment(small(output=str(a)))
    run_experiment(small(output=str(b), n_jobs=3))
    assert a.read_bytes() == b.read_bytes()


def test_read_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("trial,design\n0,1\n")
    with pytest.raises(DomainError, match="bid2val"):
        read_dataset(path)


def test_from_json_with_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"num_trials": 9, "master_seed": 5, "arms": {"N": [3, 5]}}))
    cfg = ExperimentConfig.from_json(path, master_seed=6, num_trials=None)
    assert cfg.num_trials == 9 and cfg.master_seed == 6
    assert cfg.arms["N"] == (3, 5) and cfg.arms["gamma"] == DEFAULT_ARMS["gamma"]
    path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_json(path)


def test_default_output_dir(monkeypatch):
    monkeypatch.setenv("AUCTIONLAB_OUTPUT_DIR", "/tmp/xyz")
    assert default_output_dir() == "/tmp/xyz"


def test_trial_simulator():
    X = pd.DataFrame([
        dict(design=1, N=2, alpha=0.1, gamma=0.95, egreedy=0, asynchronous=1, feedback=1,
             num_actions=6, decay=0.9999, seed=42),
        dict(design=0, N=4, alpha=0.01, gamma=0.0, egreedy=1, asynchronous=0, feedback=0,
             num_actions=11, decay=0.99995, seed=43),
    ])
    sim = TrialSimulator(max_episodes=200)
    out = sim.fit(X).transform(X)
    assert out.shape == (2, 3)
    direct = run_trial(TrialConfig(seed=42, max_episodes=200)).outcomes
    assert out[0].tolist() == [direct.bid2val, direct.vol, direct.episodes]
    assert sim.get_params()["max_episodes"] == 200
    assert list(sim.get_feature_names_out()) == ["bid2val", "vol", "episodes"]
    with pytest.raises(ConfigurationError):
        sim.fit(X.drop(columns=["gamma"]))

import time

import pytest

from cascadevae import data, metrics, trainer
from cascadevae.rng import Prng

DESK_SEEDS = (0, 1, 2, 3, 4)
ABLATION_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def mini_dataset():
    return data.generate_dataset(data.FactorSpec())


def _evaluate(state, ds, seed):
    rep = metrics.infer_representation(state.params, ds)
    surviving = metrics.prune_dims(state.params, ds)
    score = metrics.score_representation(
        rep, ds.factors, ds.cards, surviving, 800, 100, Prng(seed).child("metrics")
    ).score
    return {
        "seed": seed,
        "accuracy": metrics.cluster_accuracy(rep.discrete, ds.factors[:, 0]),
        "score": score,
        "tc": metrics.estimate_tc_gaussian(rep.continuous),
        "surviving": surviving,
    }


@pytest.fixture(scope="session")
def desk_runs(mini_dataset, tmp_path_factory):
    """Every training run the end-to-end criteria need, each done once.

    Five full-cascade seeds, three no-cascade ablation seeds (all dims at
    beta_l from iteration 0), a re-run of seed 0 for bit-determinism, and a
    checkpoint/resume split of seed 0.
    """
    ds = mini_dataset
    root = tmp_path_factory.mktemp("desk")
    results = {"cascade": [], "ablation": []}

    for seed in DESK_SEEDS:
        config = trainer.TrainConfig(seed=seed)
        ckpt = root / f"cascade{seed}.cvck"
        trace = root / f"cascade{seed}.csv"
        start = time.time()
        state = trainer.train_run(config, ds, checkpoint_path=str(ckpt), trace_path=str(trace))
        row = _evaluate(state, ds, seed)
        row["elapsed"] = time.time() - start
        row["ckpt"] = str(ckpt)
        row["trace"] = str(trace)
        results["cascade"].append(row)

    for seed in ABLATION_SEEDS:
        config = trainer.TrainConfig(seed=seed, beta_h=1.0, beta_l=1.0)
        state = trainer.train_run(config, ds)
        results["ablation"].append(_evaluate(state, ds, seed))

    # criterion 6 artifacts: identical re-run of seed 0 plus a split run
    config = trainer.TrainConfig(seed=0)
    rerun_ck, rerun_tr = root / "rerun.cvck", root / "rerun.csv"
    trainer.train_run(config, ds, checkpoint_path=str(rerun_ck), trace_path=str(rerun_tr))
    half_ck, half_tr = root / "half.cvck", root / "half.csv"
    trainer.train_run(
        config, ds, checkpoint_path=str(half_ck), trace_path=str(half_tr), stop_iter=15000
    )
    res_ck, res_tr = root / "resumed.cvck", root / "resumed.csv"
    trainer.resume_run(
        str(half_ck), config, ds, new_checkpoint_path=str(res_ck), trace_path=str(res_tr)
    )
    base = results["cascade"][0]
    full_trace = open(base["trace"], "rb").read()
    full_ckpt = open(base["ckpt"], "rb").read()
    results["determinism"] = {
        "rerun_trace_identical": open(rerun_tr, "rb").read() == full_trace,
        "rerun_ckpt_identical": open(rerun_ck, "rb").read() == full_ckpt,
        "split_trace_identical": (
            open(half_tr, "rb").read() + open(res_tr, "rb").read() == full_trace
        ),
        "split_ckpt_identical": open(res_ck, "rb").read() == full_ckpt,
    }
    return results

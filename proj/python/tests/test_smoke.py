import numpy as np
import pytest

import fedlora

SMALL = dict(seed=3, mode="flora", rounds=2, clients=3, partition="iid", batch_size=16, lr=1e-2,
             lora_targets="both", feature_dim=6, embed_dim=6, image_blocks=1, text_blocks=1,
             classes=3, per_class=40, pretrain_epochs=1, pretrain_per_class=20)


def test_table_cells():
    rows = {(t, label): (expected, computed, ok) for t, label, expected, computed, ok in fedlora.verify_tables()}
    assert rows[("transfer", "FLoRA params")][1] == "24,576"
    assert rows[("transfer", "FLoRA size")][1] == "0.094"
    assert sorted(label for (_, label), (_, _, ok) in rows.items() if not ok) == ["FedFFT size", "image r=1"]


def test_cost():
    assert fedlora.payload_bytes(24576) == 98304
    assert fedlora.format_megabytes(fedlora.comm_cost_per_round(10, 1.0, 98304)) == "1.875"


def test_count_params():
    assert fedlora.count_params(32, 32, 2, 2, 10, "flora") == 256
    assert fedlora.count_params(32, 32, 2, 2, 10, "lc") == 33 * 10


def test_synth_dataset():
    x, y = fedlora.synth_dataset(3, 4, 5, seed=2)
    assert x.shape == (15, 4)
    assert list(y[:6]) == [0, 0, 0, 0, 0, 1]
    x2, _ = fedlora.synth_dataset(3, 4, 5, seed=2)
    assert np.array_equal(x, x2)


def test_aggregate():
    out = fedlora.aggregate([{"w": np.zeros((1, 1))}, {"w": np.full((1, 1), 4.0)}], [1, 3])
    assert out["w"][0, 0] == pytest.approx(3.0, abs=1e-15)


def test_run_is_deterministic():
    a = fedlora.run(SMALL)
    b = fedlora.run(SMALL)
    assert a["metrics"] == b["metrics"]
    assert a["metrics"].count("\n") == 3
    assert a["summary"]["config_hash"] == fedlora.config_hash(SMALL)
    assert a["summary"]["rounds"] == 2


def test_errors_carry_codes():
    with pytest.raises(fedlora.Error) as info:
        fedlora.config_hash(dict(SMALL, dirichlet_beta=0))
    assert info.value.args[0] == "range"
    with pytest.raises(fedlora.Error) as info:
        fedlora.config_hash({})
    assert info.value.args[0] == "parse"

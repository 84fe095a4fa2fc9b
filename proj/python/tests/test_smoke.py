import math

import numpy as np
import pytest

import ircount as ic


def test_costs():
    assert ic.cost("sf:w1:C8-P-FC")["macs"] == 2880
    c = ic.cost("lstm:w3:C8-P-C8-L16-FC")
    assert (c["params"], c["macs"], c["size_int8"]) == (2364, 14176, 0)
    assert ic.canonical_arch("tcn:w3:C8-P-TCN8-FC") == "tcn:w3:C8-P-T8-FC"
    with pytest.raises(ic.Error):
        ic.cost("mv:w4:C8-P-FC")


def test_grids():
    assert len(ic.enumerate_family("sf")) == 80
    lstm = ic.enumerate_family("lstm", ["sf:w1:C8-P-FC", "sf:w1:C16-P-C8-FC"])
    assert len(lstm) == 32
    assert all(s.startswith("lstm:") for s in lstm)


def test_metrics():
    m = ic.evaluate([0, 1, 1, 1], [0, 1, 2, 3])
    assert m["mae"] == pytest.approx(0.75)
    assert m["mse"] == pytest.approx(1.25)
    assert m["n_test"] == 4
    mean, std = ic.aggregate_folds([0.4, 0.8], [1, 3])
    assert mean == pytest.approx(0.7)
    assert std == pytest.approx(math.sqrt(0.03))


def test_pareto():
    assert ic.pareto_front([1, 2, 3, 4], [0.5, 0.4, 0.9, 0.9]) == [0, 2]
    assert ic.pareto_front([1, 1], [0.5, 0.5], ["b", "a"]) == [1]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synthetic.csv"
    ic.write_synthetic(path, scale=0.01, seed=3)
    return path


def test_sessions(corpus):
    sessions = ic.load_sessions(corpus)
    assert [s["session_id"] for s in sessions] == [1, 2, 3, 4, 5]
    for s in sessions:
        assert s["frames"].shape == (len(s["labels"]), 8, 8)
        assert s["frames"].dtype == np.float32
        assert set(s["labels"]) <= {0, 1, 2, 3}


def test_baseline(corpus):
    r = ic.run_baseline(corpus)
    assert sorted(r["folds"]) == [2, 3, 4, 5]
    assert 0 <= r["agg"]["bal_acc"][0] <= 1
    assert ic.run_baseline(corpus) == r
    with pytest.raises(ic.Error):
        ic.run_baseline(corpus, {"alpha": "0"})


def test_train_and_explore(corpus, tmp_path):
    r = ic.train_fold(corpus, "sf:w1:C8-P-FC", 2, qat=True, max_epochs=2)
    assert r["int8"] is not None
    assert r["float"]["n_test"] == r["int8"]["n_test"]
    assert ic.train_fold(corpus, "sf:w1:C8-P-FC", 2, qat=True, max_epochs=2)["float"] == r["float"]

    out = tmp_path / "results.csv"
    records = ic.explore(corpus, ["sf"], out, quantize=False, max_epochs=1, max_specs=3)
    assert len(records) == 3
    assert all(r["status"] == "ok" and len(r["folds"]) == 4 for r in records)
    assert ic.read_results(out) == records
    files = ic.write_report(out, tmp_path / "report", "params")
    assert files["markdown"].exists()

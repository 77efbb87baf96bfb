import csv
import io
import math

import numpy as np
import pytest

from bruno import bench, netdata


def tiny_dataset():
    return netdata.generate_dataset(netdata.DatasetSpec(
        classes=2, channels=12, duration_ms=8.0, segments=2,
        samples_per_class=6, seed=4))


FAST = dict(t_steps=8, epochs=1, substeps=2, n_hidden=4, n_out=2,
            batch_size=4)


class TestBenchCell:
    def test_row_contents(self):
        row = bench.bench_cell(4, 6, "bruno", substeps=3, repeats=2)
        assert row.status == "ok"
        assert row.fwd_s > 0.0 and row.bwd_s > 0.0
        assert row.peak_nodes > 0
        assert row.peak_bytes == row.peak_nodes * 120
        assert row.size == 4 and row.t_steps == 6 and row.mode == "bruno"

    def test_vanilla_stores_more_nodes(self):
        b = bench.bench_cell(4, 6, "bruno", substeps=40, repeats=1)
        v = bench.bench_cell(4, 6, "vanilla", substeps=40, repeats=1)
        assert v.peak_nodes > 10 * b.peak_nodes

    def test_sweep_covers_grid(self):
        rows = bench.bench_sweep([2, 4], [3], ["bruno", "vanilla"],
                                 substeps=2, repeats=1)
        assert len(rows) == 4
        assert {(r.size, r.mode) for r in rows} == {
            (2, "bruno"), (2, "vanilla"), (4, "bruno"), (4, "vanilla")}

    def test_csv_parses_back(self):
        rows = bench.bench_sweep([2], [3], ["bruno"], substeps=2, repeats=1)
        text = bench.rows_to_csv(rows)
        got = list(csv.DictReader(io.StringIO(text)))
        assert len(got) == 1
        assert got[0]["mode"] == "bruno"
        assert int(got[0]["peak_nodes"]) == rows[0].peak_nodes


class TestGrid:
    def test_runs_and_summary(self):
        ds = tiny_dataset()
        runs = bench.grid_run(["lif"], [0, 3], [0, 1], ds, base_config=FAST)
        assert len(runs) == 4
        summary = bench.summarize_grid(runs)
        assert [(s["arch"], s["bits"]) for s in summary] == [("lif", 0),
                                                             ("lif", 3)]
        for s in summary:
            assert s["n"] + s["missing"] == 2

    def test_sigma_over_seeds(self):
        ds = tiny_dataset()
        runs = bench.grid_run(["lif"], [0], [0, 1, 2], ds, base_config=FAST)
        s = bench.summarize_grid(runs)[0]
        accs = [r.test_acc for r in runs]
        assert s["mean_acc"] == pytest.approx(sum(accs) / 3)
        if len(set(accs)) > 1:
            assert s["sigma"] > 0.0

    def test_progress_callback(self):
        ds = tiny_dataset()
        seen = []
        bench.grid_run(["lif"], [0], [0], ds, base_config=FAST,
                       progress=seen.append)
        assert len(seen) == 1 and seen[0].arch == "lif"

    def test_failed_runs_counted_missing(self):
        runs = [type("R", (), {"arch": "lif", "bits": 0,
                               "status": "gradient-explosion epoch=0 node=3",
                               "test_acc": float("nan")})(),
                type("R", (), {"arch": "lif", "bits": 0,
                               "status": "completed", "test_acc": 0.5})()]
        s = bench.summarize_grid(runs)[0]
        assert s["missing"] == 1 and s["n"] == 1
        assert s["mean_acc"] == 0.5

    def test_grid_csv(self):
        text = bench.grid_to_csv([{"arch": "lif", "bits": 0, "n": 2,
                                   "missing": 0, "mean_acc": 0.75,
                                   "sigma": 0.1}])
        row = list(csv.DictReader(io.StringIO(text)))[0]
        assert row["mean_acc"] == "0.75"


class TestHpo:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            bench.HpoSpec(trials=0)
        with pytest.raises(ValueError):
            bench.HpoSpec(epochs=0)

    def test_trials_logged_and_best_returned(self):
        ds = tiny_dataset()
        spec = bench.HpoSpec(arch="lif", trials=3, epochs=1, seed=2)
        best, log = bench.random_search(spec, _shrunk(ds))
        assert len(log) == 3
        assert {"trial", "config", "val_acc", "status"} <= set(log[0])
        completed = [e for e in log
                     if e["status"] == "completed"
                     and not math.isnan(e["val_acc"])]
        if completed:
            assert best == max(completed, key=lambda e: e["val_acc"])["config"]
        else:
            assert best is None

    def test_trial_seeds_differ(self):
        spec = bench.HpoSpec(arch="lif", trials=2, epochs=1, seed=0)
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(0, spawn_key=(30,))))
        a = bench._sample_trial(spec, rng)
        b = bench._sample_trial(spec, rng)
        assert a != b
        lo, hi = spec.lr_range
        for t in (a, b):
            assert lo <= t["lr"] <= hi

    def test_felif_trials_carry_threshold(self):
        rng = np.random.Generator(np.random.Philox(1))
        t = bench._sample_trial(bench.HpoSpec(arch="felif"), rng)
        assert "v_thr_out" in t and "alpha_out" not in t
        t = bench._sample_trial(bench.HpoSpec(arch="lif"), rng)
        assert "alpha_out" in t and "v_thr_out" not in t


def _shrunk(ds):
    """Framed dict splits small enough for one-epoch HPO trials."""
    return {split: netdata.framed_streams(ds.split(split), 8, 1000)
            for split in ("train", "val", "test")}

import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

from morseroads.errors import ParameterError, SegmenterError
from morseroads.pipeline import (
    PRESETS,
    Dataset,
    Pipeline,
    PipelineConfig,
    PipelineState,
    apply_preset,
    make_labels,
    mean_change,
    select_tau,
    split_dataset,
    stop_check,
)
from morseroads.segmenter import BlurSegmenter, LinearSegmenter
from morseroads.synthetic import write_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root, n=8, size=64, seed=3)
    return root


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.parent.name != "work"
            and "work" not in p.relative_to(root).parts}


class FailingAfter:
    """Segmenter wrapper that raises on the n-th predict call."""

    def __init__(self, inner, n):
        self.inner = inner
        self.n = n
        self.calls = 0

    def train(self, workdir):
        self.inner.train(workdir)

    def predict(self, workdir):
        self.calls += 1
        if self.calls == self.n:
            raise SegmenterError("simulated crash")
        self.inner.predict(workdir)


# -- pure helpers --------------------------------------------------------------


def test_split_sizes():
    parts = split_dataset([f"{i:04d}" for i in range(989)], (4, 1, 1), seed=0)
    assert [len(parts[k]) for k in ("train", "validation", "test")] == [659, 165, 165]
    small = split_dataset(list("abcdef"))
    assert [len(small[k]) for k in ("train", "validation", "test")] == [4, 1, 1]


def test_split_is_a_deterministic_partition():
    ids = [f"x{i}" for i in range(37)]
    a = split_dataset(ids, seed=5)
    b = split_dataset(list(reversed(ids)), seed=5)
    assert a == b
    merged = a["train"] + a["validation"] + a["test"]
    assert sorted(merged) == sorted(ids)
    assert split_dataset(ids, seed=6) != a


def test_split_rejects_bad_input():
    with pytest.raises(ParameterError):
        split_dataset(["a", "b"], (1, 1, 1))
    with pytest.raises(ParameterError):
        split_dataset(["a", "b"], (0, 0, 0))


def test_select_tau_dimmest_images_get_low_threshold():
    fields = {f"i{k}": np.full((2, 2), k / 10) for k in range(10)}
    taus = select_tau(fields, 0.4, 0.3, 0.4)
    assert sorted(taus.values()) == [0.3] * 4 + [0.4] * 6
    assert {k for k, t in taus.items() if t == 0.3} == {"i0", "i1", "i2", "i3"}
    assert set(select_tau(fields, 0.0, 0.3, 0.4).values()) == {0.4}
    assert set(select_tau(fields, 1.0, 0.3, 0.4).values()) == {0.3}


def test_select_tau_ties_by_id():
    fields = {k: np.zeros((2, 2)) for k in ("b", "a", "c")}
    taus = select_tau(fields, 0.34, 0.1, 0.9)
    assert taus == {"a": 0.1, "b": 0.9, "c": 0.9}


def test_make_labels_on_zero_field_is_empty():
    mask = make_labels(np.zeros((20, 30)), 0.1, 0.3, 6.5)
    assert mask.shape == (20, 30) and not mask.any()


def test_make_labels_covers_ridge():
    field = np.zeros((40, 40))
    # two peaks joined through a saddle at x=20
    field[20, 5:35] = 0.5 + 0.4 * np.abs(np.arange(5, 35) - 20) / 15
    mask = make_labels(field, 0.1, None, 2.0)
    assert mask[20, 5:35].all()
    assert not mask[:17].any()


def test_mean_change_and_stop_check():
    a = {"x": np.zeros((2, 2))}
    b = {"x": np.full((2, 2), 0.01)}
    s0 = PipelineState(0, 0.1, a, {})
    s1 = PipelineState(1, 0.1, b, {})
    s2 = PipelineState(2, 0.1, b, {})
    assert mean_change(a, b) == pytest.approx(0.01)
    assert not stop_check([])
    assert not stop_check([s0])
    assert not stop_check([s0, s1], epsilon=0.005)
    assert stop_check([s1, s2], epsilon=0.005)
    assert not stop_check([s1, s2], epsilon=0.0, iterations=5)
    assert stop_check([s0, s1], epsilon=0.0, iterations=1)


def test_config_validation_and_json_roundtrip():
    cfg = PipelineConfig(delta_schedule={"8": 0.05}, ratios=[8, 1, 1])
    assert cfg.delta_at(7) == 0.1 and cfg.delta_at(8) == 0.05
    assert PipelineConfig.from_json(cfg.to_json()) == cfg
    for bad in (dict(delta=1.5), dict(mode="full"), dict(iterations=0), dict(tip_window=8),
                dict(ratios=(1, 1)), dict(tip_low=0.9), dict(jobs=0)):
        with pytest.raises(ParameterError):
            PipelineConfig(**bad)
    with pytest.raises(ParameterError):
        PipelineConfig.from_json('{"gamma": 1}')


def test_presets():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cfg = apply_preset(PipelineConfig(), "aoi2")
    assert (cfg.delta, cfg.tau_low, cfg.tau_high) == (0.12, 0.4, 0.4)
    # the city behind these two area numbers is ambiguous
    with pytest.warns(UserWarning):
        cfg = apply_preset(PipelineConfig(), "aoi4")
    assert (cfg.tau_low, cfg.tau_high, cfg.low_fraction) == (0.3, 0.4, 0.4)
    assert set(PRESETS) == {"aoi2", "aoi3", "aoi4", "aoi5"}
    with pytest.raises(ParameterError):
        apply_preset(PipelineConfig(), "aoi9")


# -- the loop -------------------------------------------------------------------


def test_state_roundtrip(tmp_path, corpus):
    p = Pipeline(Dataset.from_dir(corpus), tmp_path / "w", PipelineConfig())
    s = p.initial_state()
    s.save(tmp_path / "s")
    back = PipelineState.load(tmp_path / "s")
    assert back.iteration == 0 and back.taus == s.taus
    for k in s.train_fields:
        assert np.array_equal(back.train_fields[k], s.train_fields[k])
    assert back.scores == s.scores
    assert {k: g for k, g in back.graphs.items()} == s.graphs


def test_identity_segmenter_is_a_fixed_point(tmp_path, corpus):
    cfg = PipelineConfig(iterations=2, epsilon=0.0)
    p = Pipeline(Dataset.from_dir(corpus), tmp_path / "w", cfg)
    last = p.run(resume=False)
    assert last[-1].iteration == 2
    for k in last[0].train_fields:
        assert np.array_equal(last[0].train_fields[k], last[1].train_fields[k])
    assert last[-1].apls == last[0].apls
    assert p.completed() == [0, 1, 2]


def test_default_epsilon_stops_unchanging_loop(tmp_path, corpus):
    p = Pipeline(Dataset.from_dir(corpus), tmp_path / "w", PipelineConfig(iterations=5))
    assert p.run()[-1].iteration == 1


def test_resume_reproduces_uninterrupted_run(tmp_path, corpus):
    ds = Dataset.from_dir(corpus)
    cfg = PipelineConfig(iterations=3, epsilon=0.0, segmenter="builtin:linear")
    Pipeline(ds, tmp_path / "a", cfg).run(resume=False)
    crashing = Pipeline(ds, tmp_path / "b", cfg, segmenter=FailingAfter(LinearSegmenter(), 2))
    with pytest.raises(SegmenterError):
        crashing.run(resume=False)
    assert crashing.completed() == [0, 1]
    Pipeline(ds, tmp_path / "b", cfg).run(resume=True)
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_resume_rejects_changed_settings(tmp_path, corpus):
    ds = Dataset.from_dir(corpus)
    Pipeline(ds, tmp_path / "w", PipelineConfig(iterations=1)).run()
    with pytest.raises(ParameterError):
        Pipeline(ds, tmp_path / "w", PipelineConfig(iterations=1, delta=0.2)).run()
    Pipeline(ds, tmp_path / "w", PipelineConfig(iterations=2, jobs=2)).run()


def test_partial_mode_keeps_ground_truth_masks(tmp_path, corpus):
    cfg = PipelineConfig(mode="partial", labeled_fraction=0.25, iterations=3, epsilon=0.0,
                         segmenter="builtin:linear")
    p = Pipeline(Dataset.from_dir(corpus), tmp_path / "w", cfg)
    p.run()
    assert len(p.labeled) == 1
    k = p.labeled[0]
    first = sorted((tmp_path / "w" / "iter_001" / "masks").glob("*.mask.pgm"))
    assert [q.name for q in first] == [f"{k}.mask.pgm"]
    blobs = {(tmp_path / "w" / f"iter_{i:03d}" / "masks" / f"{k}.mask.pgm").read_bytes()
             for i in (1, 2, 3)}
    assert len(blobs) == 1


def test_semi_mode_needs_every_reference(tmp_path, corpus):
    ds = Dataset.from_dir(corpus)
    partial = Dataset(ds.images, dict(list(ds.graphs.items())[:2]))
    with pytest.raises(ParameterError):
        Pipeline(partial, tmp_path / "w", PipelineConfig(mode="semi"))


def test_parallel_jobs_match_serial(tmp_path, corpus):
    ds = Dataset.from_dir(corpus)
    a = Pipeline(ds, tmp_path / "a", PipelineConfig(iterations=1, epsilon=0.0)).run()
    b = Pipeline(ds, tmp_path / "b", PipelineConfig(iterations=1, epsilon=0.0, jobs=3)).run()
    assert a[-1].scores == b[-1].scores


def test_failing_external_segmenter(tmp_path, corpus):
    cmd = f"{sys.executable} -c 'import sys; sys.stderr.write(\"boom\"); sys.exit(3)'"
    p = Pipeline(Dataset.from_dir(corpus), tmp_path / "w", PipelineConfig(segmenter=cmd))
    with pytest.raises(SegmenterError) as info:
        p.run()
    assert info.value.returncode == 3
    assert "boom" in info.value.stderr
    assert p.completed() == [0]


def test_external_segmenter_timeout(tmp_path, corpus):
    cmd = f"{sys.executable} -c 'import time; time.sleep(30)'"
    cfg = PipelineConfig(segmenter=cmd, timeout=0.5)
    with pytest.raises(SegmenterError, match="timed out"):
        Pipeline(Dataset.from_dir(corpus), tmp_path / "w", cfg).run()


def test_segmenter_without_output(tmp_path, corpus):
    cmd = f"{sys.executable} -c pass"
    with pytest.raises(SegmenterError, match="no output"):
        Pipeline(Dataset.from_dir(corpus), tmp_path / "w", PipelineConfig(segmenter=cmd)).run()


def test_builtin_segmenter_as_external_process(tmp_path, corpus):
    cmd = f"{sys.executable} -m morseroads.segmenter --kind blur --sigma 2"
    ds = Dataset.from_dir(corpus)
    cfg = PipelineConfig(iterations=1, epsilon=0.0)
    ext = Pipeline(ds, tmp_path / "a", PipelineConfig(iterations=1, epsilon=0.0, segmenter=cmd)).run()
    inproc = Pipeline(ds, tmp_path / "b", cfg, segmenter=BlurSegmenter(2.0)).run()
    assert ext[-1].scores == inproc[-1].scores

import numpy as np
import pytest

from cli.commands import EXIT_DATA, main
from features.augmentation import AugmentationSpec, ShiftDirection, augment_translate, random_spec
from features.balancing import balance
from features.extraction import extract_size_sequence, extract_timeseries, featurize
from features.feature_set import AUGMENTED, ORIGINAL, OVERSAMPLED, SIZESEQ, TIMESERIES, read_features, write_features
from ingest.records import Direction
from tests.conftest import make_flow
from utils.errors import ConfigurationError, DataError, EmptyClassError


def _long_flow(flow_id="f", n=45, label="Video"):
    return make_flow(flow_id, [100 + i for i in range(n)], gaps=[0.5] * n, label=label)


# =============================================================================
# EXTRACTION
# =============================================================================

def test_timeseries_signs_server_packets_and_pads():
    flow = make_flow(
        "f",
        [60, 1500, 52],
        gaps=[0.0, 0.25, 0.5],
        directions=[Direction.CLIENT_TO_SERVER, Direction.SERVER_TO_CLIENT, Direction.CLIENT_TO_SERVER],
        label="Email",
    )
    feature = extract_timeseries(flow)
    assert feature.shape == (40, 2)
    np.testing.assert_allclose(feature[:3], [[0.0, 60], [0.25, -1500], [0.75, 52]])
    assert not feature[3:].any()


def _random_flow(rng, flow_id, min_len=1, max_len=120):
    n = int(rng.integers(min_len, max_len + 1))
    sizes = rng.integers(40, 1501, size=n).tolist()
    gaps = rng.exponential(0.05, size=n).tolist()
    directions = [
        Direction.SERVER_TO_CLIENT if server else Direction.CLIENT_TO_SERVER
        for server in rng.random(n) < 0.5
    ]
    return make_flow(flow_id, sizes, gaps=gaps, directions=directions, label="Video")


def _raw_rows(flow):
    return [
        (p.relative_time, -p.size if p.direction == Direction.SERVER_TO_CLIENT else p.size)
        for p in flow.packets
    ]


@pytest.mark.parametrize("seed", range(10))
def test_random_flows_have_exact_shapes_and_signs(seed):
    rng = np.random.default_rng(seed)
    for i in range(20):
        flow = _random_flow(rng, f"r{i}")
        feature = extract_timeseries(flow)
        assert feature.shape == (40, 2)
        kept = min(len(flow.packets), 40)
        np.testing.assert_array_equal(feature[:kept], np.asarray(_raw_rows(flow)[:kept]).reshape(-1, 2))
        assert not feature[kept:].any()
        for packet, row in zip(flow.packets, feature):
            assert (row[1] < 0) == (packet.direction == Direction.SERVER_TO_CLIENT)

        sizes = extract_size_sequence(flow)
        assert sizes.shape == (256,)
        sizes_kept = min(len(flow.packets), 256)
        assert list(sizes[:sizes_kept]) == [p.size for p in flow.packets[:sizes_kept]]
        assert not sizes[sizes_kept:].any()


def test_featurize_shapes():
    flows = [_long_flow("a"), make_flow("b", [80] * 300, label="Email")]
    timeseries = featurize(flows, TIMESERIES)
    assert timeseries.values.shape == (2, 40, 2)
    assert timeseries.origins == [ORIGINAL, ORIGINAL]
    sizes = featurize(flows, SIZESEQ)
    assert sizes.values.shape == (2, 256)
    # sizes are unsigned and truncated to 256 packets
    assert (sizes.values[1] == 80).all()
    assert sizes.values[0, 44] == 144 and sizes.values[0, 45] == 0


def test_unlabeled_flows_are_rejected():
    with pytest.raises(DataError):
        featurize([make_flow("f", [100] * 40)])


def test_feature_csv_keeps_values_and_metadata(tmp_path):
    features = featurize([_long_flow("a"), _long_flow("b", label="Chat")])
    path = tmp_path / "features.csv"
    write_features(path, features)
    loaded = read_features(path)
    assert loaded.kind == TIMESERIES
    assert loaded.labels == ["Video", "Chat"]
    assert loaded.flow_ids == ["a", "b"]
    np.testing.assert_allclose(loaded.values, features.values)


def test_non_numeric_feature_cells_are_data_errors(tmp_path):
    path = tmp_path / "features.csv"
    write_features(path, featurize([_long_flow("a"), _long_flow("b", label="Chat")]))
    text = path.read_text(encoding="utf-8").splitlines()
    cells = text[2].split(",")
    cells[3] = "abc"
    text[2] = ",".join(cells)
    path.write_text("\n".join(text) + "\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_features(path)
    out = str(tmp_path / "balanced.csv")
    assert main(["balance", "--in", str(path), "--strategy", "oversample", "--out", out]) == EXIT_DATA


# =============================================================================
# AUGMENTATION
# =============================================================================

def test_left_shift_pulls_rows_and_fills_from_later_packets():
    flow = _long_flow(n=45)
    feature = extract_timeseries(flow)
    out = augment_translate(feature, flow, AugmentationSpec(3, ShiftDirection.LEFT, start_index=5))
    np.testing.assert_array_equal(out[:5], feature[:5])
    np.testing.assert_array_equal(out[5:37], feature[8:40])
    # packets 41..43 of the flow: sizes 140..142, positive for client packets
    assert list(np.abs(out[37:, 1])) == [140, 141, 142]
    assert out[37, 0] == pytest.approx(20.0)


def test_left_shift_without_source_flow_zero_fills():
    feature = extract_timeseries(_long_flow())
    out = augment_translate(feature, None, AugmentationSpec(4, "left", start_index=0))
    np.testing.assert_array_equal(out[:36], feature[4:])
    assert not out[36:].any()


def test_right_shift_repeats_the_start_row():
    feature = extract_timeseries(_long_flow())
    out = augment_translate(feature, None, AugmentationSpec(3, ShiftDirection.RIGHT, start_index=10))
    np.testing.assert_array_equal(out[:10], feature[:10])
    for row in out[10:13]:
        np.testing.assert_array_equal(row, feature[10])
    np.testing.assert_array_equal(out[13:], feature[10:37])


@pytest.mark.parametrize("seed", range(10))
def test_random_shifts_match_the_raw_flow(seed):
    rng = np.random.default_rng(100 + seed)
    for i in range(20):
        flow = _random_flow(rng, f"a{i}", min_len=40, max_len=60)
        spec = random_spec(rng, max_shift=10)
        n, s = spec.shift_steps, spec.start_index
        rows = _raw_rows(flow)
        if spec.direction == ShiftDirection.LEFT:
            expected = rows[:s] + rows[s + n : 40] + rows[40 : 40 + n]
            expected += [(0.0, 0.0)] * (40 - len(expected))
        else:
            expected = rows[:s] + [rows[s]] * n + rows[s : 40 - n]
        out = augment_translate(extract_timeseries(flow), flow, spec)
        np.testing.assert_array_equal(out, np.asarray(expected))


@pytest.mark.parametrize("seed", range(5))
def test_right_shift_then_drop_restores_the_prefix(seed):
    rng = np.random.default_rng(200 + seed)
    for i in range(20):
        feature = extract_timeseries(_random_flow(rng, f"p{i}", min_len=40, max_len=60))
        n = int(rng.integers(1, 40))
        out = augment_translate(feature, None, AugmentationSpec(n, ShiftDirection.RIGHT, start_index=0))
        np.testing.assert_array_equal(out[n:], feature[: 40 - n])


def test_shift_bounds_are_checked():
    with pytest.raises(ConfigurationError):
        AugmentationSpec(0, ShiftDirection.LEFT)
    with pytest.raises(ConfigurationError):
        AugmentationSpec(40, ShiftDirection.LEFT)
    with pytest.raises(ConfigurationError):
        AugmentationSpec(5, ShiftDirection.LEFT, start_index=36)


def test_random_spec_stays_in_range(rng):
    for _ in range(200):
        spec = random_spec(rng, max_shift=10)
        assert 1 <= spec.shift_steps <= 10
        assert 0 <= spec.start_index < 40 - spec.shift_steps


# =============================================================================
# BALANCING
# =============================================================================

def _imbalanced():
    flows = [_long_flow(f"v{i}", label="Video") for i in range(6)]
    flows += [_long_flow(f"c{i}", label="Chat") for i in range(2)]
    return flows, featurize(flows)


def test_augment_balances_and_keeps_originals():
    flows, dataset = _imbalanced()
    balanced = balance(dataset, "augment", rng_seed=1, flows={f.flow_id: f for f in flows})
    assert balanced.class_counts() == {"Video": 6, "Chat": 6}
    np.testing.assert_array_equal(balanced.values[:8], dataset.values)
    assert balanced.origins.count(AUGMENTED) == 4
    assert all(fid.startswith("c") for fid, o in zip(balanced.flow_ids, balanced.origins) if o == AUGMENTED)


def test_oversample_copies_existing_rows():
    _, dataset = _imbalanced()
    balanced = balance(dataset, "oversample", target_count=8, rng_seed=2)
    assert balanced.class_counts() == {"Video": 8, "Chat": 8}
    originals = {tuple(v.ravel()) for v in dataset.values}
    extra = [v for v, o in zip(balanced.values, balanced.origins) if o == OVERSAMPLED]
    assert len(extra) == 8
    assert all(tuple(v.ravel()) in originals for v in extra)


def test_balance_is_deterministic_for_a_seed():
    flows, dataset = _imbalanced()
    lookup = {f.flow_id: f for f in flows}
    a = balance(dataset, "augment", rng_seed=5, flows=lookup)
    b = balance(dataset, "augment", rng_seed=5, flows=lookup)
    np.testing.assert_array_equal(a.values, b.values)


def test_balance_rejects_bad_requests():
    _, dataset = _imbalanced()
    with pytest.raises(ConfigurationError):
        balance(dataset, "augment", target_count=3)
    with pytest.raises(EmptyClassError):
        balance(dataset, "oversample", class_names=["Video", "Chat", "Email"])
    with pytest.raises(ConfigurationError):
        balance(featurize(_imbalanced()[0], SIZESEQ), "augment")

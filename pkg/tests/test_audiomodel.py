import numpy as np
import pytest

from speechclf import nn
from speechclf.audiomodel import (
    AUDIO_PRESETS,
    AudioMlp,
    DimensionMismatch,
    FeatureTable,
    KNOWN_FEATURE_NAMES,
    MissingIdColumn,
    MlpConfig,
    Standardizer,
    UnknownColumn,
    load_audio_classifier,
    load_features,
    save_audio_classifier,
    save_features,
    train_audio,
    transcribed_as_test_split,
)
from speechclf.data import ClassMissing, Label
from speechclf.synth import make_audio_table

from conftest import max_grad_error


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(map(str, r)) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoadFeatures:
    def test_column_order_normalized(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        f1, f2 = KNOWN_FEATURE_NAMES[0], KNOWN_FEATURE_NAMES[1]
        write_csv(a, ["participant_id", "label", f1, f2],
                  [["p1", "healthy", 1.5, 2.5]])
        write_csv(b, [f2, "label", f1, "participant_id"],
                  [[2.5, "healthy", 1.5, "p1"]])
        ta, tb = load_features(a), load_features(b)
        assert ta.feature_names == tb.feature_names
        np.testing.assert_array_equal(ta.matrix, tb.matrix)

    def test_numeric_suffix_stripped(self, tmp_path):
        path = tmp_path / "f.csv"
        write_csv(path, ["participant_id", "label",
                         "loudness_sma3_amean_numeric"],
                  [["p1", "healthy", 3.0]])
        assert load_features(path).feature_names == ["loudness_sma3_amean"]

    def test_unknown_extra_columns_sort_after_known(self, tmp_path):
        path = tmp_path / "f.csv"
        write_csv(path, ["participant_id", "label", "zzz_custom",
                         KNOWN_FEATURE_NAMES[3], "aaa_custom"],
                  [["p1", "healthy", 1, 2, 3]])
        table = load_features(path)
        assert table.feature_names == [KNOWN_FEATURE_NAMES[3], "aaa_custom",
                                       "zzz_custom"]

    def test_missing_id_column(self, tmp_path):
        path = tmp_path / "f.csv"
        write_csv(path, ["label", "x"], [["healthy", 1.0]])
        with pytest.raises(MissingIdColumn):
            load_features(path)

    def test_explicit_names_reject_unknown(self, tmp_path):
        path = tmp_path / "f.csv"
        write_csv(path, ["participant_id", "label", "good", "bad"],
                  [["p1", "healthy", 1.0, 2.0]])
        with pytest.raises(UnknownColumn):
            load_features(path, feature_names=["good"])

    def test_declared_feature_count(self, tmp_path):
        path = tmp_path / "f.csv"
        write_csv(path, ["participant_id", "label", "a", "b"],
                  [["p1", "healthy", 1.0, 2.0]])
        assert load_features(path, feature_count=2).matrix.shape == (1, 2)
        with pytest.raises(DimensionMismatch):
            load_features(path, feature_count=94)

    def test_missing_values_become_nan(self, tmp_path):
        path = tmp_path / "f.csv"
        write_csv(path, ["participant_id", "label", "a"],
                  [["p1", "healthy", ""], ["p2", "depressed", "NaN"],
                   ["p3", "psychotic", 2.0]])
        table = load_features(path)
        assert np.isnan(table.matrix[0, 0]) and np.isnan(table.matrix[1, 0])
        assert table.matrix[2, 0] == 2.0

    def test_save_load_round_trip(self, tmp_path, rng):
        table = make_audio_table([f"p{i}" for i in range(6)],
                                 [Label(i % 3) for i in range(6)], rng,
                                 feature_count=94)
        path = tmp_path / "t.csv"
        save_features(table, path)
        loaded = load_features(path, feature_count=94)
        assert loaded.ids == table.ids
        np.testing.assert_allclose(loaded.matrix, table.matrix, rtol=0,
                                   atol=0)


class TestStandardizer:
    def test_matches_mean_std_oracle(self, rng):
        matrix = rng.normal(3.0, 2.5, (20, 94))
        std = Standardizer.fit(matrix)
        out = std.transform(matrix)
        expected = (matrix - matrix.mean(axis=0)) / matrix.std(axis=0)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_constant_column_maps_to_zero(self, rng):
        matrix = rng.normal(0, 1, (10, 3))
        matrix[:, 1] = 7.25
        out = Standardizer.fit(matrix).transform(matrix)
        np.testing.assert_array_equal(out[:, 1], 0.0)

    def test_imputation_uses_train_mean(self):
        train = np.array([[1.0], [3.0], [np.nan]])
        std = Standardizer.fit(train)
        assert std.means[0] == 2.0
        out = std.transform(np.array([[np.nan]]))
        assert out[0, 0] == 0.0  # imputed to the mean, then centered

    def test_double_standardization_differs(self, rng):
        # Guards against double-normalization bugs: on non-normal data a
        # second transform is NOT a no-op.
        matrix = rng.lognormal(1.0, 0.8, (30, 4))
        std = Standardizer.fit(matrix)
        once = std.transform(matrix)
        twice = std.transform(once)
        assert not np.allclose(once, twice)

    def test_width_check(self, rng):
        std = Standardizer.fit(rng.normal(0, 1, (5, 4)))
        with pytest.raises(DimensionMismatch):
            std.transform(np.zeros((2, 5)))

    def test_round_trip_dict(self, rng):
        std = Standardizer.fit(rng.normal(0, 1, (5, 4)))
        again = Standardizer.from_dict(std.to_dict())
        np.testing.assert_array_equal(std.means, again.means)
        np.testing.assert_array_equal(std.stds, again.stds)


class TestMlp:
    def test_layer_sizes(self):
        cfg = MlpConfig()
        assert cfg.layer_sizes == [94, 64, 16, 3]

    def test_gradcheck(self, rng):
        cfg = MlpConfig(feature_count=9, hidden=(6, 5), dropout=0.0)
        mlp = AudioMlp(cfg, seed=3)
        x = rng.normal(0, 1, (4, 9))
        y = rng.integers(0, 3, 4)
        err = max_grad_error(lambda: nn.cross_entropy(mlp(x), y),
                             mlp.parameters(), rng)
        assert err < 1e-4

    def test_zero_network_uniform(self):
        mlp = AudioMlp(MlpConfig(feature_count=4, hidden=(3, 3)), seed=0)
        for p in mlp.parameters():
            p.data[...] = 0.0
        from speechclf.nn.tensor import softmax
        out = softmax(mlp(np.zeros((1, 4)))).data
        np.testing.assert_array_equal(out[0], [1 / 3, 1 / 3, 1 / 3])

    def test_dimension_check(self):
        mlp = AudioMlp(MlpConfig(feature_count=4, hidden=(3, 3)), seed=0)
        with pytest.raises(DimensionMismatch):
            mlp(np.zeros((1, 5)))


def blob_tables(rng, n_train=60, n_test=30):
    ids = [f"p{i}" for i in range(n_train + n_test + 12)]
    labels = [Label(i % 3) for i in range(len(ids))]
    table = make_audio_table(ids, labels, rng, feature_count=94)
    train = table.subset(range(n_train))
    val = table.subset(range(n_train, n_train + 12))
    test = table.subset(range(n_train + 12, n_train + 12 + n_test))
    return train, val, test


class TestTraining:
    def test_blobs_reach_95_percent(self, rng):
        train, val, test = blob_tables(rng)
        cfg = MlpConfig(feature_count=94, hidden=(32, 16), dropout=0.1)
        train_cfg = nn.TrainConfig(batch_size=8, epochs=30, peak_lr=5e-3,
                                   seed=0)
        clf, history = train_audio(train, val, cfg, train_cfg)
        proba = clf.predict_proba(test.matrix)
        acc = (proba.argmax(axis=1) == test.label_array()).mean()
        assert acc >= 0.95

    def test_lr_zero_keeps_weights_at_init(self, rng):
        train, val, _ = blob_tables(rng, n_train=24, n_test=3)
        cfg = MlpConfig(feature_count=94, hidden=(8, 4), dropout=0.0)
        reference = AudioMlp(cfg, seed=5)
        before = {k: v.data.copy()
                  for k, v in reference.named_parameters().items()}
        train_cfg = nn.TrainConfig(batch_size=8, epochs=3, peak_lr=0.0, seed=5)
        clf, _ = train_audio(train, None, cfg, train_cfg)
        for k, v in clf.mlp.named_parameters().items():
            np.testing.assert_array_equal(v.data, before[k])

    def test_class_missing_raises(self, rng):
        train, _, _ = blob_tables(rng, n_train=24, n_test=3)
        only_two = train.subset([i for i, l in enumerate(train.labels)
                                 if l != Label.DEPRESSED])
        cfg = MlpConfig(feature_count=94, hidden=(8, 4))
        with pytest.raises(ClassMissing):
            train_audio(only_two, None, cfg, nn.TrainConfig())

    def test_repeated_predictions_identical(self, rng):
        train, val, test = blob_tables(rng, n_train=24, n_test=6)
        cfg = MlpConfig(feature_count=94, hidden=(8, 4), dropout=0.4)
        clf, _ = train_audio(train, val, cfg,
                             nn.TrainConfig(batch_size=8, epochs=2,
                                            peak_lr=1e-3, seed=2))
        a = clf.predict_proba(test.matrix)
        b = clf.predict_proba(test.matrix)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)


class TestSplitPolicy:
    def test_transcribed_ids_go_to_test(self, rng):
        ids = [f"p{i}" for i in range(40)]
        labels = [Label(i % 3) for i in range(40)]
        table = make_audio_table(ids, labels, rng, feature_count=10)
        transcribed = {f"p{i}" for i in range(0, 40, 4)}
        train, val, test = transcribed_as_test_split(table, transcribed,
                                                     val_fraction=0.2, seed=1)
        assert set(test.ids) == transcribed
        assert not (set(train.ids) | set(val.ids)) & transcribed
        assert len(train) + len(val) + len(test) == 40
        assert len(val) == round(0.2 * 30)


class TestPresetsAndCheckpoint:
    def test_default_parameters(self):
        cfg = AUDIO_PRESETS["default"]
        assert (cfg.batch_size, cfg.epochs) == (4, 10)
        assert cfg.peak_lr == pytest.approx(2.5e-2)
        assert cfg.dropout == pytest.approx(0.1)

    def test_best_parameters(self):
        cfg = AUDIO_PRESETS["best"]
        assert (cfg.batch_size, cfg.epochs) == (15, 50)
        assert cfg.peak_lr == pytest.approx(5e-7)
        assert cfg.dropout == pytest.approx(0.3)

    def test_adam_constants(self):
        for cfg in AUDIO_PRESETS.values():
            assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.95, 1e-8)

    def test_checkpoint_round_trip(self, tmp_path, rng):
        train, val, test = blob_tables(rng, n_train=24, n_test=6)
        cfg = MlpConfig(feature_count=94, hidden=(8, 4))
        clf, _ = train_audio(train, val, cfg,
                             nn.TrainConfig(batch_size=8, epochs=2,
                                            peak_lr=1e-3, seed=0))
        path = tmp_path / "audio.ckpt.json"
        save_audio_classifier(path, clf)
        loaded = load_audio_classifier(path)
        np.testing.assert_array_equal(clf.predict_proba(test.matrix),
                                      loaded.predict_proba(test.matrix))

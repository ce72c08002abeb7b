import numpy as np
import pytest

from speechclf import nn
from speechclf.data import Chunk, Label
from speechclf.synth import make_separable_chunks
from speechclf.textmodel import (
    ClassifierHead,
    EncoderConfig,
    FINE_TUNE_PRESETS,
    MlmHead,
    SequenceTooLong,
    SpecialIds,
    TextClassifier,
    TransformerEncoder,
    VocabMissingMask,
    apply_mlm_masking,
    evaluate_chunks,
    fine_tune,
    load_text_classifier,
    mlm_pretrain,
    prepare_batch,
    save_text_classifier,
)

from conftest import max_grad_error

SPECIALS = SpecialIds(bos=0, eos=1, pad=2, mask=4)
TINY = EncoderConfig(layers=2, heads=2, d_model=8, d_ff=16, max_positions=32,
                     vocab_size=23, dropout=0.0)
SMALL = EncoderConfig(layers=2, heads=4, d_model=32, d_ff=64,
                      max_positions=64, vocab_size=120, dropout=0.0)


class TestPrepareBatch:
    def test_wraps_and_pads(self):
        ids, mask = prepare_batch([[7, 8, 9], [7]], SPECIALS, 32)
        assert ids.shape == (2, 5)
        assert list(ids[0]) == [0, 7, 8, 9, 1]
        assert list(ids[1]) == [0, 7, 1, 2, 2]
        assert mask[1].tolist() == [True, True, True, False, False]

    def test_sequence_too_long(self):
        with pytest.raises(SequenceTooLong):
            prepare_batch([list(range(31))], SPECIALS, 32)


class TestMasking:
    def test_same_seed_same_masks(self):
        ids, mask = prepare_batch([list(range(5, 20))] * 4, SPECIALS, 64)
        a = apply_mlm_masking(ids, mask, SPECIALS, (5, 23),
                              np.random.Generator(np.random.PCG64(9)))
        b = apply_mlm_masking(ids, mask, SPECIALS, (5, 23),
                              np.random.Generator(np.random.PCG64(9)))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_fresh_draws_differ(self):
        ids, mask = prepare_batch([list(range(5, 20))] * 4, SPECIALS, 64)
        rng = np.random.Generator(np.random.PCG64(9))
        a = apply_mlm_masking(ids, mask, SPECIALS, (5, 23), rng)
        b = apply_mlm_masking(ids, mask, SPECIALS, (5, 23), rng)
        assert not np.array_equal(a[1], b[1])

    def test_specials_never_selected(self):
        ids, mask = prepare_batch([[5, 6, 7]] * 8, SPECIALS, 64)
        rng = np.random.Generator(np.random.PCG64(3))
        for _ in range(20):
            _, selected, _ = apply_mlm_masking(ids, mask, SPECIALS, (5, 23), rng)
            assert not selected[ids == SPECIALS.bos].any()
            assert not selected[ids == SPECIALS.eos].any()
            assert not selected[ids == SPECIALS.pad].any()

    def test_targets_are_original_tokens(self):
        ids, mask = prepare_batch([list(range(5, 21))] * 4, SPECIALS, 64)
        rng = np.random.Generator(np.random.PCG64(5))
        masked, selected, targets = apply_mlm_masking(ids, mask, SPECIALS,
                                                      (5, 23), rng)
        np.testing.assert_array_equal(targets, ids[selected])
        untouched = ~selected
        np.testing.assert_array_equal(masked[untouched], ids[untouched])

    def test_mask_requires_mask_token(self):
        ids, mask = prepare_batch([[5, 6]], SPECIALS, 64)
        no_mask = SpecialIds(bos=0, eos=1, pad=2, mask=None)
        with pytest.raises(VocabMissingMask):
            apply_mlm_masking(ids, mask, no_mask, (5, 23),
                              np.random.Generator(np.random.PCG64(0)))


class _FakeVocab:
    """Minimal stand-in exposing what mlm_pretrain needs."""

    def __init__(self, size):
        self.size = size
        self.bos_id, self.eos_id, self.pad_id, self.unk_id, self.mask_id = range(5)

    def __len__(self):
        return self.size

    def content_id_range(self):
        return 5, self.size


class TestMlmPretrain:
    def test_initial_loss_near_log_vocab(self):
        vocab = _FakeVocab(300)
        cfg = EncoderConfig(layers=2, heads=2, d_model=32, d_ff=64,
                            max_positions=32, vocab_size=300, dropout=0.0)
        rng = np.random.Generator(np.random.PCG64(0))
        seqs = [list(rng.integers(5, 300, 20)) for _ in range(16)]
        train_cfg = nn.TrainConfig(batch_size=16, epochs=1, peak_lr=0.0,
                                   lr_schedule="constant", seed=0)
        _, _, history = mlm_pretrain(seqs, vocab, cfg, train_cfg, max_steps=1)
        assert history[0] == pytest.approx(np.log(300), rel=0.05)

    def test_loss_halves_on_repetitive_corpus(self):
        vocab = _FakeVocab(80)
        cfg = EncoderConfig(layers=2, heads=2, d_model=32, d_ff=64,
                            max_positions=32, vocab_size=80, dropout=0.0)
        pattern = [5, 6, 7, 8, 9, 10, 11, 12]
        seqs = [pattern * 2 for _ in range(200)]
        train_cfg = nn.TrainConfig(batch_size=16, epochs=20, peak_lr=3e-3,
                                   warmup_steps=20, lr_schedule="linear",
                                   seed=1)
        _, _, history = mlm_pretrain(seqs, vocab, cfg, train_cfg,
                                     max_steps=200)
        assert len(history) == 200
        first = np.mean(history[:5])
        last = np.mean(history[-5:])
        assert last < 0.5 * first


def _batch_loss(clf, chunks):
    logits = clf.logits([c.token_ids for c in chunks])
    return nn.cross_entropy(logits, np.array([int(c.label) for c in chunks]))


class TestClassifier:
    def _tiny_classifier(self, seed=0):
        enc = TransformerEncoder(TINY, seed=seed)
        head = ClassifierHead(TINY, seed=seed + 1)
        return TextClassifier(enc, head, SPECIALS)

    def test_end_to_end_gradcheck(self, rng):
        clf = self._tiny_classifier()
        chunks = [Chunk("a", Label.PSYCHOTIC, [5, 6, 7, 8], 0),
                  Chunk("b", Label.HEALTHY, [9, 10, 11], 0)]
        params = clf.parameters()
        err = max_grad_error(lambda: _batch_loss(clf, chunks), params, rng,
                             samples_per_tensor=6)
        assert err < 1e-4

    def test_attention_rows_sum_to_one(self):
        clf = self._tiny_classifier()
        clf.predict_proba([[5, 6, 7, 8, 9], [5, 6]])
        for block in clf.encoder.blocks:
            np.testing.assert_allclose(block.attn.last_weights.sum(axis=-1),
                                       1.0, atol=1e-6)

    def test_pad_positions_do_not_leak_into_bos(self):
        clf = self._tiny_classifier()
        ids, mask = prepare_batch([[5, 6, 7]], SPECIALS, 32)
        padded = np.concatenate([ids, np.full((1, 4), SPECIALS.pad)], axis=1)
        pad_mask = np.concatenate([mask, np.zeros((1, 4), bool)], axis=1)
        base = clf.encoder(padded, pad_mask).data[0, 0].copy()
        junk = padded.copy()
        junk[0, -4:] = [19, 3, 22, 11]  # arbitrary tokens in masked slots
        perturbed = clf.encoder(junk, pad_mask).data[0, 0]
        np.testing.assert_allclose(perturbed, base, atol=1e-8)

    def test_zero_head_gives_uniform(self):
        clf = self._tiny_classifier()
        for p in clf.head.parameters():
            p.data[...] = 0.0
        proba = clf.predict_proba([[5, 6, 7]])
        np.testing.assert_array_equal(proba[0], [1 / 3, 1 / 3, 1 / 3])

    def test_proba_sums_to_one_and_is_deterministic(self):
        clf = self._tiny_classifier()
        a = clf.predict_proba([[5, 6, 7, 8]])
        b = clf.predict_proba([[5, 6, 7, 8]])
        np.testing.assert_array_equal(a, b)
        assert a[0].sum() == pytest.approx(1.0, abs=1e-6)

    def test_sequence_too_long_at_predict(self):
        clf = self._tiny_classifier()
        with pytest.raises(SequenceTooLong):
            clf.predict_proba([list(range(5, 5 + 31))])


class TestFineTune:
    def test_separable_fixture_reaches_full_train_accuracy(self):
        chunks = make_separable_chunks(per_class=3, tokens_per_chunk=20,
                                       seed=4, band_width=30)[:8]
        cfg = EncoderConfig(layers=2, heads=4, d_model=32, d_ff=64,
                            max_positions=64, vocab_size=120, dropout=0.0)
        encoder = TransformerEncoder(cfg, seed=0)
        head = ClassifierHead(cfg, seed=1)
        train_cfg = nn.TrainConfig(batch_size=4, epochs=30, peak_lr=3e-3,
                                   warmup_steps=10, lr_schedule="linear",
                                   seed=0)
        clf, history = fine_tune(encoder, head, chunks, [], train_cfg, SPECIALS)
        _, acc = evaluate_chunks(clf, chunks)
        assert acc == 1.0
        assert len(history) == 30

    def test_frozen_encoder_only_moves_head(self):
        chunks = make_separable_chunks(per_class=2, tokens_per_chunk=10,
                                       seed=2)[:6]
        encoder = TransformerEncoder(SMALL, seed=0)
        head = ClassifierHead(SMALL, seed=1)
        enc_before = {k: v.data.copy()
                      for k, v in encoder.named_parameters().items()}
        head_before = {k: v.data.copy()
                       for k, v in head.named_parameters().items()}
        train_cfg = nn.TrainConfig(batch_size=3, epochs=2, peak_lr=1e-3,
                                   warmup_steps=1, lr_schedule="linear", seed=0)
        fine_tune(encoder, head, chunks, [], train_cfg, SPECIALS,
                  freeze_encoder=True)
        for k, v in encoder.named_parameters().items():
            np.testing.assert_array_equal(v.data, enc_before[k])
        assert any(not np.array_equal(v.data, head_before[k])
                   for k, v in head.named_parameters().items())

    def test_best_validation_epoch_restored(self):
        chunks = make_separable_chunks(per_class=4, tokens_per_chunk=16,
                                       seed=6)
        train, val = chunks[:8], chunks[8:]
        encoder = TransformerEncoder(SMALL, seed=3)
        head = ClassifierHead(SMALL, seed=4)
        train_cfg = nn.TrainConfig(batch_size=4, epochs=6, peak_lr=2e-3,
                                   warmup_steps=5, lr_schedule="linear", seed=3)
        clf, history = fine_tune(encoder, head, train, val, train_cfg, SPECIALS)
        val_loss, _ = evaluate_chunks(clf, val)
        best = min(h.val_loss for h in history)
        assert val_loss == pytest.approx(best, abs=1e-9)


class TestPresets:
    def test_chunk505_best_run(self):
        cfg = FINE_TUNE_PRESETS["chunk505"]
        assert (cfg.batch_size, cfg.epochs) == (10, 3)
        assert cfg.peak_lr == pytest.approx(6.22e-5)
        assert cfg.warmup_steps == 373

    def test_chunk220_best_run(self):
        cfg = FINE_TUNE_PRESETS["chunk220"]
        assert (cfg.batch_size, cfg.epochs) == (9, 5)
        assert cfg.peak_lr == pytest.approx(8.42e-5)
        assert cfg.warmup_steps == 190

    def test_alternative_tokenizer_baselines(self):
        alt505 = FINE_TUNE_PRESETS["chunk505_alt"]
        assert (alt505.batch_size, alt505.epochs, alt505.warmup_steps) == (10, 3, 401)
        assert alt505.peak_lr == pytest.approx(1.19e-4)
        alt220 = FINE_TUNE_PRESETS["chunk220_alt"]
        assert (alt220.batch_size, alt220.epochs, alt220.warmup_steps) == (13, 3, 401)
        assert alt220.peak_lr == pytest.approx(6.58e-5)


class TestCheckpointing:
    def test_save_load_predictions_identical(self, tmp_path):
        cfg = SMALL
        clf = TextClassifier(TransformerEncoder(cfg, seed=7),
                             ClassifierHead(cfg, seed=8), SPECIALS)
        path = tmp_path / "clf.ckpt.json"
        save_text_classifier(path, clf)
        loaded = load_text_classifier(path)
        probe = [[5, 6, 7, 8, 9]]
        np.testing.assert_array_equal(clf.predict_proba(probe),
                                      loaded.predict_proba(probe))

    def test_resave_is_byte_identical(self, tmp_path):
        cfg = TINY
        clf = TextClassifier(TransformerEncoder(cfg, seed=7),
                             ClassifierHead(cfg, seed=8), SPECIALS)
        p1, p2 = tmp_path / "a.ckpt.json", tmp_path / "b.ckpt.json"
        save_text_classifier(p1, clf)
        save_text_classifier(p2, load_text_classifier(p1))
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.with_suffix(".bin").read_bytes() == \
            p2.with_suffix(".bin").read_bytes()

"""Command-line pipeline: one subcommand per stage.

Every stage takes explicit file inputs/outputs, honors --seed, and drops a
``*.manifest.json`` next to its primary output recording the config hash
and the sha256 of everything read and written.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from . import audiomodel, bpe, chat, cleaning, fusionmodel, manifest
from . import metrics as metrics_mod
from . import nn, predictions, sweeps, synth, textmodel
from .data import (
    Chunk,
    Label,
    LabeledTranscript,
    SchemaViolation,
    SplitSpec,
    chunk_transcript,
    load_dataset,
    save_dataset,
    stratified_split,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

CONFIG_SECTIONS = {
    "pipeline", "synth", "parse-chat", "clean-corpus", "train-tokenizer",
    "encode", "chunk", "split", "pretrain-mlm", "finetune-text",
    "train-audio", "train-fusion", "predict", "evaluate", "lr-find",
    "sweep", "report",
}

USER_ERRORS = (
    ValueError, KeyError, OSError, SchemaViolation,
    nn.CheckpointError, nn.ShapeMismatch, nn.NonFiniteValue,
    nn.StepOutOfRange, nn.NoDescentDetected,
    chat.ChatParseError, manifest.ManifestError,
    sweeps.AllTrialsFailed,
)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    raw = Path(path).read_bytes()
    if path.endswith(".json"):
        doc = json.loads(raw)
    else:
        doc = tomllib.loads(raw.decode("utf-8"))
    unknown = set(doc) - CONFIG_SECTIONS
    if unknown:
        raise ValueError(f"{path}: unknown config sections {sorted(unknown)}")
    return doc


def _apply_config(parser: argparse.ArgumentParser, section: dict,
                  global_seed) -> None:
    dests = {a.dest for a in parser._actions}
    unknown = set(section) - {k.replace("-", "_") for k in dests}
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)} "
                         f"(valid: {sorted(dests - {'help'})})")
    if global_seed is not None and "seed" in dests and "seed" not in section:
        parser.set_defaults(seed=global_seed)
    parser.set_defaults(**{k.replace("-", "_"): v for k, v in section.items()})


def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human)


def _finish(stage: str, primary_output, config: dict, inputs, outputs) -> None:
    manifest.write_manifest(stage, primary_output, config,
                            [str(p) for p in inputs],
                            [str(p) for p in outputs])


def _train_config_from_args(args, schedule: str) -> nn.TrainConfig:
    if getattr(args, "preset", None):
        presets = {**textmodel.FINE_TUNE_PRESETS, **audiomodel.AUDIO_PRESETS,
                   "fusion": fusionmodel.FUSION_PRESET}
        base = presets[args.preset].to_dict()
    else:
        base = nn.TrainConfig(lr_schedule=schedule).to_dict()
    for name, key in (("batch", "batch_size"), ("epochs", "epochs"),
                      ("lr", "peak_lr"), ("warmup", "warmup_steps"),
                      ("dropout", "dropout")):
        value = getattr(args, name, None)
        if value is not None:
            base[key] = value
    base["seed"] = args.seed
    base["lr_schedule"] = schedule
    return nn.TrainConfig.from_dict(base)


# --------------------------------------------------------------------------
# stage handlers


def cmd_synth(args) -> int:
    out = Path(args.out)
    summary = synth.generate_study(out, n_transcribed=args.participants,
                                   n_audio_only=args.audio_only,
                                   seed=args.seed,
                                   complementary=args.complementary)
    outputs = [out / "labels.csv", out / "audio_features.csv",
               out / "pretrain_corpus.txt", out / "transcribed_ids.txt"]
    outputs += sorted((out / "transcripts").glob("*.cha"))
    _finish("synth", out / "labels.csv", vars_config(args), [], outputs)
    _emit(args, summary, f"synthetic study written to {out} "
          f"({summary['participants']} participants)")
    return 0


def vars_config(args) -> dict:
    skip = {"func", "config", "json"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or callable(value):
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def cmd_parse_chat(args) -> int:
    speakers = set(args.speakers.split(",")) if args.speakers else None
    inputs = [Path(p) for p in args.inputs]
    if args.out and len(inputs) != 1:
        raise ValueError("--out requires exactly one input; use --out-dir")
    outputs = []
    for path in inputs:
        doc = chat.parse_chat(path.read_text(encoding="utf-8"))
        flat = chat.flatten(doc, speakers)
        if args.out:
            target = Path(args.out)
        else:
            out_dir = Path(args.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            target = out_dir / (path.stem + ".txt")
        target.write_text(flat, encoding="utf-8")
        outputs.append(target)
    _finish("parse-chat", outputs[0], vars_config(args), inputs, outputs)
    _emit(args, {"files": len(outputs)}, f"flattened {len(outputs)} file(s)")
    return 0


def cmd_clean_corpus(args) -> int:
    cfg = cleaning.CleanConfig(overlap_threshold=args.threshold,
                               max_words=args.max_words,
                               heldout_fraction=args.heldout,
                               seed=args.seed)
    lines = cleaning.read_lines(args.input)
    train, val, stats = cleaning.clean_corpus(lines, cfg, method=args.method)
    cleaning.write_lines(args.train, train)
    cleaning.write_lines(args.val, val)
    outputs = [Path(args.train), Path(args.val)]
    if args.stats:
        cleaning.write_stats(args.stats, stats)
        outputs.append(Path(args.stats))
    _finish("clean-corpus", outputs[0], vars_config(args),
            [Path(args.input)], outputs)
    _emit(args, stats.to_dict(),
          f"cleaned {stats.lines_in} -> {stats.after_dedup} lines "
          f"(train {stats.train_lines}, val {stats.val_lines})")
    return 0


def cmd_train_tokenizer(args) -> int:
    with cleaning.open_text(args.corpus) as fh:
        vocab = bpe.train_bpe(fh, args.vocab_size)
    bpe.save_vocab(vocab, args.out)
    _finish("train-tokenizer", args.out, vars_config(args),
            [Path(args.corpus)], [Path(args.out)])
    _emit(args, {"vocab_size": len(vocab), "merges": len(vocab.merges)},
          f"vocab of {len(vocab)} tokens ({len(vocab.merges)} merges) "
          f"-> {args.out}")
    return 0


def cmd_encode(args) -> int:
    vocab = bpe.load_vocab(args.vocab)
    inputs = [Path(p) for p in args.inputs]
    if args.out and len(inputs) != 1:
        raise ValueError("--out requires exactly one input; use --out-dir")
    outputs = []
    for path in inputs:
        encoded_lines = []
        with cleaning.open_text(path) as fh:
            for line in fh:
                ids = bpe.encode(line.rstrip("\n"), vocab,
                                 add_specials=args.add_specials)
                encoded_lines.append(" ".join(map(str, ids)))
        if args.out:
            target = Path(args.out)
        else:
            out_dir = Path(args.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            target = out_dir / (path.stem + ".ids")
        target.write_text("\n".join(encoded_lines) + "\n", encoding="utf-8")
        outputs.append(target)
    _finish("encode", outputs[0], vars_config(args),
            [Path(args.vocab), *inputs], outputs)
    _emit(args, {"files": len(outputs)}, f"encoded {len(outputs)} file(s)")
    return 0


def _read_token_file(path: Path) -> list[int]:
    ids: list[int] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            ids.extend(int(t) for t in line.split())
    return ids


def cmd_chunk(args) -> int:
    labels = synth.read_labels_csv(args.labels)
    token_files = sorted(Path(args.tokens_dir).glob("*.ids"))
    if not token_files:
        raise ValueError(f"no .ids files in {args.tokens_dir}")
    chunks: list[Chunk] = []
    skipped = []
    for path in token_files:
        pid = path.stem
        if pid not in labels:
            raise ValueError(f"{args.labels}: no label for participant {pid}")
        ids = _read_token_file(path)
        if not ids:
            skipped.append(pid)
            continue
        transcript = LabeledTranscript(pid, labels[pid], ids)
        chunks.extend(chunk_transcript(transcript, args.size, args.min_chunk))
    save_dataset(chunks, args.out)
    _finish("chunk", args.out, vars_config(args),
            [Path(args.labels), *token_files], [Path(args.out)])
    counts = Counter(c.label.to_string() for c in chunks)
    _emit(args, {"chunks": len(chunks), "per_class": dict(sorted(counts.items())),
                 "skipped_empty": skipped},
          f"{len(chunks)} chunks -> {args.out}")
    return 0


def cmd_split(args) -> int:
    samples = load_dataset(args.input)
    spec = SplitSpec(train=args.train, val=args.val, test=args.test,
                     group_by_participant=args.group_by_participant,
                     seed=args.seed)
    splits = stratified_split(samples, spec)
    prefix = Path(args.out_prefix)
    outputs = []
    for name, part in zip(("train", "val", "test"), splits):
        target = prefix.parent / f"{prefix.name}.{name}.jsonl"
        save_dataset(part, target)
        outputs.append(target)
    _finish("split", outputs[0], vars_config(args), [Path(args.input)], outputs)
    sizes = {name: len(part)
             for name, part in zip(("train", "val", "test"), splits)}
    _emit(args, sizes, "split sizes: " + ", ".join(
        f"{k}={v}" for k, v in sizes.items()))
    return 0


def cmd_pretrain_mlm(args) -> int:
    vocab = bpe.load_vocab(args.vocab)
    seqs = []
    with cleaning.open_text(args.corpus) as fh:
        for line in fh:
            if line.strip():
                seqs.append([int(t) for t in line.split()])
    cfg = textmodel.EncoderConfig(layers=args.layers, heads=args.heads,
                                  d_model=args.d_model, d_ff=args.d_ff,
                                  max_positions=args.max_positions,
                                  vocab_size=len(vocab), dropout=args.dropout)
    train_cfg = nn.TrainConfig(batch_size=args.batch, epochs=args.epochs,
                               peak_lr=args.lr, warmup_steps=args.warmup,
                               lr_schedule="linear", seed=args.seed)
    encoder, head, history = textmodel.mlm_pretrain(
        seqs, vocab, cfg, train_cfg, max_steps=args.steps)
    textmodel.save_encoder(args.out, encoder, head,
                           textmodel.SpecialIds.from_vocab(vocab))
    payload_out = Path(args.out).with_suffix(".bin")
    _finish("pretrain-mlm", args.out, vars_config(args),
            [Path(args.vocab), Path(args.corpus)],
            [Path(args.out), payload_out])
    _emit(args, {"steps": len(history), "first_loss": history[0],
                 "last_loss": history[-1]},
          f"pretrained {len(history)} steps, loss {history[0]:.3f} -> "
          f"{history[-1]:.3f}")
    return 0


def cmd_finetune_text(args) -> int:
    encoder, _, specials = textmodel.load_encoder(args.encoder)
    train_chunks = load_dataset(args.train_set)
    val_chunks = load_dataset(args.val_set) if args.val_set else []
    train_cfg = _train_config_from_args(args, "linear")
    clf, history = textmodel.fine_tune(encoder,
                                       textmodel.ClassifierHead(
                                           encoder.cfg, seed=train_cfg.seed),
                                       train_chunks, val_chunks, train_cfg,
                                       specials,
                                       freeze_encoder=args.freeze_encoder)
    textmodel.save_text_classifier(args.out, clf)
    payload_out = Path(args.out).with_suffix(".bin")
    inputs = [Path(args.encoder), Path(args.train_set)]
    if args.val_set:
        inputs.append(Path(args.val_set))
    _finish("finetune-text", args.out, vars_config(args), inputs,
            [Path(args.out), payload_out])
    last = history[-1]
    _emit(args, {"epochs": len(history), "train_loss": last.train_loss,
                 "val_loss": last.val_loss, "val_accuracy": last.val_accuracy},
          f"fine-tuned {len(history)} epochs -> {args.out}")
    return 0


def cmd_train_audio(args) -> int:
    table = audiomodel.load_features(args.features,
                                     feature_count=args.feature_count)
    if args.test_ids:
        test_ids = {line.strip() for line in
                    Path(args.test_ids).read_text(encoding="utf-8").splitlines()
                    if line.strip()}
        train_table, val_table, _ = audiomodel.transcribed_as_test_split(
            table, test_ids, val_fraction=args.val_fraction, seed=args.seed)
    else:
        rng = np.random.Generator(np.random.PCG64(args.seed))
        order = rng.permutation(len(table))
        n_val = int(round(args.val_fraction * len(table)))
        val_table = table.subset(sorted(order[:n_val]))
        train_table = table.subset(sorted(order[n_val:]))
    hidden = tuple(int(h) for h in args.hidden.split(","))
    train_cfg = _train_config_from_args(args, "constant")
    cfg = audiomodel.MlpConfig(feature_count=table.matrix.shape[1],
                               hidden=hidden,
                               dropout=train_cfg.dropout
                               if train_cfg.dropout is not None else 0.1)
    clf, history = audiomodel.train_audio(train_table, val_table, cfg, train_cfg)
    audiomodel.save_audio_classifier(args.out, clf)
    inputs = [Path(args.features)]
    if args.test_ids:
        inputs.append(Path(args.test_ids))
    _finish("train-audio", args.out, vars_config(args), inputs,
            [Path(args.out), Path(args.out).with_suffix(".bin")])
    last = history[-1]
    _emit(args, {"epochs": len(history), **{k: v for k, v in last.items()
                                            if k != "epoch"}},
          f"audio model trained ({len(history)} epochs) -> {args.out}")
    return 0


def cmd_train_fusion(args) -> int:
    _, text_records = predictions.read_predictions(args.text_preds)
    _, audio_records = predictions.read_predictions(args.audio_preds)
    text_map = predictions.chunk_probas(text_records)
    audio_map = predictions.participant_probas(audio_records)
    train_rows = fusionmodel.build_fusion_dataset(
        text_map, audio_map, load_dataset(args.train_set))
    val_rows = (fusionmodel.build_fusion_dataset(
        text_map, audio_map, load_dataset(args.val_set))
        if args.val_set else None)
    guard = (fusionmodel.FrozenGuard(
        [p for spec in args.frozen for p in (spec, Path(spec).with_suffix(".bin"))])
        if args.frozen else None)
    train_cfg = _train_config_from_args(args, "constant")
    model, history = fusionmodel.train_fusion(train_rows, val_rows, train_cfg,
                                              frozen=guard,
                                              from_log=args.from_log)
    fusionmodel.save_fusion_model(args.out, model)
    inputs = [Path(args.text_preds), Path(args.audio_preds),
              Path(args.train_set)]
    if args.val_set:
        inputs.append(Path(args.val_set))
    _finish("train-fusion", args.out, vars_config(args), inputs,
            [Path(args.out), Path(args.out).with_suffix(".bin")])
    last = history[-1]
    _emit(args, {"epochs": len(history), **{k: v for k, v in last.items()
                                            if k != "epoch"}},
          f"fusion layer trained -> {args.out}")
    return 0


def _checkpoint_kind(path: str) -> str:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return doc.get("meta", {}).get("kind", "")


def cmd_predict(args) -> int:
    kind = _checkpoint_kind(args.model)
    inputs = [Path(args.model), Path(args.model).with_suffix(".bin")]
    if kind == "text_classifier":
        if not args.chunks:
            raise ValueError("text model prediction needs --chunks")
        clf = textmodel.load_text_classifier(args.model)
        chunks = load_dataset(args.chunks)
        records = []
        for start in range(0, len(chunks), args.batch):
            batch = chunks[start:start + args.batch]
            probas = clf.predict_proba([c.token_ids for c in batch])
            for c, p in zip(batch, probas):
                records.append({"participant_id": c.participant_id,
                                "chunk_index": c.chunk_index,
                                "proba": [float(x) for x in p]})
        predictions.write_predictions(args.out, "text_predictions", records)
        inputs.append(Path(args.chunks))
    elif kind == "audio_classifier":
        if not args.features:
            raise ValueError("audio model prediction needs --features")
        clf = audiomodel.load_audio_classifier(args.model)
        table = audiomodel.load_features(args.features)
        probas = clf.predict_proba(table.matrix)
        records = [{"participant_id": pid, "proba": [float(x) for x in p]}
                   for pid, p in zip(table.ids, probas)]
        predictions.write_predictions(args.out, "audio_predictions", records)
        inputs.append(Path(args.features))
    elif kind == "fusion_model":
        if not (args.chunks and args.text_preds and args.audio_preds):
            raise ValueError(
                "fusion prediction needs --chunks, --text-preds, --audio-preds")
        model = fusionmodel.load_fusion_model(args.model)
        _, text_records = predictions.read_predictions(args.text_preds)
        _, audio_records = predictions.read_predictions(args.audio_preds)
        rows = fusionmodel.build_fusion_dataset(
            predictions.chunk_probas(text_records),
            predictions.participant_probas(audio_records),
            load_dataset(args.chunks))
        probas = model.predict_proba(rows)
        records = [{"participant_id": r.participant_id,
                    "chunk_index": r.chunk_index,
                    "proba": [float(x) for x in p]}
                   for r, p in zip(rows, probas)]
        predictions.write_predictions(args.out, "fusion_predictions", records)
        inputs += [Path(args.chunks), Path(args.text_preds),
                   Path(args.audio_preds)]
    else:
        raise ValueError(f"{args.model}: unknown checkpoint kind {kind!r}")
    _finish("predict", args.out, vars_config(args), inputs, [Path(args.out)])
    _emit(args, {"kind": kind, "records": len(records)},
          f"{len(records)} predictions -> {args.out}")
    return 0


def _truth_for(args, kind: str, records: list[dict]):
    if kind in ("text_predictions", "fusion_predictions"):
        if not args.truth:
            raise ValueError("chunk-level predictions need --truth chunks.jsonl")
        chunks = load_dataset(args.truth)
        label_of = {(c.participant_id, c.chunk_index): int(c.label)
                    for c in chunks}
        pairs = []
        for rec in records:
            key = (rec["participant_id"], int(rec["chunk_index"]))
            if key not in label_of:
                raise ValueError(f"prediction for unknown chunk {key}")
            pairs.append((int(np.argmax(rec["proba"])), label_of[key],
                          rec["participant_id"]))
        return pairs, Path(args.truth)
    if not args.labels:
        raise ValueError("participant-level predictions need --labels")
    label_of = synth.read_labels_csv(args.labels)
    pairs = []
    for rec in records:
        pid = rec["participant_id"]
        if pid not in label_of:
            raise ValueError(f"no label for participant {pid}")
        pairs.append((int(np.argmax(rec["proba"])), int(label_of[pid]), pid))
    return pairs, Path(args.labels)


def cmd_evaluate(args) -> int:
    kind, records = predictions.read_predictions(args.preds)
    pairs, truth_path = _truth_for(args, kind, records)
    if args.per_participant:
        votes: dict[str, list[int]] = {}
        truth: dict[str, int] = {}
        for pred, actual, pid in pairs:
            votes.setdefault(pid, []).append(pred)
            truth[pid] = actual
        pairs = [(Counter(v).most_common(1)[0][0], truth[pid], pid)
                 for pid, v in sorted(votes.items())]
    y_pred = [p for p, _, _ in pairs]
    y_true = [a for _, a, _ in pairs]
    cm = metrics_mod.confusion(y_pred, y_true)
    m = metrics_mod.metrics(cm)
    json_text, text = metrics_mod.render_report(
        {args.section: (cm, m)},
        metadata={"predictions": Path(args.preds).name,
                  "per_participant": bool(args.per_participant)})
    Path(args.out).write_text(json_text, encoding="utf-8")
    outputs = [Path(args.out)]
    if args.text_out:
        Path(args.text_out).write_text(text, encoding="utf-8")
        outputs.append(Path(args.text_out))
    _finish("evaluate", args.out, vars_config(args),
            [Path(args.preds), truth_path], outputs)
    _emit(args, {"accuracy": m.accuracy, "samples": cm.total},
          f"accuracy {100 * m.accuracy:.2f}% on {cm.total} samples "
          f"-> {args.out}")
    return 0


def cmd_report(args) -> int:
    sections = {}
    metadata = {"sources": [Path(p).name for p in args.inputs]}
    for path in args.inputs:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("version") != metrics_mod.REPORT_FORMAT_VERSION:
            raise ValueError(f"{path}: report version {doc.get('version')!r}")
        for name, section in doc["sections"].items():
            if name in sections:
                raise ValueError(f"duplicate section {name!r} in {path}")
            cm = metrics_mod.ConfusionMatrix(np.array(section["confusion"]))
            sections[name] = (cm, metrics_mod.metrics(cm))
    checked = None
    if args.manifest_dir:
        paths = sorted(Path(args.manifest_dir).rglob("*" +
                                                     manifest.MANIFEST_SUFFIX))
        problems = manifest.verify_chain(paths)
        checked = {"manifests": len(paths), "problems": problems}
        if problems and args.check:
            for p in problems:
                print(f"error: {p}", file=sys.stderr)
            return 2
        metadata["verified_manifests"] = len(paths)
    json_text, text = metrics_mod.render_report(sections, metadata)
    Path(args.out).write_text(json_text, encoding="utf-8")
    outputs = [Path(args.out)]
    if args.text_out:
        Path(args.text_out).write_text(text, encoding="utf-8")
        outputs.append(Path(args.text_out))
    _finish("report", args.out, vars_config(args),
            [Path(p) for p in args.inputs], outputs)
    payload = {"sections": sorted(sections)}
    if checked:
        payload["manifest_check"] = checked
    _emit(args, payload, text)
    return 0


class _AudioLrModel:
    """Adapter giving lr_range_test a loss() over a feature table."""

    def __init__(self, matrix, labels, cfg, seed):
        self.mlp = audiomodel.AudioMlp(cfg, seed=seed)
        self.matrix = matrix
        self.labels = labels

    def parameters(self):
        return self.mlp.parameters()

    def loss(self, batch):
        idx = batch
        return nn.cross_entropy(self.mlp(self.matrix[idx]), self.labels[idx])


def cmd_lr_find(args) -> int:
    if args.task != "audio":
        raise ValueError(f"unsupported lr-find task {args.task!r}")
    table = audiomodel.load_features(args.features)
    std = audiomodel.Standardizer.fit(table.matrix)
    matrix = std.transform(table.matrix)
    labels = table.label_array()
    cfg = audiomodel.MlpConfig(feature_count=matrix.shape[1],
                               hidden=tuple(int(h)
                                            for h in args.hidden.split(",")),
                               dropout=0.0)
    batches = [idx for idx in nn.minibatch_indices(len(matrix), args.batch)]
    result = nn.lr_range_test(
        lambda: _AudioLrModel(matrix, labels, cfg, args.seed),
        batches, args.lr_min, args.lr_max, epochs=args.epochs)
    payload = {"lower": result.lower, "upper": result.upper,
               "default_lr": result.default_lr}
    if args.out:
        doc = {"version": 1, **payload, "lrs": result.lrs,
               "losses": result.losses}
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n",
                                  encoding="utf-8")
        _finish("lr-find", args.out, vars_config(args),
                [Path(args.features)], [Path(args.out)])
    _emit(args, payload,
          f"usable lr range [{result.lower:.3g}, {result.upper:.3g}], "
          f"default {result.default_lr:.3g}")
    return 0


def cmd_sweep(args) -> int:
    raw = Path(args.spec).read_bytes()
    doc = (json.loads(raw) if args.spec.endswith(".json")
           else tomllib.loads(raw.decode("utf-8")))
    task = doc.pop("task", "audio")
    data = doc.pop("data", {})
    if args.trials is not None:
        doc["trial_count"] = args.trials
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = sweeps.SweepSpec.from_dict(doc)
    if task != "audio":
        raise ValueError(f"unsupported sweep task {task!r}")
    table = audiomodel.load_features(data["features"])
    if "test_ids" in data:
        test_ids = {line.strip() for line in
                    Path(data["test_ids"]).read_text(encoding="utf-8").splitlines()
                    if line.strip()}
        train_table, val_table, _ = audiomodel.transcribed_as_test_split(
            table, test_ids, val_fraction=data.get("val_fraction", 0.15),
            seed=spec.seed)
    else:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        order = rng.permutation(len(table))
        n_val = max(1, int(round(data.get("val_fraction", 0.15) * len(table))))
        val_table = table.subset(sorted(order[:n_val]))
        train_table = table.subset(sorted(order[n_val:]))

    def train_fn(config: nn.TrainConfig, index: int) -> dict:
        cfg = audiomodel.MlpConfig(
            feature_count=table.matrix.shape[1],
            dropout=config.dropout if config.dropout is not None else 0.1)
        _, history = audiomodel.train_audio(train_table, val_table, cfg, config)
        return {"val_loss": min(h["val_loss"] for h in history)}

    result = sweeps.run_sweep(spec, train_fn, ledger_dir=args.ledger_dir)
    summary = {
        "version": 1,
        "best_index": result.best_index,
        "best_val_loss": result.best_val_loss,
        "best_config": result.best_config.to_dict(),
        "trials": len(result.records),
        "failed": sum(1 for r in result.records if r.status == "failed"),
    }
    Path(args.out).write_text(json.dumps(summary, indent=2) + "\n",
                              encoding="utf-8")
    ledger_files = (sorted(Path(args.ledger_dir).glob("trial_*.json"))
                    if args.ledger_dir else [])
    _finish("sweep", args.out, vars_config(args),
            [Path(args.spec), Path(data["features"])],
            [Path(args.out), *ledger_files])
    _emit(args, summary,
          f"best trial {result.best_index} "
          f"(val loss {result.best_val_loss:.4f}) -> {args.out}")
    return 0


# --------------------------------------------------------------------------
# parser assembly


def build_parser(config: dict | None = None) -> argparse.ArgumentParser:
    config = config or {}
    global_seed = config.get("pipeline", {}).get("seed")
    parser = argparse.ArgumentParser(
        prog="speechclf",
        description="Transcript/audio/hybrid classification pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable stage summaries")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap (stages are currently single-threaded)")
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        return p

    p = stage("synth", cmd_synth, help="generate a synthetic study")
    p.add_argument("--out", required=True)
    p.add_argument("--participants", type=int, default=30)
    p.add_argument("--audio-only", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--complementary", action=argparse.BooleanOptionalAction,
                   default=True)

    p = stage("parse-chat", cmd_parse_chat, help="CHAT -> flat text")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--speakers", help="comma-separated tier codes (default: "
                                      "all participants, no interviewers)")
    p.add_argument("--out", help="output file (single input)")
    p.add_argument("--out-dir", help="output directory (any number of inputs)")
    p.set_defaults(seed=0)

    p = stage("clean-corpus", cmd_clean_corpus, help="filter + dedup + split")
    p.add_argument("input")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--stats")
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--max-words", type=int, default=2000)
    p.add_argument("--heldout", type=float, default=0.1)
    p.add_argument("--method", choices=("auto", "exact", "lsh"), default="auto")
    p.add_argument("--seed", type=int, default=0)

    p = stage("train-tokenizer", cmd_train_tokenizer, help="learn BPE merges")
    p.add_argument("corpus")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--vocab-size", type=int, default=16384)
    p.set_defaults(seed=0)

    p = stage("encode", cmd_encode, help="text -> token id lines")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.add_argument("--add-specials", action="store_true")
    p.set_defaults(seed=0)

    p = stage("chunk", cmd_chunk, help="token files -> labeled chunk dataset")
    p.add_argument("--tokens-dir", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=220)
    p.add_argument("--min-chunk", type=int, default=16)
    p.set_defaults(seed=0)

    p = stage("split", cmd_split, help="stratified train/val/test split")
    p.add_argument("input")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--train", type=float, default=0.8)
    p.add_argument("--val", type=float, default=0.1)
    p.add_argument("--test", type=float, default=0.1)
    p.add_argument("--group-by-participant",
                   action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--seed", type=int, default=0)

    p = stage("pretrain-mlm", cmd_pretrain_mlm,
              help="masked-LM pretraining on an encoded corpus")
    p.add_argument("--corpus", required=True, help="token id lines")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--d-ff", type=int, default=256)
    p.add_argument("--max-positions", type=int, default=512)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--steps", type=int, help="cap on optimizer steps")
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = stage("finetune-text", cmd_finetune_text,
              help="train the 3-way classifier head (and encoder)")
    p.add_argument("--encoder", required=True)
    p.add_argument("--train-set", required=True)
    p.add_argument("--val-set")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=sorted(textmodel.FINE_TUNE_PRESETS))
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--freeze-encoder", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = stage("train-audio", cmd_train_audio, help="train the acoustic MLP")
    p.add_argument("--features", required=True)
    p.add_argument("--test-ids", help="participants held out as the test set")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--feature-count", type=int)
    p.add_argument("--hidden", default="64,16")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=sorted(audiomodel.AUDIO_PRESETS))
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed", type=int, default=0)

    p = stage("train-fusion", cmd_train_fusion, help="train the 6->3 layer")
    p.add_argument("--train-set", required=True)
    p.add_argument("--val-set")
    p.add_argument("--text-preds", required=True)
    p.add_argument("--audio-preds", required=True)
    p.add_argument("--frozen", nargs="*", default=[],
                   help="submodel checkpoints that must stay bitwise intact")
    p.add_argument("--from-log", action="store_true",
                   help="feed log-probabilities to the fusion layer")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["fusion"])
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed", type=int, default=0)

    p = stage("predict", cmd_predict, help="write probability JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunks")
    p.add_argument("--features")
    p.add_argument("--text-preds")
    p.add_argument("--audio-preds")
    p.add_argument("--batch", type=int, default=16)
    p.set_defaults(seed=0)

    p = stage("evaluate", cmd_evaluate, help="confusion matrix and metrics")
    p.add_argument("--preds", required=True)
    p.add_argument("--truth", help="chunks JSONL for chunk-level predictions")
    p.add_argument("--labels", help="labels CSV for participant predictions")
    p.add_argument("--out", required=True)
    p.add_argument("--text-out")
    p.add_argument("--section", default="test")
    p.add_argument("--per-participant", action="store_true",
                   help="majority vote over each participant's chunks")
    p.set_defaults(seed=0)

    p = stage("lr-find", cmd_lr_find, help="LR range probe")
    p.add_argument("--task", default="audio")
    p.add_argument("--features", required=True)
    p.add_argument("--hidden", default="64,16")
    p.add_argument("--lr-min", type=float, default=1e-6)
    p.add_argument("--lr-max", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)

    p = stage("sweep", cmd_sweep, help="random hyperparameter search")
    p.add_argument("--spec", required=True, help="TOML or JSON sweep spec")
    p.add_argument("--out", required=True)
    p.add_argument("--ledger-dir")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)

    p = stage("report", cmd_report, help="merge reports, verify manifests")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--text-out")
    p.add_argument("--manifest-dir")
    p.add_argument("--check", action="store_true",
                   help="fail when the manifest chain is inconsistent")
    p.set_defaults(seed=0)

    for name, section in config.items():
        if name == "pipeline":
            continue
        choices = sub.choices
        if name in choices:
            _apply_config(choices[name], section, global_seed)
    if global_seed is not None:
        for name, sp in sub.choices.items():
            section = config.get(name, {})
            _apply_config(sp, {}, global_seed if "seed" not in section else None)

    return parser


def _extract_config_path(argv: list[str]) -> str | None:
    for i, token in enumerate(argv):
        if token == "--config":
            if i + 1 >= len(argv):
                raise ValueError("--config needs a value")
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = _load_config(_extract_config_path(argv))
        parser = build_parser(config)
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

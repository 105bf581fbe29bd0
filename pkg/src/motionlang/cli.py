"""``motionlang`` command line: prepare, train, generate, evaluate, export-contexts."""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from .config import load_config
from .dataset import MotionRecord
from .evaluation import EvalItem, bleu_by_rank, chained_relative_performance, write_reports
from .l2m import L2MModel
from .m2l import M2LModel
from .motion import apply_standardizer, pad_and_flag, prepare_motion
from .pipeline import load_prepared, prepare_dataset
from .seq2seq import load_model, save_model
from .text import MAX_SENTENCE_LEN, decode_indices, encode_sentence, normalize_sentence, tokenize
from .training import restore_state, save_training_checkpoint, train, write_loss_curve

log = logging.getLogger("motionlang")


class CliError(Exception):
    pass


# ------------------------------------------------------------ commands

def cmd_prepare(cfg, args):
    out = args.out or cfg.prepared_dir
    summary = prepare_dataset(cfg, out)
    log.info("prepared %d motions, %d annotations, vocabulary %d -> %s",
             summary["num_motions"], summary["num_annotations"], summary["vocab_size"], out)
    return out


def _model_class(kind):
    return {"m2l": M2LModel, "l2m": L2MModel}[kind]


def cmd_train(cfg, args):
    data = load_prepared(args.prepared or cfg.prepared_dir)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    kind = cfg.model
    meta = dict(vocab=data.vocab, standardizer=data.standardizer, joint_names=data.joint_names)
    if args.resume:
        loaded = load_model(args.resume, expected_kind=kind)
        model = loaded.model
        state = restore_state(model, loaded)
        # epochs may be raised on resume; everything else comes from the checkpoint
        model.config.epochs = cfg.model_config(vocab_size=len(data.vocab), joints=len(data.joint_names)).epochs
    else:
        mcfg = cfg.model_config(vocab_size=len(data.vocab), joints=len(data.joint_names))
        model = _model_class(kind)(mcfg, seed=cfg.seed)
        state = None
    train_ex = data.examples("train")
    val_ex = data.examples("validation")
    state = train(model, train_ex, val_ex, seed=cfg.seed, state=state)
    save_training_checkpoint(os.path.join(out, f"{kind}_final.ckpt"), model, state, **meta)
    if state.best_params is not None:
        best = _model_class(kind)(model.config, params=type(model.params)(state.best_params))
        save_model(os.path.join(out, f"{kind}_best.ckpt"), best,
                   training={"epoch": state.best_epoch, "val_loss": state.best_val}, **meta)
    write_loss_curve(os.path.join(out, "loss_curve.csv"), state.history)
    return out


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def _parse_motion_line(line):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        obj = None
    if not isinstance(obj, dict) or "frames" not in obj:
        raise CliError("modality mismatch: m2l checkpoints need motion JSONL input (objects with 'frames')")
    if "active" in obj:
        # generated motions carry their stop frame; keep only active rows
        keep = [row for row, a in zip(obj["frames"], obj["active"]) if a]
        obj = dict(obj, frames=keep or obj["frames"][:1])
    return MotionRecord.from_json(obj)


def _parse_text_line(line):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return line
    if isinstance(obj, dict):
        if "frames" in obj:
            raise CliError("modality mismatch: l2m checkpoints need sentence input, got motion frames")
        if "text" in obj:
            return str(obj["text"])
    if isinstance(obj, str):
        return obj
    return line


def _model_input_motion(loaded, record, factor):
    """Offset-0 downsampled, standardized, flagged model input for one record."""
    seqs = prepare_motion(record, loaded.joint_names or record.joint_names, None, factor,
                          loaded.model.config.max_motion_length)
    frames = seqs[0][1]
    if loaded.standardizer is not None:
        frames = apply_standardizer(frames, loaded.standardizer)
    return pad_and_flag(frames, frames.shape[0]).frames


def cmd_generate(cfg, args):
    loaded = load_model(args.checkpoint)
    model, vocab = loaded.model, loaded.vocab
    width = model.config.beam_width if args.width is None else args.width
    lines = _read_lines(args.input)
    out = args.out or "hypotheses.jsonl"
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    if model.kind == "m2l":
        records = [_parse_motion_line(line) for line in lines]
        with open(out, "w", encoding="utf-8") as fh:
            for rec in records:
                context = model.encode_motion(_model_input_motion(loaded, rec, cfg.downsample_factor))
                for rank, hyp in enumerate(model.beam_search(context, width=width), 1):
                    fh.write(json.dumps({"motion_id": rec.id, "rank": rank,
                                         "text": " ".join(decode_indices(vocab, hyp.indices)),
                                         "log_prob": hyp.log_prob}) + "\n")
        return out
    sentences = [_parse_text_line(line) for line in lines]
    rng = np.random.default_rng([cfg.seed, 2])
    motions_out = args.motions_out or os.path.splitext(out)[0] + "_motions.jsonl"
    with open(out, "w", encoding="utf-8") as fh, open(motions_out, "w", encoding="utf-8") as mh:
        for i, sentence in enumerate(sentences):
            tokens = tokenize(normalize_sentence(sentence))
            indices = encode_sentence(vocab, tokens[:MAX_SENTENCE_LEN - 2], model.config.max_sentence_length).indices
            context = model.encode_text(indices)
            hyps = model.beam_search(context, rng, width=width, samples=args.samples,
                                     standardizer=loaded.standardizer)
            for rank, hyp in enumerate(hyps, 1):
                fh.write(json.dumps({"sentence": sentence, "rank": rank, "log_likelihood": hyp.log_likelihood,
                                     "num_frames": int(hyp.frames.shape[0]), "truncated": hyp.truncated}) + "\n")
                frames = hyp.frames_destandardized if hyp.frames_destandardized is not None else hyp.frames
                J = frames.shape[1] - 1
                names = loaded.joint_names or [f"joint{j}" for j in range(J)]
                mh.write(json.dumps({
                    "id": f"generated_{i:05d}_r{rank}", "frame_rate_hz": 10.0, "joint_names": names,
                    "frames": frames[:, :J].tolist(), "active": frames[:, J].astype(int).tolist(),
                    "annotations": [sentence], "labels": [], "sentence": sentence, "rank": rank,
                    "log_likelihood": hyp.log_likelihood, "truncated": hyp.truncated}) + "\n")
    return out


def _motion_items(data, split):
    refs = data.references(split)
    items = []
    for rid, offset, frames in data.motions(split):
        if offset == 0:
            items.append(EvalItem(rid, frames, refs.get(rid, [])))
    return items


def _sentence_items(data, split):
    refs = data.references(split)
    return [EvalItem(t["id"], np.asarray(t["indices"]), refs[t["id"]]) for t in data.texts(split)]


def cmd_evaluate(cfg, args):
    if not args.checkpoint:
        raise CliError("evaluate needs --checkpoint (an m2l checkpoint)")
    for path in [args.checkpoint] + ([args.l2m_checkpoint] if args.l2m_checkpoint else []):
        if not os.path.exists(path):
            raise CliError(f"checkpoint not found: {path}")
    data = load_prepared(args.prepared or cfg.prepared_dir)
    m2l = load_model(args.checkpoint, expected_kind="m2l").model
    width = m2l.config.beam_width if args.width is None else args.width
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    report = bleu_by_rank(m2l, data.vocab, _motion_items(data, args.split), args.split, width)
    reports = [report]
    if args.l2m_checkpoint:
        l2m = load_model(args.l2m_checkpoint, expected_kind="l2m").model
        baseline = args.baseline
        if baseline is None:
            baseline = report.scores[1] if args.split == "train" else \
                bleu_by_rank(m2l, data.vocab, _motion_items(data, "train"), "train", 1).scores[1]
        rng = np.random.default_rng([cfg.seed, 3])
        reports = [chained_relative_performance(l2m, m2l, data.vocab, _sentence_items(data, args.split),
                                                args.split, baseline, rng, width=width, samples=args.samples)]
    write_reports(out, reports)
    return out


def _labels(data):
    return {r.id: "|".join(r.labels) for r in data.records()}


def pca_2d(values):
    """Projection on the two leading principal axes (centered, sign-fixed)."""
    x = values - values.mean(axis=0)
    if x.shape[0] < 2:
        return np.zeros((x.shape[0], 2))
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    axes = vt[:2]
    # make the largest-magnitude loading of each axis positive
    signs = np.sign(axes[np.arange(axes.shape[0]), np.argmax(np.abs(axes), axis=1)])
    proj = x @ (axes * signs[:, None]).T
    if proj.shape[1] < 2:
        proj = np.pad(proj, ((0, 0), (0, 2 - proj.shape[1])))
    return proj - proj.mean(axis=0)


def cmd_export_contexts(cfg, args):
    loaded = load_model(args.checkpoint)
    model = loaded.model
    data = load_prepared(args.prepared or cfg.prepared_dir)
    labels = _labels(data)
    if model.kind == "m2l":
        items = _motion_items(data, args.split)
        rows = [(it.key, model.encode_motion(pad_and_flag(it.data, it.data.shape[0]).frames)) for it in items]
    else:
        rows = [(t["id"], model.encode_text(np.asarray(t["indices"]))) for t in data.texts(args.split)]
    values = np.array([v for _, v in rows]).reshape(len(rows), model.config.context_dim)
    out = args.out or os.path.join(cfg.output_dir, f"contexts_{model.kind}_{args.split}.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    pca = pca_2d(values) if args.pca and len(rows) else None
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["id", "label"] + [f"c{i}" for i in range(values.shape[1])]
        w.writerow(header + (["pca1", "pca2"] if args.pca else []))
        for i, (key, _) in enumerate(rows):
            row = [key, labels.get(key, "")] + [repr(float(v)) for v in values[i]]
            if pca is not None:
                row += [repr(float(v)) for v in pca[i]]
            w.writerow(row)
    return out


# ---------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="motionlang", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory or file")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", parents=[common], help="build the prepared dataset directory")
    sp.add_argument("--dataset-root")

    sp = sub.add_parser("train", parents=[common], help="train a model on prepared data")
    sp.add_argument("--model", choices=["m2l", "l2m"])
    sp.add_argument("--prepared")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--resume", help="continue from a final checkpoint")

    sp = sub.add_parser("generate", parents=[common], help="beam-search hypotheses for new inputs")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--width", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--motions-out")

    sp = sub.add_parser("evaluate", parents=[common], help="BLEU by rank and chained relative score")
    sp.add_argument("--checkpoint", help="m2l checkpoint")
    sp.add_argument("--l2m-checkpoint")
    sp.add_argument("--prepared")
    sp.add_argument("--split", default="test", choices=["train", "validation", "test"])
    sp.add_argument("--width", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--baseline", type=float)

    sp = sub.add_parser("export-contexts", parents=[common], help="write context vectors as CSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--prepared")
    sp.add_argument("--split", default="test", choices=["train", "validation", "test"])
    sp.add_argument("--pca", action="store_true")
    return p


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "export-contexts": cmd_export_contexts}


def _effective_config(args):
    cfg = load_config(args.config)
    overrides = {"seed": args.seed, "threads": args.threads}
    if getattr(args, "dataset_root", None):
        overrides["dataset_root"] = args.dataset_root
    if getattr(args, "model", None):
        overrides["model"] = args.model
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    return cfg.with_overrides(**overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _effective_config(args)
        with threadpool_limits(limits=cfg.threads):
            result = COMMANDS[args.command](cfg, args)
    except Exception as exc:  # single machine-parsable line on any failure
        msg = str(exc).replace("\n", " ")
        print(json.dumps({"error": type(exc).__name__, "command": args.command, "message": msg}), file=sys.stderr)
        return 1
    print(json.dumps({"ok": True, "command": args.command, "output": result}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
